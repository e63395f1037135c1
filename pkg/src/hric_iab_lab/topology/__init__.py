from .topology import (MobilityParams, NetworkConfig, Topology, TopologyError, access_distances, advance_users,
                       backhaul_distances, build_topology, dump_topology, gauss_markov_step, interference_sources,
                       load_topology)
