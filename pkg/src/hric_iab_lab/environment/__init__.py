from .environment import (EnvironmentContractError, IabEnvironment, MbsObservation, SlotStatistics,
                          StepMetricsWriter, StepOutcome, access_bandwidth, access_rate_matrix, access_rates,
                          backhaul_bandwidth, backhaul_rate, backhaul_rate_matrix, encode_state,
                          integrate_statistics, reset)
