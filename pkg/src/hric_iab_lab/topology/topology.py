#!/usr/bin/env python3
"""
Topology module for the IAB lab.
Network geometry, Gauss-Markov user mobility, sub-carrier association and the interference map.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from hric_iab_lab.channel.channel import ChannelParams

logger = logging.getLogger(__name__)


class TopologyError(Exception):
    """Custom exception for topology-related errors."""
    pass


@dataclass(frozen=True)
class MobilityParams:
    """
    Gauss-Markov mobility parameters.

    Attributes:
        memory_alpha_gm: Memory level a in [0, 1]; 1 keeps the velocity, 0 is memoryless
        mean_speed: Mean speed in m/s
        speed_stddev: Standard deviation of the velocity innovation in m/s
        mean_direction: Mean heading in radians, used when no per-user mean is given
    """
    memory_alpha_gm: float = 0.9
    mean_speed: float = 1.5
    speed_stddev: float = 0.3
    mean_direction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.memory_alpha_gm <= 1.0:
            raise TopologyError(f"memory_alpha_gm must be within [0, 1], got {self.memory_alpha_gm}")
        if self.speed_stddev < 0:
            raise TopologyError(f"speed_stddev must be >= 0, got {self.speed_stddev}")
        if self.mean_speed < 0:
            raise TopologyError(f"mean_speed must be >= 0, got {self.mean_speed}")

    @property
    def mean_velocity(self) -> np.ndarray:
        return self.mean_speed * np.array([math.cos(self.mean_direction), math.sin(self.mean_direction)])


@dataclass(frozen=True)
class NetworkConfig:
    """
    Every scenario constant of the IAB network.

    Defaults are the three-MBS, six-SBS scenario at 100 MHz, 44 dBm and alpha = 0.5.
    """
    num_mbs_M: int = 3
    num_sbs_per_mbs_N: int = 6
    users_per_sbs_K: int = 2
    total_bandwidth_W: float = 100e6
    backhaul_fraction_alpha: float = 0.5
    mbs_max_power_dbm: float = 44.0
    sbs_access_power_dbm: float = 30.0
    area_side: float = 1000.0
    channel: ChannelParams = field(default_factory=ChannelParams)
    mobility: MobilityParams = field(default_factory=MobilityParams)
    slot_duration: float = 0.2
    guidance_period_slots: int = 10
    episode_slots: int = 50
    backhaul_interference: bool = True
    access_interference: bool = True
    sbs_ring_min: float = 50.0
    sbs_ring_max: float = 150.0
    user_disc_radius: float = 40.0
    los_resample_distance: float = 10.0

    def __post_init__(self):
        for name in ("num_mbs_M", "num_sbs_per_mbs_N", "users_per_sbs_K", "guidance_period_slots", "episode_slots"):
            if int(getattr(self, name)) < 1:
                raise TopologyError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.backhaul_fraction_alpha <= 1.0:
            raise TopologyError(
                f"backhaul_fraction_alpha must be within [0, 1], got {self.backhaul_fraction_alpha}")
        if not self.total_bandwidth_W > 0:
            raise TopologyError(f"total_bandwidth_W must be > 0, got {self.total_bandwidth_W}")
        if not self.area_side > 0:
            raise TopologyError(f"area_side must be > 0, got {self.area_side}")
        if not self.slot_duration > 0:
            raise TopologyError(f"slot_duration must be > 0, got {self.slot_duration}")
        if not 0 <= self.sbs_ring_min <= self.sbs_ring_max:
            raise TopologyError(
                f"sbs_ring_min/sbs_ring_max must satisfy 0 <= min <= max, got {self.sbs_ring_min}/{self.sbs_ring_max}")
        if self.user_disc_radius < 0:
            raise TopologyError(f"user_disc_radius must be >= 0, got {self.user_disc_radius}")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.num_mbs_M, self.num_sbs_per_mbs_N, self.users_per_sbs_K

    def with_alpha(self, alpha: float) -> "NetworkConfig":
        return replace(self, backhaul_fraction_alpha=alpha)


@dataclass
class Topology:
    """
    Node positions of one network drop.

    Shapes: mbs_positions (M, 2), sbs_positions (M, N, 2), user_positions and
    user_velocities and user_mean_velocities (M, N, K, 2), subcarrier_index (M, N).
    """
    mbs_positions: np.ndarray
    sbs_positions: np.ndarray
    user_positions: np.ndarray
    user_velocities: np.ndarray
    user_mean_velocities: np.ndarray
    subcarrier_index: np.ndarray

    @property
    def shape(self) -> Tuple[int, int, int]:
        m, n, k, _ = self.user_positions.shape
        return m, n, k

    def copy(self) -> "Topology":
        return Topology(*(np.array(a, copy=True) for a in (
            self.mbs_positions, self.sbs_positions, self.user_positions,
            self.user_velocities, self.user_mean_velocities, self.subcarrier_index)))


def _mbs_grid(num_mbs: int, area_side: float) -> np.ndarray:
    cols = int(math.ceil(math.sqrt(num_mbs)))
    rows = int(math.ceil(num_mbs / cols))
    positions = []
    for idx in range(num_mbs):
        r, c = divmod(idx, cols)
        positions.append(((c + 0.5) * area_side / cols, (r + 0.5) * area_side / rows))
    return np.array(positions, dtype=float)


def _reflect(positions: np.ndarray, area_side: float) -> Tuple[np.ndarray, np.ndarray]:
    """Fold positions back into [0, area_side]; returns (positions, sign flips)."""
    period = 2.0 * area_side
    folded = np.mod(positions, period)
    mirrored = folded > area_side
    folded = np.where(mirrored, period - folded, folded)
    # odd number of wall hits reverses the direction of travel
    crossings = np.floor_divide(positions, area_side)
    flips = np.where(np.mod(crossings, 2) != 0, -1.0, 1.0)
    return folded, flips


def _uniform_disc(rng: np.random.Generator, count: Tuple[int, ...], r_min: float, r_max: float) -> np.ndarray:
    # area-uniform radius within the annulus
    radius = np.sqrt(rng.uniform(r_min ** 2, r_max ** 2, size=count))
    angle = rng.uniform(0.0, 2.0 * math.pi, size=count)
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)


def build_topology(config: NetworkConfig, seed: int) -> Topology:
    """
    Place MBSs on a grid, SBSs in a ring around their MBS and users in a disc around their SBS.

    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    m, n, k = config.shape
    mbs = _mbs_grid(m, config.area_side)
    sbs = mbs[:, None, :] + _uniform_disc(rng, (m, n), config.sbs_ring_min, config.sbs_ring_max)
    sbs, _ = _reflect(sbs, config.area_side)
    users = sbs[:, :, None, :] + _uniform_disc(rng, (m, n, k), 0.0, config.user_disc_radius)
    users, _ = _reflect(users, config.area_side)

    heading = rng.uniform(0.0, 2.0 * math.pi, size=(m, n, k))
    mean_velocity = config.mobility.mean_speed * np.stack([np.cos(heading), np.sin(heading)], axis=-1)
    subcarrier = np.tile(np.arange(n), (m, 1))

    logger.debug(f"Built topology M={m} N={n} K={k} from seed {seed}")
    return Topology(mbs_positions=mbs, sbs_positions=sbs, user_positions=users,
                    user_velocities=mean_velocity.copy(), user_mean_velocities=mean_velocity,
                    subcarrier_index=subcarrier)


def gauss_markov_step(velocity: np.ndarray, params: MobilityParams, rng: np.random.Generator,
                      mean_velocity: Optional[np.ndarray] = None) -> np.ndarray:
    """
    One Gauss-Markov velocity update per component:
    v' = a*v + (1 - a)*mu + sqrt(1 - a^2)*w, w ~ Normal(0, speed_stddev^2).

    Args:
        velocity: Array of shape (..., 2) in m/s
        mean_velocity: mu, broadcastable to velocity; defaults to params.mean_velocity
    """
    v = np.asarray(velocity, dtype=float)
    mu = params.mean_velocity if mean_velocity is None else np.asarray(mean_velocity, dtype=float)
    a = params.memory_alpha_gm
    w = rng.normal(0.0, params.speed_stddev, size=v.shape)
    return a * v + (1.0 - a) * mu + math.sqrt(1.0 - a * a) * w


def advance_users(topology: Topology, config: NetworkConfig, rng: np.random.Generator) -> Topology:
    """Apply one mobility slot to every user; infrastructure nodes do not move."""
    velocity = gauss_markov_step(topology.user_velocities, config.mobility, rng, topology.user_mean_velocities)
    moved = topology.user_positions + velocity * config.slot_duration
    positions, flips = _reflect(moved, config.area_side)
    result = topology.copy()
    result.user_positions = positions
    result.user_velocities = velocity * flips
    result.user_mean_velocities = topology.user_mean_velocities * flips
    return result


def interference_sources(m: int, n: int, topology: Topology) -> List[Tuple[int, int]]:
    """
    All (m', n') of other MBSs whose SBS shares the sub-carrier of SBS (m, n).

    Raises:
        TopologyError: If (m, n) is out of range
    """
    num_mbs, num_sbs, _ = topology.shape
    if not (0 <= m < num_mbs and 0 <= n < num_sbs):
        raise TopologyError(f"SBS index ({m}, {n}) out of range for M={num_mbs}, N={num_sbs}")
    carrier = topology.subcarrier_index[m, n]
    return [(mp, int(np_)) for mp in range(num_mbs) if mp != m
            for np_ in np.flatnonzero(topology.subcarrier_index[mp] == carrier)]


def backhaul_distances(topology: Topology) -> np.ndarray:
    """Distance from MBS i to SBS (m, n), shape (M, M, N)."""
    diff = topology.sbs_positions[None, :, :, :] - topology.mbs_positions[:, None, None, :]
    return np.linalg.norm(diff, axis=-1)


def access_distances(topology: Topology) -> np.ndarray:
    """Distance from SBS (i, n) to user (m, n, k), shape (M, M, N, K)."""
    diff = topology.user_positions[None, :, :, :, :] - topology.sbs_positions[:, None, :, None, :]
    return np.linalg.norm(diff, axis=-1)


_DUMP_COLUMNS = ["role", "m", "n", "k", "x", "y", "vx", "vy", "mvx", "mvy"]


def dump_topology(topology: Topology, path: str) -> None:
    """Write one tab-separated row per node for debugging reproducibility."""
    num_mbs, num_sbs, num_users = topology.shape
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(_DUMP_COLUMNS)
        for m in range(num_mbs):
            x, y = topology.mbs_positions[m]
            writer.writerow(["mbs", m, -1, -1, repr(float(x)), repr(float(y)), 0.0, 0.0, 0.0, 0.0])
        for m in range(num_mbs):
            for n in range(num_sbs):
                x, y = topology.sbs_positions[m, n]
                writer.writerow(["sbs", m, n, -1, repr(float(x)), repr(float(y)), 0.0, 0.0, 0.0, 0.0])
        for m in range(num_mbs):
            for n in range(num_sbs):
                for k in range(num_users):
                    x, y = topology.user_positions[m, n, k]
                    vx, vy = topology.user_velocities[m, n, k]
                    mvx, mvy = topology.user_mean_velocities[m, n, k]
                    writer.writerow(["user", m, n, k] + [repr(float(v)) for v in (x, y, vx, vy, mvx, mvy)])
    logger.info(f"Topology written to {path}")


def load_topology(path: str) -> Topology:
    """
    Read a file written by dump_topology.

    Raises:
        TopologyError: If the header or a row is malformed
    """
    with open(path, "r", newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or rows[0] != _DUMP_COLUMNS:
        raise TopologyError(f"Unexpected topology header in {path}: {rows[0] if rows else None}")
    try:
        records = [(r[0], int(r[1]), int(r[2]), int(r[3]), *map(float, r[4:])) for r in rows[1:]]
    except (ValueError, IndexError) as e:
        raise TopologyError(f"Malformed topology row in {path}: {e}")

    mbs = [r for r in records if r[0] == "mbs"]
    sbs = [r for r in records if r[0] == "sbs"]
    users = [r for r in records if r[0] == "user"]
    num_mbs = len(mbs)
    num_sbs = max((r[2] for r in sbs), default=-1) + 1
    num_users = max((r[3] for r in users), default=-1) + 1
    if num_mbs == 0 or num_sbs == 0 or num_users == 0:
        raise TopologyError(f"Topology file {path} lacks MBS, SBS or user rows")

    mbs_pos = np.zeros((num_mbs, 2))
    sbs_pos = np.zeros((num_mbs, num_sbs, 2))
    user_state = np.zeros((num_mbs, num_sbs, num_users, 6))
    for _, m, _, _, x, y, *_ in mbs:
        mbs_pos[m] = (x, y)
    for _, m, n, _, x, y, *_ in sbs:
        sbs_pos[m, n] = (x, y)
    for _, m, n, k, *values in users:
        user_state[m, n, k] = values
    return Topology(mbs_positions=mbs_pos, sbs_positions=sbs_pos,
                    user_positions=user_state[..., 0:2].copy(),
                    user_velocities=user_state[..., 2:4].copy(),
                    user_mean_velocities=user_state[..., 4:6].copy(),
                    subcarrier_index=np.tile(np.arange(num_sbs), (num_mbs, 1)))
