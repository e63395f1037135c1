#!/usr/bin/env python3
"""
Environment module for the IAB lab.

The per-MBS MDP: observations, power-allocation actions, backhaul/access rates,
min-coupled throughput and the local plus global reward.
"""

import csv
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from hric_iab_lab.channel.channel import (ChannelSnapshot, dbm_to_watts, los_probability, noise_power_watts,
                                          path_loss_gain, sample_snapshot, shannon_rate)
from hric_iab_lab.guidance.guidance import (GuidanceError, GuidanceInput, GuidancePolicy, SbsReport,
                                            simplex_violations)
from hric_iab_lab.topology.topology import (NetworkConfig, Topology, access_distances, advance_users,
                                            backhaul_distances, build_topology, interference_sources)

logger = logging.getLogger(__name__)

ACTION_TOLERANCE = 1e-6
GAIN_FLOOR = 1e-20


class EnvironmentContractError(Exception):
    """Custom exception for environment contract violations."""
    pass


@dataclass
class MbsObservation:
    """Local state of one MBS agent; every vector has length N."""
    backhaul_gains_h: np.ndarray
    user_counts_n: np.ndarray
    avg_user_rate_R: np.ndarray
    guidance_p_o: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.backhaul_gains_h, self.user_counts_n, self.avg_user_rate_R, self.guidance_p_o])


@dataclass
class StepOutcome:
    rewards: np.ndarray
    per_mbs_throughput: np.ndarray
    total_throughput: float
    next_observations: List[MbsObservation]
    per_sbs_backhaul_rate: np.ndarray
    per_sbs_access_sum: np.ndarray
    per_sbs_power_w: np.ndarray
    local_rewards: np.ndarray
    global_reward: float


@dataclass(frozen=True)
class SlotStatistics:
    """
    What the non-RT side integrates per slot.

    backhaul_gain is the mean-fading gain tensor (M, M, N); access_rate_bps is the
    mean expected per-user access rate of each SBS (M, N).
    """
    backhaul_gain: np.ndarray
    access_rate_bps: np.ndarray
    user_counts: np.ndarray


def backhaul_bandwidth(config: NetworkConfig) -> float:
    return config.total_bandwidth_W * config.backhaul_fraction_alpha / config.num_sbs_per_mbs_N


def access_bandwidth(config: NetworkConfig) -> float:
    return (config.total_bandwidth_W * (1.0 - config.backhaul_fraction_alpha)
            / (config.num_sbs_per_mbs_N * config.users_per_sbs_K))


def _interference_mask(num_mbs: int, enabled: bool) -> np.ndarray:
    if not enabled:
        return np.zeros((num_mbs, num_mbs))
    return 1.0 - np.eye(num_mbs)


def backhaul_rate_matrix(power_ratios: np.ndarray, snapshot: ChannelSnapshot, config: NetworkConfig) -> np.ndarray:
    """
    Backhaul rate of every SBS in bits/s, shape (M, N).

    MBS m' interferes with SBS (m, n) through its own SBS n (same sub-carrier).
    """
    bandwidth = backhaul_bandwidth(config)
    num_mbs = config.num_mbs_M
    if bandwidth <= 0:
        return np.zeros((num_mbs, config.num_sbs_per_mbs_N))
    powers = dbm_to_watts(config.mbs_max_power_dbm) * np.asarray(power_ratios, dtype=float)
    gain = snapshot.backhaul_gain
    diag = np.arange(num_mbs)
    signal = powers * gain[diag, diag, :]
    interference = np.einsum("in,imn,im->mn", powers, gain,
                             _interference_mask(num_mbs, config.backhaul_interference))
    return shannon_rate(bandwidth, signal, interference, noise_power_watts(bandwidth, config.channel))


def access_rate_matrix(snapshot: ChannelSnapshot, config: NetworkConfig) -> np.ndarray:
    """Access rate of every user in bits/s, shape (M, N, K); SBSs transmit with fixed power."""
    bandwidth = access_bandwidth(config)
    num_mbs = config.num_mbs_M
    if bandwidth <= 0:
        return np.zeros(config.shape)
    power = dbm_to_watts(config.sbs_access_power_dbm)
    gain = snapshot.access_gain
    diag = np.arange(num_mbs)
    signal = power * gain[diag, diag, :, :]
    interference = power * np.einsum("imnk,im->mnk", gain, _interference_mask(num_mbs, config.access_interference))
    return shannon_rate(bandwidth, signal, interference, noise_power_watts(bandwidth, config.channel))


def backhaul_rate(m: int, n: int, power_ratios: np.ndarray, snapshot: ChannelSnapshot,
                  config: NetworkConfig) -> float:
    return float(backhaul_rate_matrix(power_ratios, snapshot, config)[m, n])


def access_rates(m: int, n: int, snapshot: ChannelSnapshot, config: NetworkConfig) -> np.ndarray:
    return access_rate_matrix(snapshot, config)[m, n].copy()


def encode_state(observation: MbsObservation, config: NetworkConfig) -> np.ndarray:
    """
    Scale an observation into the network input vector of length 4N.

    Gains become (dB + 100) / 30, counts are divided by K and rates by ten times
    the per-user share of W; guidance weights pass through.
    """
    gains_db = 10.0 * np.log10(np.maximum(observation.backhaul_gains_h, GAIN_FLOOR))
    rate_scale = 10.0 * config.total_bandwidth_W / (config.num_sbs_per_mbs_N * config.users_per_sbs_K)
    return np.concatenate([
        (gains_db + 100.0) / 30.0,
        np.asarray(observation.user_counts_n, dtype=float) / config.users_per_sbs_K,
        np.asarray(observation.avg_user_rate_R, dtype=float) / rate_scale,
        np.asarray(observation.guidance_p_o, dtype=float),
    ])


def integrate_statistics(history: Sequence[SlotStatistics], topology: Topology) -> GuidanceInput:
    """Average a window of slot statistics into the guidance input grid."""
    if not history:
        raise EnvironmentContractError("observation statistics need at least one simulated slot")
    backhaul = np.mean([h.backhaul_gain for h in history], axis=0)
    rates = np.mean([h.access_rate_bps for h in history], axis=0)
    users = history[-1].user_counts
    num_mbs, num_sbs, _ = topology.shape
    rows = []
    for m in range(num_mbs):
        row = []
        for n in range(num_sbs):
            interference = tuple(((mp, np_), float(backhaul[mp, m, n]))
                                 for mp, np_ in interference_sources(m, n, topology))
            row.append(SbsReport(avg_channel_gain=float(backhaul[m, m, n]),
                                 connected_users=int(users[m, n]),
                                 avg_expected_rate_mbps=float(rates[m, n]) / 1e6,
                                 interference=interference))
        rows.append(tuple(row))
    return GuidanceInput(tuple(rows))


class IabEnvironment:
    """
    One drop of the IAB network.

    Args:
        config: Scenario constants
        seed: Seed of the dynamics generator (LoS draws, fading, mobility)
        topology_seed: Seed of the node placement; defaults to seed
        frozen_fading: If True every fading gain is exactly 1
    """

    def __init__(self, config: NetworkConfig, seed: int, topology_seed: Optional[int] = None,
                 frozen_fading: bool = False):
        self.config = config
        self.seed = seed
        self.topology_seed = seed if topology_seed is None else topology_seed
        self.frozen_fading = frozen_fading
        self._rng = np.random.default_rng(seed)
        self.slot = 0
        self.topology = build_topology(config, self.topology_seed)
        num_mbs, num_sbs, num_users = config.shape
        self._guidance = np.full((num_mbs, num_sbs), 1.0 / num_sbs)
        self._displacement = np.zeros((num_mbs, num_sbs, num_users))

        rho = config.channel.los_range_constant_rho
        self._backhaul_los = self._rng.random((num_mbs, num_mbs, num_sbs)) < los_probability(
            backhaul_distances(self.topology), rho)
        self._access_los = self._rng.random((num_mbs, num_mbs, num_sbs, num_users)) < los_probability(
            access_distances(self.topology), rho)

        self._history: List[SlotStatistics] = []
        self._refresh_channel()
        logger.info(f"Environment reset: seed={seed} topology_seed={self.topology_seed} "
                    f"M={num_mbs} N={num_sbs} K={num_users} alpha={config.backhaul_fraction_alpha}")

    @property
    def snapshot(self) -> ChannelSnapshot:
        return self._snapshot

    @property
    def observations(self) -> List[MbsObservation]:
        return self._observations

    @property
    def guidance(self) -> np.ndarray:
        return self._guidance.copy()

    @property
    def guidance_due(self) -> bool:
        return self.slot % self.config.guidance_period_slots == 0

    def _large_scale(self) -> Tuple[np.ndarray, np.ndarray]:
        params = self.config.channel
        return (path_loss_gain(backhaul_distances(self.topology), self._backhaul_los, params),
                path_loss_gain(access_distances(self.topology), self._access_los, params))

    def _refresh_channel(self):
        backhaul_ls, access_ls = self._large_scale()
        self._snapshot = sample_snapshot(backhaul_ls, self._backhaul_los, access_ls, self._access_los,
                                         self.config.channel, self._rng, frozen=self.frozen_fading)
        mean_snapshot = sample_snapshot(backhaul_ls, self._backhaul_los, access_ls, self._access_los,
                                        self.config.channel, self._rng, frozen=True)
        num_mbs, num_sbs, num_users = self.config.shape
        self._history.append(SlotStatistics(
            backhaul_gain=backhaul_ls.copy(),
            access_rate_bps=access_rate_matrix(mean_snapshot, self.config).mean(axis=-1),
            user_counts=np.full((num_mbs, num_sbs), num_users)))
        self._observations = self._observe()

    def _observe(self) -> List[MbsObservation]:
        num_mbs, num_sbs, num_users = self.config.shape
        gain = self._snapshot.backhaul_gain
        rates = access_rate_matrix(self._snapshot, self.config).mean(axis=-1)
        return [MbsObservation(backhaul_gains_h=gain[m, m, :].copy(),
                               user_counts_n=np.full(num_sbs, num_users, dtype=int),
                               avg_user_rate_R=rates[m].copy(),
                               guidance_p_o=self._guidance[m].copy())
                for m in range(num_mbs)]

    def _resample_access_los(self):
        moved = self._displacement > self.config.los_resample_distance
        if not np.any(moved):
            return
        probability = los_probability(access_distances(self.topology), self.config.channel.los_range_constant_rho)
        fresh = self._rng.random(self._access_los.shape) < probability
        self._access_los = np.where(moved[None, ...], fresh, self._access_los)
        self._displacement[moved] = 0.0

    def _advance(self):
        self.topology = advance_users(self.topology, self.config, self._rng)
        self._displacement += np.linalg.norm(self.topology.user_velocities, axis=-1) * self.config.slot_duration
        self._resample_access_los()
        self.slot += 1
        self._refresh_channel()

    def _check_actions(self, actions) -> np.ndarray:
        try:
            ratios = np.array([np.asarray(a, dtype=float) for a in actions], dtype=float)
        except (TypeError, ValueError) as e:
            raise EnvironmentContractError(f"actions must be M vectors of N ratios: {e}")
        expected = (self.config.num_mbs_M, self.config.num_sbs_per_mbs_N)
        if ratios.shape != expected:
            raise EnvironmentContractError(f"actions must have shape {expected}, got {ratios.shape}")
        problems = simplex_violations(ratios, ACTION_TOLERANCE)
        if problems:
            raise EnvironmentContractError(f"action off the simplex: {'; '.join(problems)}")
        return ratios

    def step(self, actions: Union[np.ndarray, Sequence[np.ndarray]]) -> StepOutcome:
        """
        Apply one slot of power-allocation actions.

        Rates are computed on the current snapshot; afterwards users move, fading is
        re-drawn and the next observations are emitted.

        Raises:
            EnvironmentContractError: If an action is off the simplex or mis-shaped
        """
        ratios = self._check_actions(actions)
        config = self.config
        backhaul = backhaul_rate_matrix(ratios, self._snapshot, config)
        access_sum = access_rate_matrix(self._snapshot, config).sum(axis=-1)
        per_mbs = np.minimum(backhaul, access_sum).sum(axis=1)
        total = float(per_mbs.sum())
        local = per_mbs / config.total_bandwidth_W
        global_reward = total / (config.num_mbs_M * config.total_bandwidth_W)
        power_w = dbm_to_watts(config.mbs_max_power_dbm) * ratios

        self._advance()
        return StepOutcome(rewards=local + global_reward, per_mbs_throughput=per_mbs, total_throughput=total,
                           next_observations=self._observations, per_sbs_backhaul_rate=backhaul,
                           per_sbs_access_sum=access_sum, per_sbs_power_w=power_w,
                           local_rewards=local, global_reward=global_reward)

    def install_guidance(self, policy: Union[GuidancePolicy, np.ndarray]) -> None:
        """
        Install per-MBS guidance rows; they show up in observations until replaced.

        Raises:
            EnvironmentContractError: On a wrong shape or an off-simplex row
        """
        try:
            allocation = policy.allocation if isinstance(policy, GuidancePolicy) else GuidancePolicy(policy).allocation
        except GuidanceError as e:
            raise EnvironmentContractError(f"malformed guidance policy: {e}")
        expected = (self.config.num_mbs_M, self.config.num_sbs_per_mbs_N)
        if allocation.shape != expected:
            raise EnvironmentContractError(f"guidance must have shape {expected}, got {allocation.shape}")
        self._guidance = allocation.copy()
        for m, observation in enumerate(self._observations):
            observation.guidance_p_o = self._guidance[m].copy()
        logger.debug(f"Guidance installed at slot {self.slot}")

    def observation_statistics(self, window: int) -> GuidanceInput:
        """Average the last `window` slots (mean fading) into a guidance input."""
        if window < 1:
            raise EnvironmentContractError(f"window must be >= 1, got {window}")
        return integrate_statistics(self._history[-window:], self.topology)


def reset(config: NetworkConfig, seed: int, **kwargs) -> Tuple[IabEnvironment, List[MbsObservation]]:
    env = IabEnvironment(config, seed, **kwargs)
    return env, env.observations


class StepMetricsWriter:
    """Per-step CSV stream: one row per MBS per slot. Appends to an existing file."""

    COLUMNS = ["epoch", "slot", "m", "throughput_bps", "reward", "alpha", "seed"]

    def __init__(self, path: str):
        self.path = path
        fresh = not os.path.exists(path) or os.path.getsize(path) == 0
        self._file = open(path, "a", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        if fresh:
            self._writer.writerow(self.COLUMNS)

    def write(self, epoch: int, slot: int, outcome: StepOutcome, alpha: float, seed: int) -> None:
        for m, (throughput, reward) in enumerate(zip(outcome.per_mbs_throughput, outcome.rewards)):
            self._writer.writerow([epoch, slot, m, repr(float(throughput)), repr(float(reward)),
                                   repr(float(alpha)), seed])

    def close(self):
        if self._file and not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
