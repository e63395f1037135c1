#!/usr/bin/env python3
"""
Trainer module for the IAB lab.

Three-phase guided training (guided exploration, blending, self-directed), the
DLN/DCN/EPA baselines, and noise-free evaluation.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hric_iab_lab.agent.ddpg import AgentConfig, DdpgAgent
from hric_iab_lab.environment.environment import IabEnvironment, StepMetricsWriter, encode_state
from hric_iab_lab.guidance.client import LlmEndpointConfig
from hric_iab_lab.guidance.guidance import (EndpointProvider, GuidanceAuditLog, GuidanceProvider, GuidanceWorker,
                                            HeuristicProvider, ValidationBounds, guidance_with_fallback)
from hric_iab_lab.topology.topology import NetworkConfig

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-6
PROJECTION_FLOOR = 1e-9

METHODS = ("hric", "hric-w0", "hric-w0.9", "dln", "dcn", "epa")
GUIDED_METHODS = ("hric", "hric-w0", "hric-w0.9")
FIXED_BLENDING = {"hric-w0": 0.0, "hric-w0.9": 0.9}


class TrainerContractError(Exception):
    """Custom exception for trainer contract violations."""
    pass


class Phase(Enum):
    GUIDED = "guided"
    BLENDING = "blending"
    SELF_DIRECTED = "self-directed"


@dataclass(frozen=True)
class PhaseSchedule:
    """
    Epoch budget of the three training phases plus blending and noise endpoints.

    Attributes:
        phase1_epochs: Guided exploration around the guidance policy
        phase2_epochs: Blending, w decays from w_start to w_end
        phase3_epochs: Self-directed, actions come from the actor alone
        noise_sigma_start: Exploration sigma at epoch 0 (ratio scale)
        noise_sigma_end: Exploration sigma at the end of its decay
    """
    phase1_epochs: int = 100
    phase2_epochs: int = 250
    phase3_epochs: int = 150
    w_start: float = 1.0
    w_end: float = 0.0
    noise_sigma_start: float = 0.15
    noise_sigma_end: float = 0.0

    def __post_init__(self):
        for name in ("phase1_epochs", "phase2_epochs", "phase3_epochs"):
            if getattr(self, name) < 0:
                raise TrainerContractError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.total_epochs < 1:
            raise TrainerContractError("schedule must contain at least one epoch")
        if not 0.0 <= self.w_end <= self.w_start <= 1.0:
            raise TrainerContractError(f"need 0 <= w_end <= w_start <= 1, got {self.w_end}/{self.w_start}")
        if self.noise_sigma_start < 0 or self.noise_sigma_end < 0:
            raise TrainerContractError("noise sigmas must be >= 0")

    @property
    def total_epochs(self) -> int:
        return self.phase1_epochs + self.phase2_epochs + self.phase3_epochs

    @classmethod
    def from_total(cls, total_epochs: int, **kwargs) -> "PhaseSchedule":
        """Split total_epochs 20/50/30 across the phases."""
        phase1 = int(round(0.2 * total_epochs))
        phase2 = int(round(0.5 * total_epochs))
        return cls(phase1_epochs=phase1, phase2_epochs=phase2,
                   phase3_epochs=max(total_epochs - phase1 - phase2, 0), **kwargs)

    def phase_of(self, epoch: int) -> Phase:
        if epoch < self.phase1_epochs:
            return Phase.GUIDED
        if epoch < self.phase1_epochs + self.phase2_epochs:
            return Phase.BLENDING
        return Phase.SELF_DIRECTED


@dataclass(frozen=True)
class GuidanceSettings:
    """
    Where guidance comes from and how often it is refreshed.

    statistics_window defaults to the guidance period; asynchronous runs the
    pipeline on a worker thread and installs results at the next slot boundary.
    """
    provider: str = "heuristic"
    endpoint: LlmEndpointConfig = field(default_factory=LlmEndpointConfig)
    bounds: ValidationBounds = field(default_factory=ValidationBounds)
    statistics_window: Optional[int] = None
    asynchronous: bool = False

    def __post_init__(self):
        if self.provider not in ("heuristic", "endpoint"):
            raise TrainerContractError(f"provider must be 'heuristic' or 'endpoint', got {self.provider!r}")
        if self.statistics_window is not None and self.statistics_window < 1:
            raise TrainerContractError(f"statistics_window must be >= 1, got {self.statistics_window}")

    def create_provider(self) -> GuidanceProvider:
        if self.provider == "endpoint":
            return EndpointProvider(self.endpoint)
        return HeuristicProvider()


@dataclass(frozen=True)
class TrainingConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    schedule: PhaseSchedule = field(default_factory=PhaseSchedule)
    guidance: GuidanceSettings = field(default_factory=GuidanceSettings)
    redraw_topology: bool = True


@dataclass
class EpochRecord:
    epoch: int
    phase: Phase
    w: float
    sigma: float
    total_throughput: float
    per_mbs_reward: np.ndarray
    fallback_used: bool
    fallback_count: int = 0


@dataclass
class TrainingRun:
    method: str
    seed: int
    records: List[EpochRecord]
    agents: List[DdpgAgent]


@dataclass
class SlotLog:
    episode: int
    slot: int
    backhaul_rate: np.ndarray
    access_sum: np.ndarray
    total_throughput: float


@dataclass
class EvaluationResult:
    mean_total_throughput: float
    episode_throughput: List[float]
    slot_log: List[SlotLog]


def derive_seed(seed: int, *keys: int) -> int:
    """Independent child seed for a (seed, purpose, index...) path."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _check_simplex(name: str, vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if (vector.ndim != 1 or not np.all(np.isfinite(vector)) or np.any(vector < -SIMPLEX_TOLERANCE)
            or abs(float(vector.sum()) - 1.0) > SIMPLEX_TOLERANCE):
        raise TrainerContractError(f"{name} is not on the simplex: {vector!r}")
    return vector


def project(x: np.ndarray) -> np.ndarray:
    """Clamp to [0, inf) and renormalize; a vanishing sum maps to the uniform vector."""
    clamped = np.maximum(np.asarray(x, dtype=float), 0.0)
    total = float(clamped.sum())
    if not total >= PROJECTION_FLOOR:
        return np.full(clamped.shape, 1.0 / clamped.size)
    return clamped / total


def select_action(phase: Phase, p_o: np.ndarray, p_d: np.ndarray, sigma: float, w: float,
                  rng: np.random.Generator) -> np.ndarray:
    """
    Action of one MBS for the given training phase.

    Raises:
        TrainerContractError: On off-simplex inputs, negative sigma or w outside [0, 1]
    """
    p_o = _check_simplex("p_o", p_o)
    p_d = _check_simplex("p_d", p_d)
    if sigma < 0:
        raise TrainerContractError(f"sigma must be >= 0, got {sigma}")
    if not 0.0 <= w <= 1.0:
        raise TrainerContractError(f"w must be within [0, 1], got {w}")
    if phase is Phase.GUIDED:
        return project(p_o + rng.normal(0.0, sigma, size=p_o.shape))
    if phase is Phase.BLENDING:
        return w * p_o + (1.0 - w) * p_d
    return p_d.copy()


def blending_weight(epoch: int, schedule: PhaseSchedule) -> float:
    """Linear decay from w_start at the first phase-2 epoch towards w_end, clamped."""
    if schedule.phase2_epochs == 0:
        return schedule.w_end
    progress = (epoch - schedule.phase1_epochs) / schedule.phase2_epochs
    w = schedule.w_start - (schedule.w_start - schedule.w_end) * progress
    return min(max(w, 0.0), 1.0)


def noise_sigma_linear(epoch: int, total_epochs: int, sigma0: float) -> float:
    if total_epochs <= 0:
        return 0.0
    return sigma0 * max(1.0 - epoch / total_epochs, 0.0)


def noise_sigma_cosine(epoch: int, total_epochs: int, sigma0: float) -> float:
    if total_epochs <= 0:
        return 0.0
    fraction = min(max(epoch / total_epochs, 0.0), 1.0)
    return sigma0 * 0.5 * (1.0 + math.cos(math.pi * fraction))


def _guided_sigma(epoch: int, schedule: PhaseSchedule) -> float:
    if schedule.phase_of(epoch) is not Phase.GUIDED:
        return 0.0
    fraction = epoch / schedule.phase1_epochs
    return schedule.noise_sigma_start + (schedule.noise_sigma_end - schedule.noise_sigma_start) * fraction


def epoch_controls(method: str, epoch: int, schedule: PhaseSchedule) -> Tuple[Phase, float, float]:
    """(phase, w, sigma) for one epoch of the given method."""
    if method not in METHODS:
        raise TrainerContractError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    phase = schedule.phase_of(epoch)
    total = schedule.total_epochs
    if method == "dln":
        return phase, 0.0, noise_sigma_linear(epoch, total, schedule.noise_sigma_start)
    if method == "dcn":
        return phase, 0.0, noise_sigma_cosine(epoch, total, schedule.noise_sigma_start)
    if method == "epa":
        return phase, 0.0, 0.0
    if phase is Phase.GUIDED:
        return phase, 1.0, _guided_sigma(epoch, schedule)
    if phase is Phase.BLENDING:
        return phase, FIXED_BLENDING.get(method, blending_weight(epoch, schedule)), 0.0
    return phase, 0.0, 0.0


def _make_agents(config: TrainingConfig, seed: int) -> List[DdpgAgent]:
    num_sbs = config.network.num_sbs_per_mbs_N
    return [DdpgAgent(4 * num_sbs, num_sbs, config.agent, seed=derive_seed(seed, 0, m))
            for m in range(config.network.num_mbs_M)]


class _GuidanceChannel:
    """Refreshes environment guidance either inline or through a background worker."""

    def __init__(self, config: TrainingConfig, provider: GuidanceProvider,
                 audit: Optional[GuidanceAuditLog]):
        self.network = config.network
        self.settings = config.guidance
        self.provider = provider
        self.audit = audit
        self.window = config.guidance.statistics_window or config.network.guidance_period_slots
        self.worker = (GuidanceWorker(provider, self.network, self.settings.bounds, audit)
                       if self.settings.asynchronous else None)
        self.fallbacks = 0
        self.cycles = 0

    def _install(self, env: IabEnvironment, outcome) -> None:
        env.install_guidance(outcome.policy)
        self.cycles += 1
        self.fallbacks += int(outcome.fallback_used)

    def start_epoch(self) -> None:
        # outcomes computed from the previous epoch's drop never reach the new environment
        if self.worker is not None:
            self.worker.discard_pending()

    def at_slot(self, env: IabEnvironment) -> None:
        if self.worker is not None:
            outcome = self.worker.poll()
            if outcome is not None:
                self._install(env, outcome)
            if env.guidance_due:
                self.worker.submit(env.observation_statistics(self.window))
            return
        if env.guidance_due:
            outcome = guidance_with_fallback(env.observation_statistics(self.window), self.provider, self.network,
                                             self.settings.bounds, self.audit)
            self._install(env, outcome)

    def close(self):
        if self.worker is not None:
            self.worker.close(timeout=self.settings.endpoint.timeout * (self.settings.endpoint.max_retries + 1))


def run_training(config: TrainingConfig, method: str, seed: int, provider: Optional[GuidanceProvider] = None,
                 audit: Optional[GuidanceAuditLog] = None,
                 step_writer: Optional[StepMetricsWriter] = None) -> TrainingRun:
    """
    Train one agent per MBS with the given method.

    Guidance is refreshed every guidance period for the hric variants only; the
    baselines carry the uniform vector in the guidance slot of their state. The
    executed (post-projection) action is what goes into replay.

    Returns:
        TrainingRun with one EpochRecord per epoch and the trained agents
    """
    schedule, network = config.schedule, config.network
    if method not in METHODS:
        raise TrainerContractError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    guided = method in GUIDED_METHODS
    learning = method != "epa"
    agents = _make_agents(config, seed) if learning else []
    rng = np.random.default_rng(derive_seed(seed, 1))
    channel = _GuidanceChannel(config, provider or config.guidance.create_provider(), audit) if guided else None
    num_mbs, num_sbs = network.num_mbs_M, network.num_sbs_per_mbs_N
    uniform = np.full(num_sbs, 1.0 / num_sbs)
    records: List[EpochRecord] = []

    logger.info(f"Training {method} seed={seed}: {schedule.total_epochs} epochs "
                f"({schedule.phase1_epochs}/{schedule.phase2_epochs}/{schedule.phase3_epochs})")
    try:
        for epoch in range(schedule.total_epochs):
            phase, w, sigma = epoch_controls(method, epoch, schedule)
            topology_seed = derive_seed(seed, 3, epoch) if config.redraw_topology else derive_seed(seed, 3)
            env = IabEnvironment(network, derive_seed(seed, 2, epoch), topology_seed=topology_seed)
            if channel is not None:
                channel.start_epoch()
            fallbacks_before = channel.fallbacks if channel else 0
            throughput, rewards = [], []

            for slot in range(network.episode_slots):
                if channel is not None:
                    channel.at_slot(env)
                states = [encode_state(o, network) for o in env.observations]
                actions = []
                for m in range(num_mbs):
                    if not learning:
                        actions.append(uniform.copy())
                        continue
                    p_d = agents[m].act(states[m])
                    if guided:
                        actions.append(select_action(phase, env.observations[m].guidance_p_o, p_d, sigma, w, rng))
                    else:
                        actions.append(project(p_d + rng.normal(0.0, sigma, size=num_sbs)))
                outcome = env.step(np.array(actions))
                if step_writer is not None:
                    step_writer.write(epoch, slot, outcome, network.backhaul_fraction_alpha, seed)
                throughput.append(outcome.total_throughput)
                rewards.append(outcome.rewards)
                if learning:
                    for m, agent in enumerate(agents):
                        next_state = encode_state(outcome.next_observations[m], network)
                        agent.remember(states[m], actions[m], float(outcome.rewards[m]), next_state)
                        agent.learn()

            fallback_count = (channel.fallbacks - fallbacks_before) if channel else 0
            record = EpochRecord(epoch=epoch, phase=phase, w=float(w), sigma=float(sigma),
                                 total_throughput=float(np.mean(throughput)),
                                 per_mbs_reward=np.mean(rewards, axis=0),
                                 fallback_used=fallback_count > 0, fallback_count=fallback_count)
            records.append(record)
            logger.debug(f"{method} seed={seed} epoch {epoch} {phase.value} w={w:.3f} sigma={sigma:.4f} "
                         f"throughput={record.total_throughput / 1e6:.2f} Mb/s fallbacks={fallback_count}")
    finally:
        if channel is not None:
            channel.close()

    logger.info(f"Finished {method} seed={seed}: final throughput {records[-1].total_throughput / 1e6:.2f} Mb/s")
    return TrainingRun(method=method, seed=seed, records=records, agents=agents)


def evaluate(agents: Sequence[DdpgAgent], config: TrainingConfig, episodes: int, seed: int,
             provider: Optional[GuidanceProvider] = None, frozen_fading: bool = False) -> EvaluationResult:
    """
    Noise-free evaluation over `episodes` fresh drops.

    Actions are the actor outputs p_d (uniform when no agents are given, i.e. epa).
    When a provider is given, guidance is refreshed into the state as in training.
    """
    network = config.network
    if episodes < 1:
        raise TrainerContractError(f"episodes must be >= 1, got {episodes}")
    if agents and len(agents) != network.num_mbs_M:
        raise TrainerContractError(f"need {network.num_mbs_M} agents, got {len(agents)}")
    uniform = np.full(network.num_sbs_per_mbs_N, 1.0 / network.num_sbs_per_mbs_N)
    eval_config = replace(config, guidance=replace(config.guidance, asynchronous=False))
    channel = _GuidanceChannel(eval_config, provider, None) if provider is not None else None
    episode_means: List[float] = []
    slot_log: List[SlotLog] = []
    for episode in range(episodes):
        env = IabEnvironment(network, derive_seed(seed, 4, episode), topology_seed=derive_seed(seed, 5, episode),
                             frozen_fading=frozen_fading)
        totals = []
        for slot in range(network.episode_slots):
            if channel is not None:
                channel.at_slot(env)
            if agents:
                actions = [agent.act(encode_state(o, network)) for agent, o in zip(agents, env.observations)]
            else:
                actions = [uniform] * network.num_mbs_M
            outcome = env.step(np.array(actions))
            totals.append(outcome.total_throughput)
            slot_log.append(SlotLog(episode, slot, outcome.per_sbs_backhaul_rate.copy(),
                                    outcome.per_sbs_access_sum.copy(), outcome.total_throughput))
        episode_means.append(float(np.mean(totals)))
    mean = float(np.mean(episode_means))
    logger.info(f"Evaluated {episodes} episodes at alpha={network.backhaul_fraction_alpha}: "
                f"{mean / 1e6:.2f} Mb/s")
    return EvaluationResult(mean_total_throughput=mean, episode_throughput=episode_means, slot_log=slot_log)


CURVE_COLUMNS = ["method", "seed", "epoch", "phase", "w", "sigma", "total_throughput", "fallback_count"]


def write_curves(path: str, run: TrainingRun) -> None:
    """Per-epoch training curve with repr floats so reruns are byte-identical."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for record in run.records:
            writer.writerow([run.method, run.seed, record.epoch, record.phase.value, repr(record.w),
                             repr(record.sigma), repr(record.total_throughput), record.fallback_count])
    logger.info(f"Training curve written to {path}")


def final_window_median(records: Sequence[EpochRecord], window: int = 10) -> float:
    """Median total throughput over the last `window` epochs."""
    return float(np.median([r.total_throughput for r in records[-window:]]))
