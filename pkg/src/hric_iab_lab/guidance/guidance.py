#!/usr/bin/env python3
"""
Guidance module for the IAB lab.

The non-RT rApp pipeline: validate the integrated statistics, build the prompt,
query a provider (LLM endpoint or deterministic heuristic), parse and verify the
returned allocation, and fall back to equal power on any failure.
"""

import hashlib
import json
import logging
import math
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import List, Optional, Protocol, Tuple

import numpy as np

from hric_iab_lab.channel.channel import linear_to_db
from hric_iab_lab.guidance.client import GuidanceError, LlmEndpointConfig, create_client, request_guidance
from hric_iab_lab.topology.topology import NetworkConfig

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-6
ROW_SUM_BAND = (0.98, 1.02)
HEURISTIC_EPSILON = 1e-15


class PolicyError(GuidanceError):
    """A guidance policy violates the simplex invariants."""
    pass


class GuidanceParseError(GuidanceError):
    """The raw completion does not contain a conforming allocation."""
    pass


class MissingMbsLineError(GuidanceParseError):
    pass


class DuplicateMbsLineError(GuidanceParseError):
    pass


class UnknownMbsIndexError(GuidanceParseError):
    pass


class ArityError(GuidanceParseError):
    pass


class NonNumericTokenError(GuidanceParseError):
    pass


class ValueRangeError(GuidanceParseError):
    pass


class RowSumError(GuidanceParseError):
    pass


@dataclass(frozen=True)
class SbsReport:
    """Integrated statistics of one SBS as consumed by the prompt."""
    avg_channel_gain: float
    connected_users: int
    avg_expected_rate_mbps: float
    interference: Tuple[Tuple[Tuple[int, int], float], ...] = ()


@dataclass(frozen=True)
class GuidanceInput:
    """M x N grid of SBS reports (0-based indices throughout)."""
    reports: Tuple[Tuple[SbsReport, ...], ...]

    @property
    def num_mbs(self) -> int:
        return len(self.reports)

    @property
    def num_sbs(self) -> int:
        return len(self.reports[0]) if self.reports else 0

    def report(self, m: int, n: int) -> SbsReport:
        return self.reports[m][n]


@dataclass(eq=False)
class GuidancePolicy:
    """
    Per-MBS power-ratio guidance.

    allocation has shape (M, N); every row lies on the probability simplex.

    Raises:
        PolicyError: If the shape or any row is invalid
    """
    allocation: np.ndarray

    def __post_init__(self):
        allocation = np.array(self.allocation, dtype=float)
        if allocation.ndim != 2 or allocation.shape[0] < 1 or allocation.shape[1] < 1:
            raise PolicyError(f"allocation must be a non-empty M x N matrix, got shape {allocation.shape}")
        problems = simplex_violations(allocation)
        if problems:
            raise PolicyError("; ".join(problems))
        self.allocation = allocation

    @property
    def shape(self) -> Tuple[int, int]:
        return self.allocation.shape

    def row(self, m: int) -> np.ndarray:
        return self.allocation[m].copy()


@dataclass(frozen=True)
class ValidationBounds:
    """Physically plausible ranges for prompt inputs (linear gains: -150 dB to -30 dB)."""
    min_gain: float = 1e-15
    max_gain: float = 1e-3
    min_rate_mbps: float = 0.0


@dataclass(frozen=True)
class Violation:
    field: str
    value: object
    reason: str


@dataclass(frozen=True)
class ValidationReport:
    accepted: bool
    violations: Tuple[Violation, ...]
    guidance_input: GuidanceInput

    def describe(self) -> str:
        return "; ".join(f"{v.field}={v.value!r} ({v.reason})" for v in self.violations)


@dataclass(frozen=True)
class GuidanceOutcome:
    """
    Result of one guidance cycle.

    stage is where the cycle ended: "ok", "validate", "request" or "parse".
    """
    policy: GuidancePolicy
    fallback_used: bool
    stage: str
    reason: str = ""
    raw_response: Optional[str] = None
    prompt_sha256: str = ""


def simplex_violations(allocation: np.ndarray, tolerance: float = SIMPLEX_TOLERANCE) -> List[str]:
    problems = []
    if not np.all(np.isfinite(allocation)):
        return ["allocation contains non-finite entries"]
    for m, row in enumerate(allocation):
        if np.any(row < -tolerance) or np.any(row > 1.0 + tolerance):
            problems.append(f"row {m} has entries outside [0, 1]")
        if abs(float(row.sum()) - 1.0) > tolerance:
            problems.append(f"row {m} sums to {float(row.sum())!r}")
    return problems


def uniform_policy(num_mbs: int, num_sbs: int) -> GuidancePolicy:
    return GuidancePolicy(np.full((num_mbs, num_sbs), 1.0 / num_sbs))


def validate_input(guidance_input: GuidanceInput, bounds: Optional[ValidationBounds] = None) -> ValidationReport:
    """
    Range-check every field of the integrated statistics.

    Never raises; the report lists each offending field by its 1-based MBS/SBS name.
    """
    bounds = bounds or ValidationBounds()
    violations: List[Violation] = []

    def check_gain(name: str, gain: float):
        if not (isinstance(gain, (int, float)) and math.isfinite(gain)):
            violations.append(Violation(name, gain, "not a finite number"))
        elif not bounds.min_gain <= gain <= bounds.max_gain:
            violations.append(Violation(
                name, gain, f"outside plausible range [{bounds.min_gain:g}, {bounds.max_gain:g}]"))

    if guidance_input.num_mbs == 0 or guidance_input.num_sbs == 0:
        violations.append(Violation("reports", guidance_input.num_mbs, "no SBS reports"))
    for m, row in enumerate(guidance_input.reports):
        if len(row) != guidance_input.num_sbs:
            violations.append(Violation(f"MBS{m + 1}", len(row), f"expected {guidance_input.num_sbs} SBS reports"))
        for n, report in enumerate(row):
            prefix = f"MBS{m + 1}.SBS{n + 1}"
            check_gain(f"{prefix}.avg_channel_gain", report.avg_channel_gain)
            if not isinstance(report.connected_users, (int, np.integer)) or report.connected_users < 0:
                violations.append(Violation(f"{prefix}.connected_users", report.connected_users,
                                            "must be a non-negative integer"))
            rate = report.avg_expected_rate_mbps
            if not (isinstance(rate, (int, float)) and math.isfinite(rate)) or rate < bounds.min_rate_mbps:
                violations.append(Violation(f"{prefix}.avg_expected_rate_mbps", rate, "must be a finite rate >= 0"))
            for (src_m, src_n), gain in report.interference:
                check_gain(f"{prefix}.interference[MBS{src_m + 1},SBS{src_n + 1}]", gain)

    report = ValidationReport(accepted=not violations, violations=tuple(violations), guidance_input=guidance_input)
    if violations:
        logger.warning(f"Guidance input rejected: {report.describe()}")
    return report


_NUMBER_WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
                 "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
                 "eighteen", "nineteen", "twenty"]


def _count_word(count: int) -> str:
    return _NUMBER_WORDS[count] if 0 <= count < len(_NUMBER_WORDS) else str(count)


def _format_db(gain: float) -> str:
    return f"{linear_to_db(gain):.1f} dB"


def _format_report(report: SbsReport) -> str:
    interference = ", ".join(f"[({m + 1}, {n + 1}), {_format_db(gain)}]" for (m, n), gain in report.interference)
    return (f"[{_format_db(report.avg_channel_gain)}, {report.connected_users}, "
            f"{report.avg_expected_rate_mbps:.2f}, [{interference}]]")


def build_prompt(guidance_input: GuidanceInput, config: NetworkConfig) -> str:
    """Render the structured power-allocation prompt; identical inputs give identical bytes."""
    num_mbs, num_sbs = guidance_input.num_mbs, guidance_input.num_sbs
    values = ", ".join(f"value{i + 1}" for i in range(num_sbs))
    lines = [
        "You are an expert in wireless communications for resource allocation.",
        "Your objective is to maximize the total throughput of all MBSs, where the throughput of each SBS "
        "is the minimum of its backhaul rate and the sum of the access rates of its connected users.",
        f"Here is the system description: The network has {num_mbs} MBSs, and each MBS is connected to "
        f"{num_sbs} SBSs over wireless backhaul links. The maximum transmit power of each MBS is "
        f"{config.mbs_max_power_dbm:g} dBm. The total bandwidth of each MBS is "
        f"{config.total_bandwidth_W / 1e6:g} MHz, of which a fraction alpha = {config.backhaul_fraction_alpha:g} "
        "is allocated to the backhaul links and the remaining bandwidth to the access links. Each SBS serves "
        "its connected users with fixed power, and SBSs of different MBSs that use the same sub-carrier "
        "interfere with each other.",
        "Input Format: For each MBS, you are provided with the following input data for its connected SBSs. "
        "Each SBS is represented as a list: [Average channel gain, number of connected users, average expected "
        "data rate of connected users (Mb/s), and interference: [interference source (MBS, SBS), average "
        "interference channel gain] ].",
    ]
    for m in range(num_mbs):
        lines.append(f"MBS{m + 1}:")
        for n in range(num_sbs):
            lines.append(f"SBS{n + 1}: {_format_report(guidance_input.report(m, n))}")
    lines.append(
        "Constraints: Ensure the total power allocation across SBSs for each MBS sums to 1. For each MBS, "
        f"output the normalized power allocation ratios as a list of {_count_word(num_sbs)} values "
        f"corresponding to its {_count_word(num_sbs)} SBSs. MBSX: [{values}].")
    return "\n".join(lines) + "\n"


def serialize_policy(policy: GuidancePolicy) -> str:
    """Render a policy in the answer format the prompt asks for (repr floats, exact round trip)."""
    return "\n".join(f"MBS{m + 1}: [{', '.join(repr(float(v)) for v in row)}]"
                     for m, row in enumerate(policy.allocation))


# whole line only: optional list marker and bold markup, nothing but punctuation after the bracket
_MBS_LINE = re.compile(r"^[ \t]*(?:[-*+][ \t]+|\d+[.)][ \t]+)?\**[ \t]*MBS[ \t]*(\d+)[ \t]*\**[ \t]*:[ \t]*\**[ \t]*"
                       r"\[([^\[\]\n]*)\][ \t]*\**[ \t]*[.;,]?[ \t\r]*$", re.IGNORECASE | re.MULTILINE)


def parse_guidance(raw_text: str, num_mbs: int, num_sbs: int) -> GuidancePolicy:
    """
    Extract one "MBS<i>: [v1, ..., vN]" allocation per MBS from free text.

    Only lines that consist of the allocation (plus list or bold markup) count;
    a mention inside a sentence is ignored.

    Rows summing within [0.98, 1.02] are renormalized to exactly 1.

    Raises:
        MissingMbsLineError, DuplicateMbsLineError, UnknownMbsIndexError, ArityError,
        NonNumericTokenError, ValueRangeError, RowSumError
    """
    rows = {}
    for match in _MBS_LINE.finditer(raw_text or ""):
        index = int(match.group(1))
        if not 1 <= index <= num_mbs:
            raise UnknownMbsIndexError(f"MBS{index} is outside 1..{num_mbs}")
        if index in rows:
            raise DuplicateMbsLineError(f"MBS{index} appears more than once")
        tokens = [t.strip() for t in match.group(2).split(",")]
        if tokens and tokens[-1] == "":
            tokens = tokens[:-1]
        if len(tokens) != num_sbs:
            raise ArityError(f"MBS{index} has {len(tokens)} values, expected {num_sbs}")
        values = []
        for token in tokens:
            try:
                value = float(token)
            except ValueError:
                raise NonNumericTokenError(f"MBS{index} has non-numeric token {token!r}")
            if not math.isfinite(value):
                raise NonNumericTokenError(f"MBS{index} has non-finite token {token!r}")
            if value < 0.0 or value > 1.0:
                raise ValueRangeError(f"MBS{index} value {value!r} is outside [0, 1]")
            values.append(value)
        row = np.array(values, dtype=float)
        total = float(row.sum())
        if not ROW_SUM_BAND[0] <= total <= ROW_SUM_BAND[1]:
            raise RowSumError(f"MBS{index} sums to {total!r}, outside {list(ROW_SUM_BAND)}")
        rows[index] = row / total

    missing = [i for i in range(1, num_mbs + 1) if i not in rows]
    if missing:
        raise MissingMbsLineError(f"no allocation line for {', '.join(f'MBS{i}' for i in missing)}")
    return GuidancePolicy(np.stack([rows[i] for i in range(1, num_mbs + 1)]))


def heuristic_guidance(guidance_input: GuidanceInput) -> GuidancePolicy:
    """
    Deterministic offline guidance.

    Entry (m, n) is proportional to users * sqrt(gain / (eps + sum of interference gains));
    a row without users falls back to equal power.
    """
    num_mbs, num_sbs = guidance_input.num_mbs, guidance_input.num_sbs
    weights = np.zeros((num_mbs, num_sbs))
    for m in range(num_mbs):
        for n in range(num_sbs):
            report = guidance_input.report(m, n)
            interference = sum(gain for _, gain in report.interference)
            weights[m, n] = report.connected_users * math.sqrt(
                report.avg_channel_gain / (HEURISTIC_EPSILON + interference))
    totals = weights.sum(axis=1, keepdims=True)
    uniform = np.full_like(weights, 1.0 / num_sbs)
    allocation = np.where(totals > 0, weights / np.where(totals > 0, totals, 1.0), uniform)
    return GuidancePolicy(allocation)


class GuidanceProvider(Protocol):
    name: str

    def complete(self, prompt: str, guidance_input: GuidanceInput) -> str:
        ...


class HeuristicProvider:
    """Answers every prompt with the serialized heuristic policy; never touches the network."""
    name = "heuristic"

    def complete(self, prompt: str, guidance_input: GuidanceInput) -> str:
        return serialize_policy(heuristic_guidance(guidance_input))


class EndpointProvider:
    """Answers prompts through the OpenAI-compatible wire client."""
    name = "endpoint"

    def __init__(self, endpoint: LlmEndpointConfig, client=None):
        self.endpoint = endpoint
        self._client = client

    def complete(self, prompt: str, guidance_input: GuidanceInput) -> str:
        if self._client is None:
            self._client = create_client(self.endpoint)
        return request_guidance(prompt, self.endpoint, self._client)


class GuidanceAuditLog:
    """
    Line-delimited JSON audit of guidance cycles.

    Each record: timestamp, prompt_sha256, raw_response, stage, reason, fallback.
    """

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()

    def record(self, outcome: GuidanceOutcome) -> None:
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "prompt_sha256": outcome.prompt_sha256,
            "raw_response": outcome.raw_response,
            "stage": outcome.stage,
            "reason": outcome.reason,
            "fallback": outcome.fallback_used,
        }
        with self._lock:
            with open(self.path, "a") as f:
                f.write(json.dumps(entry, sort_keys=True) + "\n")


def guidance_with_fallback(guidance_input: GuidanceInput, provider: GuidanceProvider, config: NetworkConfig,
                           bounds: Optional[ValidationBounds] = None,
                           audit: Optional[GuidanceAuditLog] = None) -> GuidanceOutcome:
    """
    Run validate -> prompt -> request -> parse; any failure yields the equal-power policy.

    Never raises.
    """
    num_mbs, num_sbs = config.num_mbs_M, config.num_sbs_per_mbs_N
    prompt_hash = ""
    raw: Optional[str] = None
    stage = "validate"
    try:
        report = validate_input(guidance_input, bounds)
        if not report.accepted:
            outcome = GuidanceOutcome(uniform_policy(num_mbs, num_sbs), True, stage, report.describe())
        else:
            prompt = build_prompt(guidance_input, config)
            prompt_hash = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
            stage = "request"
            raw = provider.complete(prompt, guidance_input)
            stage = "parse"
            if not isinstance(raw, str):
                raise GuidanceParseError(f"provider returned {type(raw).__name__}, expected text")
            policy = parse_guidance(raw, num_mbs, num_sbs)
            outcome = GuidanceOutcome(policy, False, "ok", "", raw, prompt_hash)
    except Exception as e:
        logger.warning(f"Guidance {stage} stage failed, using equal-power fallback: {type(e).__name__}: {e}")
        outcome = GuidanceOutcome(uniform_policy(num_mbs, num_sbs), True, stage,
                                  f"{type(e).__name__}: {e}", raw if isinstance(raw, str) else None, prompt_hash)

    if audit is not None:
        try:
            audit.record(outcome)
        except OSError as e:
            logger.error(f"Could not write guidance audit record: {e}")
    return outcome


class GuidanceWorker:
    """
    Runs guidance cycles on one background thread.

    The caller submits integrated statistics and later polls for the outcome,
    installing it at a slot boundary; a submit while busy is refused.
    discard_pending() drops any finished outcome and makes the in-flight cycle,
    if one is running, deliver nothing.
    """

    def __init__(self, provider: GuidanceProvider, config: NetworkConfig,
                 bounds: Optional[ValidationBounds] = None, audit: Optional[GuidanceAuditLog] = None):
        self.provider = provider
        self.config = config
        self.bounds = bounds
        self.audit = audit
        self._thread: Optional[threading.Thread] = None
        self._result: Optional[GuidanceOutcome] = None
        self._done = threading.Event()
        self._lock = threading.Lock()
        self._generation = 0

    @property
    def busy(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def _run(self, guidance_input: GuidanceInput, generation: int):
        outcome = guidance_with_fallback(guidance_input, self.provider, self.config, self.bounds, self.audit)
        with self._lock:
            if generation == self._generation:
                self._result = outcome
            else:
                logger.debug("Dropping guidance outcome computed for discarded statistics")
        self._done.set()

    def submit(self, guidance_input: GuidanceInput) -> bool:
        if self.busy:
            logger.info("Guidance worker busy; keeping current guidance")
            return False
        self._done.clear()
        with self._lock:
            generation = self._generation
        self._thread = threading.Thread(target=self._run, args=(guidance_input, generation))
        self._thread.daemon = True
        self._thread.start()
        return True

    def poll(self) -> Optional[GuidanceOutcome]:
        """Return and clear the finished outcome, or None if nothing is ready."""
        with self._lock:
            outcome, self._result = self._result, None
        return outcome

    def discard_pending(self) -> None:
        with self._lock:
            self._generation += 1
            self._result = None

    def wait(self, timeout: float) -> Optional[GuidanceOutcome]:
        self._done.wait(timeout)
        return self.poll()

    def close(self, timeout: float = 1.0) -> None:
        if self._thread:
            self._thread.join(timeout=timeout)
            self._thread = None
