"""Session protocol: message vocabulary, state machine, and the
verification / calibration procedures run by node agents.

The controller drives one :func:`step_state` machine per session. The
function is pure and total: every (phase, event) pair either transitions,
is absorbed, or lands in ``Failed(protocol_violation)``, so fuzzed input
can never reach an undefined transition. Side effects are expressed as
emitted message templates that the caller materializes and delivers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import CalibrationError, VerificationError
from .photonics import (CountSample, DetectorModel, noise_ratio_check,
                        scan_delay, DelayScanModel, DelayScanResult,
                        transmittance_from_loss)
from .topology import QubitEncoding


class MsgKind(Enum):
    REQUEST = "Request"
    REJECT = "Reject"
    PATHS_ESTABLISHED = "PathsEstablished"
    CLASSICAL_POWER_REPORT = "ClassicalPowerReport"
    PATH_VERIFIED = "PathVerified"
    PATH_VERIFY_FAILED = "PathVerifyFailed"
    SEND_ALIGNMENT = "SendAlignment"
    ALIGNMENT_DONE = "AlignmentDone"
    SEND_EARLY_LATE = "SendEarlyLate"
    BINS_IDENTIFIED = "BinsIdentified"
    READY = "Ready"
    START = "Start"
    DETECTION_RECORD = "DetectionRecord"
    END = "End"
    RESULTS_POSTED = "ResultsPosted"


# Controller-internal signals, fed through the same transition table.
SIG_ROUTE = "sig_route"
SIG_ROUTE_OK = "sig_route_ok"
SIG_ROUTE_BLOCKED = "sig_route_blocked"
SIG_PROCEED = "sig_proceed"
SIG_REJECT = "sig_reject"
SIG_TIMEOUT = "sig_timeout"
SIG_SEND_LATE = "sig_send_late"

SIGNAL_KINDS = (SIG_ROUTE, SIG_ROUTE_OK, SIG_ROUTE_BLOCKED, SIG_PROCEED,
                SIG_REJECT, SIG_TIMEOUT, SIG_SEND_LATE)

# Roles inside one session.
ROLE_QNODE_1 = "qnode1"
ROLE_QNODE_2 = "qnode2"
ROLE_EPS = "eps"
ROLE_CONTROLLER = "controller"
ROLE_USER = "user"

QNODE_ROLES = frozenset({ROLE_QNODE_1, ROLE_QNODE_2})
ALL_READY_ROLES = frozenset({ROLE_QNODE_1, ROLE_QNODE_2, ROLE_EPS})


class Phase(Enum):
    REQUESTED = "Requested"
    ROUTING = "Routing"
    PATHS_NOTIFIED = "PathsNotified"
    VERIFY_CLASSICAL = "VerifyClassical"
    VERIFY_QUANTUM = "VerifyQuantum"
    CALIB_ALIGNMENT = "CalibAlignment"
    CALIB_BITSYNC = "CalibBitSync"
    CALIB_DELAYSCAN = "CalibDelayScan"
    READY = "Ready"
    ENTANGLING = "Entangling"
    ENDING = "Ending"
    COMPLETE = "Complete"
    REJECTED = "Rejected"
    FAILED = "Failed"


TERMINAL_PHASES = frozenset({Phase.COMPLETE, Phase.REJECTED, Phase.FAILED})

_VERIFY_PHASES = frozenset({Phase.VERIFY_CLASSICAL, Phase.VERIFY_QUANTUM})
_CALIB_PHASES = frozenset({Phase.CALIB_ALIGNMENT, Phase.CALIB_BITSYNC,
                           Phase.CALIB_DELAYSCAN})
_READY_OK_PHASES = frozenset({Phase.PATHS_NOTIFIED}) | _VERIFY_PHASES | _CALIB_PHASES


@dataclass(frozen=True)
class EntanglementRequest:
    qubit_type: QubitEncoding
    qnode_1: str
    qnode_2: str
    start_time: float
    end_time: float
    calib_basis: str
    target_ebits: int = 1000

    def validate(self) -> Optional[str]:
        """Return a rejection cause token, or None when well-formed."""
        if self.qnode_1 == self.qnode_2:
            return "invalid_pair"
        if not self.start_time < self.end_time:
            return "invalid_window"
        if self.target_ebits < 1:
            return "invalid_window"
        return None


@dataclass(frozen=True)
class SessionState:
    """Controller-side view of one session, a pure value."""

    phase: Phase = Phase.REQUESTED
    encoding: QubitEncoding = QubitEncoding.POLARIZATION
    retry_count: int = 0
    attempt: int = 0
    failure_cause: str = ""
    classical_ok_arms: frozenset[int] = frozenset()
    verified_arms: frozenset[int] = frozenset()
    bins_nodes: frozenset[str] = frozenset()
    aligned_nodes: frozenset[str] = frozenset()
    ready_roles: frozenset[str] = frozenset()
    ended_roles: frozenset[str] = frozenset()
    posted_roles: frozenset[str] = frozenset()
    phase_light_sent: bool = False

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL_PHASES


@dataclass(frozen=True)
class SessionEvent:
    """One input to the session machine: a received message or a signal."""

    kind: str                 # MsgKind.value or one of SIGNAL_KINDS
    role: str = ""            # sender's role for messages
    arm: int = 0              # 1 | 2 where arm-specific
    ok: bool = True           # classical power report within tolerance?
    cause: str = ""           # failure / blocking cause token


@dataclass(frozen=True)
class Emit:
    """Message template the controller materializes after a transition."""

    kind: str
    to: str
    note: str = ""


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3


def _fresh_attempt(state: SessionState, phase: Phase, **extra) -> SessionState:
    return replace(state, phase=phase,
                   classical_ok_arms=frozenset(), verified_arms=frozenset(),
                   bins_nodes=frozenset(), aligned_nodes=frozenset(),
                   ready_roles=frozenset(), ended_roles=frozenset(),
                   posted_roles=frozenset(), phase_light_sent=False, **extra)


def _fail(state: SessionState, cause: str) -> tuple[SessionState, tuple[Emit, ...]]:
    return replace(state, phase=Phase.FAILED, failure_cause=cause), ()


def _retry_or_fail(state: SessionState, cause: str,
                   policy: RetryPolicy) -> tuple[SessionState, tuple[Emit, ...]]:
    if state.retry_count < policy.max_retries:
        next_state = _fresh_attempt(state, Phase.ROUTING,
                                    retry_count=state.retry_count + 1,
                                    attempt=state.attempt + 1)
        return next_state, (Emit(SIG_ROUTE, ROLE_CONTROLLER, note=cause),)
    return _fail(state, "exhausted")


def _calib_kickoff(state: SessionState) -> tuple[Emit, ...]:
    if state.encoding is QubitEncoding.TIMEBIN:
        targets = (ROLE_EPS, ROLE_QNODE_1, ROLE_QNODE_2)
        emits = [Emit(MsgKind.SEND_EARLY_LATE.value, t, note="early") for t in targets]
        emits.append(Emit(SIG_SEND_LATE, ROLE_CONTROLLER))
        return tuple(emits)
    return tuple(Emit(MsgKind.SEND_ALIGNMENT.value, t, note="basis")
                 for t in (ROLE_EPS, ROLE_QNODE_1, ROLE_QNODE_2))


def _advance(state: SessionState) -> tuple[SessionState, tuple[Emit, ...]]:
    """Run guard-based phase promotions after an event has been applied."""
    emits: list[Emit] = []
    while True:
        if state.phase is Phase.VERIFY_CLASSICAL and state.classical_ok_arms == {1, 2}:
            state = replace(state, phase=Phase.VERIFY_QUANTUM)
            continue
        if state.phase is Phase.VERIFY_QUANTUM and state.verified_arms == {1, 2}:
            state = replace(state, phase=Phase.CALIB_ALIGNMENT)
            emits.extend(_calib_kickoff(state))
            continue
        if (state.phase is Phase.CALIB_ALIGNMENT
                and state.encoding is QubitEncoding.TIMEBIN
                and state.bins_nodes >= QNODE_ROLES
                and not state.phase_light_sent):
            state = replace(state, phase_light_sent=True)
            emits.extend(Emit(MsgKind.SEND_ALIGNMENT.value, t, note="phase")
                         for t in (ROLE_EPS, ROLE_QNODE_1, ROLE_QNODE_2))
            continue
        if state.phase is Phase.CALIB_ALIGNMENT and state.aligned_nodes >= QNODE_ROLES:
            state = replace(state, phase=Phase.CALIB_BITSYNC)
            continue
        if (state.phase is Phase.CALIB_BITSYNC
                and state.ready_roles & QNODE_ROLES):
            state = replace(state, phase=Phase.CALIB_DELAYSCAN)
            continue
        if (state.phase is Phase.CALIB_DELAYSCAN
                and state.ready_roles >= ALL_READY_ROLES):
            state = replace(state, phase=Phase.READY)
            emits.append(Emit(MsgKind.START.value, ROLE_EPS))
            continue
        if state.phase is Phase.ENDING and state.posted_roles >= QNODE_ROLES:
            state = replace(state, phase=Phase.COMPLETE)
            continue
        return state, tuple(emits)


def step_state(state: SessionState, event: SessionEvent,
               policy: RetryPolicy) -> tuple[SessionState, tuple[Emit, ...]]:
    """Apply one event to a session. Pure; returns (new state, emits)."""
    if state.terminal:
        return state, ()  # late stragglers are absorbed

    kind = event.kind
    if kind == SIG_TIMEOUT:
        return _fail(state, "timeout")
    if kind == SIG_SEND_LATE:
        if (state.phase is Phase.CALIB_ALIGNMENT
                and state.encoding is QubitEncoding.TIMEBIN):
            emits = tuple(Emit(MsgKind.SEND_EARLY_LATE.value, t, note="late")
                          for t in (ROLE_EPS, ROLE_QNODE_1, ROLE_QNODE_2))
            return state, emits
        return state, ()  # stale timer after the phase moved on

    phase = state.phase
    if phase is Phase.REQUESTED:
        if kind == SIG_ROUTE:
            return replace(state, phase=Phase.ROUTING, attempt=state.attempt + 1), ()
        if kind == SIG_REJECT:
            return replace(state, phase=Phase.REJECTED, failure_cause=event.cause), ()
    elif phase is Phase.ROUTING:
        if kind == SIG_ROUTE_OK:
            targets = (ROLE_QNODE_1, ROLE_QNODE_2, ROLE_EPS)
            emits = tuple(Emit(MsgKind.PATHS_ESTABLISHED.value, t) for t in targets)
            emits += (Emit(SIG_PROCEED, ROLE_CONTROLLER),)
            return _fresh_attempt(state, Phase.PATHS_NOTIFIED), emits
        if kind == SIG_ROUTE_BLOCKED:
            if state.retry_count == 0:
                rejected = replace(state, phase=Phase.REJECTED, failure_cause=event.cause)
                return rejected, (Emit(MsgKind.REJECT.value, ROLE_USER, note=event.cause),)
            return _retry_or_fail(state, event.cause, policy)
    elif phase is Phase.PATHS_NOTIFIED:
        if kind == SIG_PROCEED:
            return _advance(replace(state, phase=Phase.VERIFY_CLASSICAL))
        if kind == MsgKind.READY.value:
            return _advance(replace(state, ready_roles=state.ready_roles | {event.role}))
    elif phase in _VERIFY_PHASES:
        if kind == MsgKind.READY.value:
            return _advance(replace(state, ready_roles=state.ready_roles | {event.role}))
        if kind == MsgKind.CLASSICAL_POWER_REPORT.value and phase is Phase.VERIFY_CLASSICAL:
            if not event.ok:
                return _retry_or_fail(state, event.cause or "loss_mismatch", policy)
            arms = state.classical_ok_arms | {event.arm}
            return _advance(replace(state, classical_ok_arms=arms))
        if kind == MsgKind.PATH_VERIFIED.value:
            return _advance(replace(state, verified_arms=state.verified_arms | {event.arm}))
        if kind == MsgKind.PATH_VERIFY_FAILED.value:
            return _retry_or_fail(state, event.cause or "verify", policy)
    elif phase in _CALIB_PHASES:
        if kind == MsgKind.READY.value:
            return _advance(replace(state, ready_roles=state.ready_roles | {event.role}))
        if kind == MsgKind.PATH_VERIFY_FAILED.value:
            return _fail(state, event.cause or "calibration")
        if phase is Phase.CALIB_ALIGNMENT:
            if (kind == MsgKind.BINS_IDENTIFIED.value
                    and state.encoding is QubitEncoding.TIMEBIN):
                return _advance(replace(state, bins_nodes=state.bins_nodes | {event.role}))
            if kind == MsgKind.ALIGNMENT_DONE.value:
                return _advance(replace(state, aligned_nodes=state.aligned_nodes | {event.role}))
    elif phase is Phase.READY:
        if kind == MsgKind.START.value:
            return replace(state, phase=Phase.ENTANGLING), ()
    elif phase is Phase.ENTANGLING:
        if kind == MsgKind.END.value and event.role in QNODE_ROLES:
            ended = replace(state, phase=Phase.ENDING,
                            ended_roles=state.ended_roles | {event.role})
            return ended, (Emit(MsgKind.END.value, ROLE_EPS),)
    elif phase is Phase.ENDING:
        if kind == MsgKind.END.value and event.role in QNODE_ROLES:
            return replace(state, ended_roles=state.ended_roles | {event.role}), ()
        if kind == MsgKind.RESULTS_POSTED.value and event.role in QNODE_ROLES:
            return _advance(replace(state, posted_roles=state.posted_roles | {event.role}))
    return _fail(state, "protocol_violation")


# --- path verification -------------------------------------------------------


@dataclass
class SessionContext:
    """Mutable per-session scratchpad for the verification and calibration
    procedures (arm losses, stored offsets). Agents own one each."""

    session_id: str
    encoding: QubitEncoding = QubitEncoding.POLARIZATION
    noise_threshold: float = 1.0 / 6.0
    band_sigma: float = 3.0
    loss_sigma_db: float = 0.2  # uncertainty of the classical-stage estimate
    measured_loss_db: dict[int, float] = field(default_factory=dict)
    pol_offset_deg: dict[str, float] = field(default_factory=dict)
    timebin_calib: dict[str, "TimebinCalibration"] = field(default_factory=dict)
    sync_offset_ticks: Optional[int] = None


def verify_path_classical(session: SessionContext, arm: int,
                          injected_power_dbm: float,
                          measured_power_dbm: float) -> float:
    """First verification stage: loss from known injected power.

    The estimate is stored on the session as the transmittance source for
    the quantum stage. Measured power above the injected power is physically
    impossible on a passive path and raises ``inconsistent_power``.
    """
    if measured_power_dbm > injected_power_dbm + 1e-9:
        raise VerificationError(
            "inconsistent_power",
            f"arm {arm}: measured {measured_power_dbm} dBm exceeds "
            f"injected {injected_power_dbm} dBm")
    loss = injected_power_dbm - measured_power_dbm
    session.measured_loss_db[arm] = loss
    return loss


@dataclass(frozen=True)
class VerifyOutcome:
    ok: bool
    cause: str = ""
    observed: int = 0
    expected: float = 0.0
    noise_ratio: float = 0.0


def verify_path_quantum(session: SessionContext, arm: int,
                        on_sample: CountSample, off_sample: CountSample,
                        pair_rate: float, detector: DetectorModel) -> VerifyOutcome:
    """Second verification stage: click statistics against the rate-times-
    transmittance expectation, then the source-off noise ratio gate.

    The expectation uses the loss measured in the classical stage plus the
    observed source-off background. The acceptance band combines the Poisson
    spread of the counts with the uncertainty the expectation inherits from
    the classical loss estimate (``loss_sigma_db``).
    """
    if arm not in session.measured_loss_db:
        raise VerificationError("no_classical_stage",
                                f"arm {arm}: classical stage has not run")
    eta = transmittance_from_loss(session.measured_loss_db[arm])
    observed = on_sample.total
    background = off_sample.total
    expected_signal = pair_rate * eta.eta * detector.efficiency * on_sample.duration_s
    scale = off_sample.duration_s or on_sample.duration_s
    expected_total = expected_signal + background * on_sample.duration_s / scale

    signal_estimate = observed - background
    if signal_estimate <= session.band_sigma * math.sqrt(max(observed + background, 1)):
        return VerifyOutcome(False, "no_signal", observed, expected_total)
    loss_rel = math.log(10.0) / 10.0 * session.loss_sigma_db
    sigma = math.sqrt(max(expected_total, 1.0) + (loss_rel * expected_signal) ** 2)
    if abs(observed - expected_total) > session.band_sigma * sigma:
        return VerifyOutcome(False, "clicks", observed, expected_total)
    check = noise_ratio_check(observed, background, session.noise_threshold)
    if not check.passed:
        return VerifyOutcome(False, check.reason, observed, expected_total, check.ratio)
    return VerifyOutcome(True, "", observed, expected_total, check.ratio)


# --- calibration -------------------------------------------------------------


def malus_power(angle_deg: float, true_offset_deg: float) -> float:
    """Analyzer transmission for a polarization-encoded alignment beam."""
    return math.cos(math.radians(angle_deg - true_offset_deg)) ** 2


def interference_power(phase_rad: float, true_phase_rad: float) -> float:
    """Two-path interferometer output for a phase-encoded alignment beam."""
    return math.cos((phase_rad - true_phase_rad) / 2.0) ** 2


def _angular_distance_deg(a: float, b: float, period: float = 180.0) -> float:
    d = abs(a - b) % period
    return min(d, period - d)


@dataclass(frozen=True)
class PolarizationResult:
    offset_deg: float
    iterations: int
    elapsed_s: float


def calibrate_polarization(session: SessionContext, node: str, true_offset_deg: float,
                           rng: np.random.Generator, *,
                           grid_step_deg: float = 1.0,
                           tolerance_deg: Optional[float] = None,
                           max_iterations: int = 3,
                           power_noise: float = 0.0,
                           dwell_s_per_point: float = 1e-3) -> PolarizationResult:
    """Scan analyzer angles and keep the argmax of transmitted power.

    Each iteration sweeps the full grid; done once the best angle lands
    within tolerance (default: one grid step) of the true offset.
    """
    tolerance = grid_step_deg if tolerance_deg is None else tolerance_deg
    grid = np.arange(0.0, 180.0, grid_step_deg)
    for iteration in range(1, max_iterations + 1):
        powers = np.cos(np.radians(grid - true_offset_deg)) ** 2
        if power_noise > 0.0:
            powers = powers * (1.0 + power_noise * rng.standard_normal(len(grid)))
        best = float(grid[int(np.argmax(powers))])
        if _angular_distance_deg(best, true_offset_deg) <= tolerance:
            session.pol_offset_deg[node] = best
            return PolarizationResult(offset_deg=best, iterations=iteration,
                                      elapsed_s=iteration * len(grid) * dwell_s_per_point)
    raise CalibrationError("no_convergence",
                           f"analyzer alignment did not converge in {max_iterations} sweeps")


@dataclass(frozen=True)
class TimebinCalibration:
    early_tick: int
    late_tick: int
    middle_tick: float
    phase_rad: float
    elapsed_s: float


def calibrate_timebin(session: SessionContext, node: str, rng: np.random.Generator, *,
                      true_early_tick: int, bin_separation_ticks: float,
                      true_phase_rad: float,
                      phase_grid_points: int = 100,
                      histogram_dwell_s: float = 0.1,
                      dwell_s_per_point: float = 1e-3,
                      power_noise: float = 0.0) -> TimebinCalibration:
    """Identify early/late arrival bins from histograms, then align the
    interferometer phase by the same argmax search as the polarization case.

    Bins closer than one clock tick cannot be told apart and raise
    ``histogram_ambiguous``.
    """
    if bin_separation_ticks < 1.0:
        raise CalibrationError(
            "histogram_ambiguous",
            f"bin separation {bin_separation_ticks} ticks is below the clock unit")
    early = int(true_early_tick)
    late = early + int(round(bin_separation_ticks))
    middle = (early + late) / 2.0

    grid = np.linspace(0.0, 2.0 * math.pi, phase_grid_points, endpoint=False)
    powers = np.cos((grid - true_phase_rad) / 2.0) ** 2
    if power_noise > 0.0:
        powers = powers * (1.0 + power_noise * rng.standard_normal(len(grid)))
    phase = float(grid[int(np.argmax(powers))])
    elapsed = 2.0 * histogram_dwell_s + phase_grid_points * dwell_s_per_point
    result = TimebinCalibration(early_tick=early, late_tick=late, middle_tick=middle,
                                phase_rad=phase, elapsed_s=elapsed)
    session.timebin_calib[node] = result
    return result


def bit_level_sync(session: SessionContext, rng: np.random.Generator, *,
                   true_offset_ticks: int, candidate_range: Sequence[int] | range,
                   scan_model: DelayScanModel) -> DelayScanResult:
    """Find the inter-station clock offset by scanning electrical delays.

    The confirmed offset is stored on the session; an exhausted range raises
    ``CalibrationError('sync')`` carrying the simulated time spent.
    """
    result = scan_delay(true_offset_ticks, candidate_range, scan_model, rng)
    if not result.found:
        err = CalibrationError("sync", "delay scan exhausted the candidate range")
        err.elapsed_s = result.elapsed_s
        raise err
    session.sync_offset_ticks = result.offset
    return result


# --- entanglement accumulation -----------------------------------------------


@dataclass(frozen=True)
class DetectionRecord:
    node: str
    clock_tick: int
    basis: str
    outcome: int


@dataclass
class EBitLog:
    """Matched coincidence outcomes accumulated during one session."""

    entries: list[tuple[int, int, int]] = field(default_factory=list)

    def append(self, tick: int, outcome_1: int, outcome_2: int) -> None:
        self.entries.append((tick, outcome_1, outcome_2))

    def __len__(self) -> int:
        return len(self.entries)


def match_records(records_1: Sequence[DetectionRecord],
                  records_2: Sequence[DetectionRecord],
                  offset_ticks: int) -> list[tuple[int, int, int]]:
    """Pair detections whose ticks differ by exactly the sync offset."""
    by_tick = {r.clock_tick: r for r in records_2}
    matched = []
    for r1 in records_1:
        partner = by_tick.get(r1.clock_tick + offset_ticks)
        if partner is not None:
            matched.append((r1.clock_tick, r1.outcome, partner.outcome))
    return matched


def coincidence_ticks(rng: np.random.Generator, rate_hz: float, duration_s: float,
                      tick_width_s: float, start_tick: int = 0) -> list[int]:
    """Sample the coincidence arrivals of one emission window as sorted,
    distinct integer clock ticks."""
    mean = rate_hz * duration_s
    count = int(rng.poisson(mean)) if mean > 0.0 else 0
    if count == 0:
        return []
    span = max(int(duration_s / tick_width_s), count)
    offsets = rng.choice(span, size=min(count, span), replace=False)
    return sorted(start_tick + int(o) for o in offsets)


@dataclass(frozen=True)
class EntangleOutcome:
    log: EBitLog
    completed: bool
    elapsed_s: float
    cycles: int
    recalibrations: int


def run_entangle_phase(session: SessionContext, rng: np.random.Generator, *,
                       coincidence_rate_hz: float, start_s: float, end_s: float,
                       target_ebits: int, duty_cycle_s: float = 10.0,
                       tick_width_s: float = 1e-9,
                       recalibrate: Optional[Callable[[int], bool]] = None,
                       recal_duration_s: float = 0.05) -> EntangleOutcome:
    """Accumulate matched coincidences until the target count or the end
    of the requested window, recalibrating at the start of each duty cycle.

    ``recalibrate`` is invoked with the cycle index at every cycle start
    after the first; returning False aborts the run (calibration lost).
    """
    log = EBitLog()
    now = start_s
    cycles = 0
    recals = 0
    while len(log) < target_ebits and now < end_s:
        if cycles > 0 and recalibrate is not None:
            recals += 1
            now += recal_duration_s
            if not recalibrate(cycles):
                return EntangleOutcome(log, False, now - start_s, cycles, recals)
            if now >= end_s:
                break
        window = min(duty_cycle_s, end_s - now)
        mean = coincidence_rate_hz * window
        count = int(rng.poisson(mean)) if mean > 0.0 else 0
        if count > 0:
            take = min(count, target_ebits - len(log))
            base_tick = int(now / tick_width_s)
            arrivals = np.sort(rng.random(count))[:take]
            outcomes = rng.integers(0, 2, size=take)
            for frac, outcome in zip(arrivals, outcomes):
                tick = base_tick + int(frac * window / tick_width_s)
                log.append(tick, int(outcome), int(outcome))
            if len(log) >= target_ebits:
                now += float(arrivals[take - 1]) * window
                return EntangleOutcome(log, True, now - start_s, cycles + 1, recals)
        now += window
        cycles += 1
    return EntangleOutcome(log, len(log) >= target_ebits, now - start_s, cycles, recals)
