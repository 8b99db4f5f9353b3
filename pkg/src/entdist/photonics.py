"""Photon count statistics for pair sources behind lossy paths.

Everything here is a pure function of its inputs plus an explicit numpy
``Generator``, so repeated runs with the same seed reproduce bit-identical
counts. Rates are Poissonian throughout; multi-pair emission and detector
dead time are not modelled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import PhotonicsError


@dataclass(frozen=True)
class DetectorModel:
    """Single-photon detector with efficiency, dark counts, and clock unit.

    ``time_bin_width_s`` is the integer clock unit used when scanning
    electrical delays and when histogramming arrival times.
    """

    efficiency: float = 1.0
    dark_rate_hz: float = 0.0
    time_bin_width_s: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise PhotonicsError(f"detector efficiency must be in (0, 1], got {self.efficiency}")
        if self.dark_rate_hz < 0.0:
            raise PhotonicsError(f"dark rate must be >= 0, got {self.dark_rate_hz}")
        if self.time_bin_width_s <= 0.0:
            raise PhotonicsError(f"time bin width must be > 0, got {self.time_bin_width_s}")


@dataclass(frozen=True)
class Transmittance:
    """Dimensionless power transmittance of an optical path, in [0, 1]."""

    eta: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise PhotonicsError(f"transmittance must be in [0, 1], got {self.eta}")


@dataclass(frozen=True)
class CountSample:
    """One seeded measurement window.

    ``singles`` is the photon contribution (source on), ``noise`` the
    background contribution (dark counts plus any leakage). A detector with
    the source on observes ``singles + noise``; with the source off it
    observes an independent ``noise`` draw.
    """

    duration_s: float
    singles: int
    noise: int

    @property
    def total(self) -> int:
        return self.singles + self.noise


def transmittance_from_loss(loss_db: float) -> Transmittance:
    """Convert a dB loss figure into linear transmittance, eta = 10^(-dB/10)."""
    if loss_db < 0.0:
        raise PhotonicsError(f"loss must be >= 0 dB, got {loss_db}")
    return Transmittance(10.0 ** (-loss_db / 10.0))


def expected_singles(rate_pairs_s: float, eta: Transmittance, detector: DetectorModel,
                     duration_s: float) -> float:
    """Expected detector clicks in a window: pair rate attenuated by the path
    and detector efficiency, plus dark counts."""
    if rate_pairs_s < 0.0 or duration_s < 0.0:
        raise PhotonicsError("rate and duration must be >= 0")
    signal = rate_pairs_s * eta.eta * detector.efficiency * duration_s
    return signal + detector.dark_rate_hz * duration_s


def expected_coincidences(rate_pairs_s: float, eta_1: Transmittance, eta_2: Transmittance,
                          det_1: DetectorModel, det_2: DetectorModel,
                          duration_s: float) -> float:
    """Expected coincidence count for one pair stream split over two arms.

    The product form means loss common to both arms enters twice: 3 dB of
    shared insertion loss costs a factor ~4 in coincidences.
    """
    if rate_pairs_s < 0.0 or duration_s < 0.0:
        raise PhotonicsError("rate and duration must be >= 0")
    return (rate_pairs_s
            * eta_1.eta * det_1.efficiency
            * eta_2.eta * det_2.efficiency
            * duration_s)


def accidental_coincidence_rate(singles_1_hz: float, singles_2_hz: float,
                                window_s: float) -> float:
    """Accidental (uncorrelated) coincidence rate for a timing window."""
    return singles_1_hz * singles_2_hz * window_s


def sample_counts(rate_pairs_s: float, eta: Transmittance, detector: DetectorModel,
                  duration_s: float, rng: np.random.Generator,
                  leakage_rate_hz: float = 0.0) -> CountSample:
    """Draw one measurement window.

    Signal clicks are Poisson around the attenuated pair rate; noise clicks
    are Poisson around dark counts plus leakage. A zero mean always yields
    zero counts.
    """
    if leakage_rate_hz < 0.0:
        raise PhotonicsError("leakage rate must be >= 0")
    signal_mean = rate_pairs_s * eta.eta * detector.efficiency * duration_s
    noise_mean = (detector.dark_rate_hz + leakage_rate_hz) * duration_s
    singles = int(rng.poisson(signal_mean)) if signal_mean > 0.0 else 0
    noise = int(rng.poisson(noise_mean)) if noise_mean > 0.0 else 0
    return CountSample(duration_s=duration_s, singles=singles, noise=noise)


@dataclass(frozen=True)
class NoiseCheck:
    passed: bool
    ratio: float
    reason: str = ""


def noise_ratio_check(signal_counts: int, noise_counts: int, threshold: float) -> NoiseCheck:
    """Pass iff noise/signal is strictly below the threshold.

    Zero signal cannot be ratioed and fails with reason ``no_signal``; a
    ratio exactly equal to the threshold fails (strict inequality).
    """
    if signal_counts <= 0:
        return NoiseCheck(passed=False, ratio=math.inf, reason="no_signal")
    ratio = noise_counts / signal_counts
    if ratio < threshold:
        return NoiseCheck(passed=True, ratio=ratio)
    return NoiseCheck(passed=False, ratio=ratio, reason="noise_ratio")


@dataclass(frozen=True)
class DelayScanModel:
    """Rates seen while hunting the correlation delay.

    ``true_rate_hz`` is the coincidence rate when the electrical delay is
    set correctly; every other delay sees ``accidental_rate_hz`` only.
    A candidate is judged after ``batch_target`` window counts; it is
    "likely" when the counts exceed the accidental baseline by more than
    ``sigma_multiplier * sqrt(batch_target)``, and a second batch must
    confirm it. ``patience`` bounds how long one batch may take, in units
    of the nominal time to collect ``batch_target`` true coincidences.
    """

    true_rate_hz: float
    accidental_rate_hz: float = 0.0
    batch_target: int = 10
    sigma_multiplier: float = 3.0
    patience: float = 3.0

    def __post_init__(self):
        if self.true_rate_hz <= 0.0:
            raise PhotonicsError("true coincidence rate must be > 0")
        if self.accidental_rate_hz < 0.0:
            raise PhotonicsError("accidental rate must be >= 0")
        if self.batch_target < 1:
            raise PhotonicsError("batch target must be >= 1")

    @property
    def batch_cap_s(self) -> float:
        return self.patience * self.batch_target / self.true_rate_hz


@dataclass(frozen=True)
class DelayScanResult:
    offset: Optional[int]
    elapsed_s: float
    batches: int

    @property
    def found(self) -> bool:
        return self.offset is not None


def _scan_batch(correct: bool, model: DelayScanModel,
                rng: np.random.Generator) -> tuple[bool, float]:
    """One accumulate-and-judge batch at a single candidate delay.

    Returns (likely, elapsed seconds). Accumulation stops at
    ``batch_target`` counts or at the batch time cap, whichever first.
    """
    rate = model.true_rate_hz + model.accidental_rate_hz if correct else model.accidental_rate_hz
    cap = model.batch_cap_s
    if rate > 0.0:
        time_to_target = rng.gamma(shape=model.batch_target, scale=1.0 / rate)
    else:
        time_to_target = math.inf
    if time_to_target <= cap:
        counts, elapsed = model.batch_target, float(time_to_target)
    else:
        counts = int(rng.poisson(rate * cap)) if rate > 0.0 else 0
        elapsed = cap
    baseline = model.accidental_rate_hz * elapsed
    likely = (counts - baseline) > model.sigma_multiplier * math.sqrt(model.batch_target)
    return likely, elapsed


def scan_delay(true_offset: int, candidate_range: Sequence[int] | range,
               model: DelayScanModel, rng: np.random.Generator) -> DelayScanResult:
    """Scan candidate integer delays until one is confirmed.

    Candidates are tried in the given order; a delay is returned only after
    two consecutive likely batches. Exhausting the range yields a result
    with ``offset=None`` and the total simulated scan time in ``elapsed_s``.
    """
    elapsed = 0.0
    batches = 0
    for candidate in candidate_range:
        correct = candidate == true_offset
        likely, dt = _scan_batch(correct, model, rng)
        elapsed += dt
        batches += 1
        if not likely:
            continue
        confirmed, dt = _scan_batch(correct, model, rng)
        elapsed += dt
        batches += 1
        if confirmed:
            return DelayScanResult(offset=candidate, elapsed_s=elapsed, batches=batches)
    return DelayScanResult(offset=None, elapsed_s=elapsed, batches=batches)
