"""Self-configuration protocol: beam sweeps, peak detection and combining.

The probing phase sweeps a codebook twice, once while the BS sends pilots and
once while the UEs do, and turns the two power profiles into a reflection
configuration without any channel estimate. The communication phase keeps
serving with that configuration while sweeping superposed codewords over the
sectors where nothing was detected.

Codeword and sector indices are 0-based throughout.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import Codebook, hybrid_codebook
from .geometry import ChannelSet, Scenario
from .surface import HrisConfig, quantize_config, sense_power_bs, sense_power_ue

log = logging.getLogger(__name__)

SOURCES = ("bs", "ue")


class DetectionError(RuntimeError):
    """No power peak was found where one is required."""


@dataclass(frozen=True)
class PowerProfile:
    """Detector readings for one sweep, in codeword order.

    ``indices`` holds the base-codebook index of every reading, so profiles
    from permuted or hybrid codebooks keep their sector labels.
    """

    rho: np.ndarray
    source: str
    indices: tuple = ()
    noise_power: float = 0.0
    sweep_seed: int | None = None
    n_sectors: int | None = None

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).ravel()
        if np.any(rho < 0):
            raise ValueError("power readings must be non-negative")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        object.__setattr__(self, "rho", rho)
        if not self.indices:
            object.__setattr__(self, "indices", tuple(range(rho.size)))
        if len(self.indices) != rho.size:
            raise ValueError("one index per reading required")
        if self.n_sectors is None:
            object.__setattr__(self, "n_sectors", max(self.indices, default=-1) + 1)

    def __len__(self) -> int:
        return self.rho.size


@dataclass(frozen=True)
class PeakSet:
    indices: tuple
    threshold_used: float
    weights: tuple = ()

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class ProtocolParams:
    """Tunables of the probing and communication phases.

    ``kappa`` sets the relative threshold; ``absolute_threshold`` (watts)
    switches to the absolute policy. ``n_pilots=None`` uses the noise-free
    expected detector reading. Pilot powers default to the BS transmit power.
    """

    quantization_bits: int | None = None
    combine: str = "hard"
    threshold_policy: str = "relative"
    kappa: float = 0.5
    absolute_threshold: float | None = None
    local_maxima_only: bool = False
    wrap_sectors: bool = False
    n_pilots: int | None = None
    ue_pilot_power: float | None = None

    def __post_init__(self):
        if self.combine not in ("hard", "soft"):
            raise ValueError(f"combine must be 'hard' or 'soft', got {self.combine!r}")
        if self.threshold_policy not in ("relative", "absolute"):
            raise ValueError(f"unknown threshold policy {self.threshold_policy!r}")


@dataclass
class ProbingOutcome:
    config: HrisConfig
    bs_profile: PowerProfile
    ue_profile: PowerProfile
    bs_peaks: PeakSet
    ue_peaks: PeakSet


class TraceLog:
    """Optional per-activation record of sweeps, written as CSV."""

    HEADER = ("trial", "phase", "source", "codeword", "power")

    def __init__(self):
        self.records: list[tuple] = []

    def add(self, trial, phase, source, codeword, power):
        self.records.append((trial, phase, source, int(codeword), float(power)))

    def write(self, path) -> Path:
        path = Path(path)
        try:
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(self.HEADER)
                for trial, phase, source, idx, power in self.records:
                    writer.writerow((trial, phase, source, idx, repr(power)))
        except OSError as exc:
            raise OSError(f"cannot write trace log to {path}: {exc}") from exc
        return path


def sensing_precoder(scenario: Scenario, channels: ChannelSet) -> np.ndarray:
    """Full-power BS steering toward the HRIS, used while the BS sends pilots."""
    a = channels.a_bs_ris
    return np.sqrt(scenario.tx_power) * a / np.linalg.norm(a)


def probe_sweep(codebook: Codebook, channels: ChannelSet, source: str, scenario: Scenario,
                rng: np.random.Generator | None = None, *, active_ues=None,
                params: ProtocolParams | None = None, sweep_seed: int | None = None,
                trace: TraceLog | None = None, trial_id=0, phase: str = "probing") -> PowerProfile:
    """Activate every codeword in order and record the detector power."""
    if codebook.L == 0:
        raise ValueError("cannot sweep an empty codebook")
    params = params or ProtocolParams()
    if params.n_pilots is not None and rng is None:
        rng = np.random.default_rng(sweep_seed)
    if source == "bs":
        w = sensing_precoder(scenario, channels)
    elif source == "ue":
        active = range(channels.K) if active_ues is None else list(active_ues)
        ue_power = scenario.tx_power if params.ue_pilot_power is None else params.ue_pilot_power
    else:
        raise ValueError(f"source must be one of {SOURCES}, got {source!r}")
    rho = np.empty(codebook.L)
    for l, c in enumerate(codebook.codewords):
        cfg = HrisConfig(c, codebook.quantization_bits, channels.eta)
        if source == "bs":
            rho[l] = sense_power_bs(cfg, channels, w, scenario.noise_power,
                                    n_pilots=params.n_pilots, rng=rng)
        else:
            rho[l] = sense_power_ue(cfg, channels, active, scenario.noise_power, ue_power,
                                    n_pilots=params.n_pilots, rng=rng)
        if trace is not None:
            trace.add(trial_id, phase, source, codebook.indices[l], rho[l])
    return PowerProfile(rho, source, codebook.indices, scenario.noise_power, sweep_seed,
                        len(codebook.sectors) if codebook.method != "hybrid" else None)


def select_threshold(profile: PowerProfile, policy: str = "relative", kappa: float = 0.5,
                     absolute: float | None = None) -> float:
    """Detection threshold tau.

    "relative": tau = kappa (max rho - sigma^2) + sigma^2, scale-free across
    path-gain regimes. "absolute": tau = ``absolute``.
    """
    if len(profile) == 0:
        raise ValueError("threshold of an empty profile is undefined")
    if policy == "absolute":
        if absolute is None or absolute <= 0:
            raise ValueError("absolute policy needs a positive threshold")
        return float(absolute)
    if policy != "relative":
        raise ValueError(f"unknown threshold policy {policy!r}")
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    floor = profile.noise_power
    tau = kappa * (profile.rho.max() - floor) + floor
    if tau <= 0:
        # noiseless profile with nothing absorbed
        tau = np.finfo(float).tiny
    return float(tau)


def detect_peaks(profile: PowerProfile, tau: float, local_maxima_only: bool = False,
                 wrap: bool = False) -> PeakSet:
    """Indices whose reading exceeds tau.

    With ``local_maxima_only`` a reading must also be >= the readings of the
    adjacent sectors (sector index +/- 1), so plateaus keep every member. At
    the ends of the scan only one side is compared unless ``wrap``, which
    treats sectors 0 and L-1 as adjacent: with half-wavelength spacing the
    two endfire directions alias onto each other.
    """
    if tau <= 0:
        raise ValueError("threshold must be positive")
    rho = profile.rho
    keep = rho > tau
    if local_maxima_only and rho.size > 1:
        by_index = dict(zip(profile.indices, rho))
        L = profile.n_sectors
        for i, idx in enumerate(profile.indices):
            if not keep[i]:
                continue
            for nb in (idx - 1, idx + 1):
                if wrap and L:
                    nb %= L
                if nb != idx and by_index.get(nb, -np.inf) > rho[i]:
                    keep[i] = False
    pos = np.nonzero(keep)[0]
    return PeakSet(tuple(profile.indices[i] for i in pos), float(tau),
                   tuple(float(rho[i]) for i in pos))


def find_peaks(profile: PowerProfile, params: ProtocolParams) -> PeakSet:
    tau = select_threshold(profile, params.threshold_policy, params.kappa, params.absolute_threshold)
    return detect_peaks(profile, tau, params.local_maxima_only, params.wrap_sectors)


def combine_codewords(codebook: Codebook, peaks: PeakSet, mode: str = "hard") -> np.ndarray:
    """v = sum_i delta_i c_i with delta_i = 1 (hard) or rho_i (soft).

    The result is not normalized; :func:`quantize_config` does that.
    """
    if len(peaks) == 0:
        raise DetectionError("no peak to combine")
    if mode not in ("hard", "soft"):
        raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")
    row = {idx: i for i, idx in enumerate(codebook.indices)}
    try:
        rows = [row[i] for i in peaks.indices]
    except KeyError as exc:
        raise ValueError(f"peak index {exc.args[0]} is not in the codebook") from exc
    weights = np.ones(len(rows)) if mode == "hard" else np.asarray(peaks.weights, dtype=float)
    return weights @ codebook.codewords[rows]


def run_probing(codebook: Codebook, channels: ChannelSet, scenario: Scenario,
                params: ProtocolParams | None = None, rng: np.random.Generator | None = None,
                *, active_ues=None, trace: TraceLog | None = None, trial_id=0) -> ProbingOutcome:
    """BS sweep, then UE sweep, then v_BU = v_B o v_U^* on the phase grid."""
    params = params or ProtocolParams()
    bs_profile = probe_sweep(codebook, channels, "bs", scenario, rng, params=params,
                             trace=trace, trial_id=trial_id)
    ue_profile = probe_sweep(codebook, channels, "ue", scenario, rng, params=params,
                             active_ues=active_ues, trace=trace, trial_id=trial_id)
    bs_peaks = find_peaks(bs_profile, params)
    ue_peaks = find_peaks(ue_profile, params)
    if len(bs_peaks) == 0:
        raise DetectionError("no BS detected")
    if len(ue_peaks) == 0:
        raise DetectionError("no UE detected")
    v_b = combine_codewords(codebook, bs_peaks, params.combine)
    v_u = combine_codewords(codebook, ue_peaks, params.combine)
    v_bu = v_b * v_u.conj()
    # a vanishing entry can only come from exactly cancelling codewords
    v_bu = np.where(np.abs(v_bu) < 1e-12, 1.0, v_bu)
    config = quantize_config(v_bu, params.quantization_bits, eta=channels.eta)
    log.debug("probing: BS peaks %s, UE peaks %s", bs_peaks.indices, ue_peaks.indices)
    return ProbingOutcome(config, bs_profile, ue_profile, bs_peaks, ue_peaks)


def probing_phase(codebook: Codebook, channels: ChannelSet, scenario: Scenario,
                  params: ProtocolParams | None = None,
                  rng: np.random.Generator | None = None) -> HrisConfig:
    """Serving configuration estimated from the two sweeps."""
    return run_probing(codebook, channels, scenario, params, rng).config


@dataclass
class DiscoveryResult:
    profile: PowerProfile
    new_ue_indices: tuple
    reference_power: float
    hybrid: Codebook
    excess: np.ndarray = field(default_factory=lambda: np.zeros(0))


def communication_phase(codebook: Codebook, serving_config: HrisConfig, known_peaks,
                        channels: ChannelSet, scenario: Scenario,
                        params: ProtocolParams | None = None,
                        rng: np.random.Generator | None = None, *, active_ues=None,
                        reference: PowerProfile | None = None, threshold: float | None = None,
                        trace: TraceLog | None = None, trial_id=0) -> DiscoveryResult:
    """Sweep the hybrid codebook over unexplored sectors while serving.

    Sectors whose reading exceeds a baseline by more than ``threshold`` are
    reported as new sources. Without ``reference`` the baseline is a single
    reading of the serving configuration alone. Hybrid codewords absorb
    differently from the already served UEs than the serving configuration
    does, so that baseline can flag sectors with no new source; passing the
    profile of an earlier hybrid sweep as ``reference`` compares each sector
    with itself and isolates arrivals. ``threshold`` (watts of excess)
    defaults to ``kappa`` times the largest excess.
    """
    params = params or ProtocolParams()
    peaks = known_peaks.indices if isinstance(known_peaks, PeakSet) else tuple(known_peaks)
    hybrid = hybrid_codebook(serving_config, codebook, peaks, params.quantization_bits)
    if hybrid.L == 0:
        empty = PowerProfile(np.zeros(0), "ue", (), scenario.noise_power)
        return DiscoveryResult(empty, (), float("nan"), hybrid)
    ref_book = Codebook(np.angle(serving_config.v)[None], np.array([[0.0, np.pi]]), "hybrid",
                        quantization_bits=serving_config.quantization_bits)
    ref = probe_sweep(ref_book, channels, "ue", scenario, rng, params=params,
                      active_ues=active_ues, trace=trace, trial_id=trial_id,
                      phase="reference").rho[0]
    profile = probe_sweep(hybrid, channels, "ue", scenario, rng, params=params,
                          active_ues=active_ues, trace=trace, trial_id=trial_id,
                          phase="communication")
    if reference is not None:
        base = dict(zip(reference.indices, reference.rho))
        try:
            baseline = np.array([base[i] for i in profile.indices])
        except KeyError as exc:
            raise ValueError(f"reference profile lacks sector {exc.args[0]}") from exc
        excess = profile.rho - baseline
    else:
        excess = profile.rho - ref
    if threshold is None:
        threshold = _discovery_threshold(excess, params)
    new = tuple(idx for idx, e in zip(profile.indices, excess) if e > threshold)
    return DiscoveryResult(profile, new, float(ref), hybrid, excess)


def _discovery_threshold(excess: np.ndarray, params: ProtocolParams) -> float:
    if params.threshold_policy == "absolute":
        return float(params.absolute_threshold)
    top = float(np.max(excess, initial=0.0))
    return max(params.kappa * top, np.finfo(float).tiny)
