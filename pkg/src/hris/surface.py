"""HRIS configurations, phase quantization and the power-sensing model.

A configuration is the vector v with Theta = diag(v^H). A fraction eta of the
impinging power is reflected, the remaining 1 - eta is routed to a single
power detector after the same per-element phase shift.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ChannelSet

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class HrisConfig:
    v: np.ndarray
    quantization_bits: int | None = None
    eta: float = 0.8

    def __post_init__(self):
        v = np.asarray(self.v, dtype=complex).ravel()
        if np.any(np.abs(v) > 1.0 + 1e-9):
            raise ValueError("configuration entries must satisfy |v_i| <= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        object.__setattr__(self, "v", v)

    @property
    def N(self) -> int:
        return self.v.size

    @property
    def theta(self) -> np.ndarray:
        """The diagonal reflection matrix diag(v^H)."""
        return np.diag(self.v.conj())

    def with_eta(self, eta: float) -> "HrisConfig":
        return HrisConfig(self.v, self.quantization_bits, eta)


def unit_modulus(v) -> np.ndarray:
    """Project entry-wise onto the unit circle; zero entries are an error."""
    v = np.asarray(v, dtype=complex)
    mag = np.abs(v)
    if np.any(mag == 0.0):
        raise ValueError("cannot normalize a zero entry: phase undefined")
    return v / mag


def quantization_set(Q: int, *, literal: bool = False) -> np.ndarray:
    """Phases available with Q control bits.

    The default is 2**Q uniformly spaced phases on [0, 2*pi). ``literal=True``
    returns the 2**(Q-1) + 1 phases 2*pi*m / 2**Q, m = 0..2**(Q-1).
    """
    if Q < 1:
        raise ValueError(f"need at least one quantization bit, got Q={Q}")
    step = _TWO_PI / 2 ** Q
    count = 2 ** (Q - 1) + 1 if literal else 2 ** Q
    return step * np.arange(count)


def quantize_phases(phase: np.ndarray, Q: int, *, literal: bool = False) -> np.ndarray:
    """Snap phases to the nearest grid point; ties go to the smaller phase."""
    phase = np.mod(np.asarray(phase, dtype=float), _TWO_PI)
    if not literal:
        n = 2 ** Q
        idx = np.ceil(phase / (_TWO_PI / n) - 0.5)
        return (_TWO_PI / n) * np.mod(idx, n)
    grid = quantization_set(Q, literal=True)
    diff = np.abs(phase[..., None] - grid)
    dist = np.minimum(diff, _TWO_PI - diff)
    # argmin returns the first (smallest-phase) index among ties
    return grid[np.argmin(dist, axis=-1)]


def quantize_config(v, Q: int | None, *, eta: float = 0.8, literal: bool = False) -> HrisConfig:
    """Unit-modulus projection followed by phase quantization (Q=None: none)."""
    u = unit_modulus(v)
    if Q is None:
        return HrisConfig(u, None, eta)
    return HrisConfig(np.exp(1j * quantize_phases(np.angle(u), Q, literal=literal)), Q, eta)


def reflected_rows(config: HrisConfig, channels: ChannelSet) -> np.ndarray:
    """K x M matrix whose row k is h_k^H Theta G."""
    return (channels.h.conj() * config.v.conj()) @ channels.G


def effective_channels(config: HrisConfig, channels: ChannelSet) -> np.ndarray:
    """M x K matrix H whose column k is the end-to-end channel of UE k.

    The noiseless receive amplitude of UE k under precoder w is H[:, k]^H w.
    """
    rows = np.sqrt(config.eta) * reflected_rows(config, channels) + channels.h_d.conj()
    return rows.conj().T


def effective_channel(config: HrisConfig, channels: ChannelSet, k: int) -> np.ndarray:
    if not 0 <= k < channels.K:
        raise IndexError(f"UE index {k} out of range for K={channels.K}")
    row = (np.sqrt(config.eta) * (channels.h[k].conj() * config.v.conj()) @ channels.G
           + channels.h_d[k].conj())
    return row.conj()


def _detector(amplitude: complex, eta: float, noise_power: float, pilot_power: float,
              n_pilots: int | None, rng: np.random.Generator | None) -> float:
    signal = np.sqrt((1.0 - eta) * pilot_power) * amplitude
    if n_pilots is None:
        return float((1.0 - eta) * pilot_power * abs(amplitude) ** 2 + noise_power)
    if rng is None:
        raise ValueError("finite-sample sensing needs a random generator")
    noise = np.sqrt(noise_power / 2.0) * (rng.standard_normal(n_pilots)
                                          + 1j * rng.standard_normal(n_pilots))
    return float(np.mean(np.abs(signal + noise) ** 2))


def sense_power_bs(config: HrisConfig, channels: ChannelSet, w: np.ndarray, noise_power: float,
                   pilot_power: float = 1.0, *, n_pilots: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Detector reading while the BS sends a pilot through precoder ``w``.

    Expected value (1 - eta) |v^H G w|^2 E|s|^2 + sigma^2 by default; pass
    ``n_pilots`` to average that many noisy pilot observations instead.
    """
    amplitude = config.v.conj() @ (channels.G @ np.asarray(w))
    return _detector(amplitude, config.eta, noise_power, pilot_power, n_pilots, rng)


def sense_power_ue(config: HrisConfig, channels: ChannelSet, active_ues, noise_power: float,
                   pilot_power: float = 1.0, *, n_pilots: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Detector reading while the active UEs send simultaneous pilots."""
    active = list(active_ues)
    h_sum = channels.h[active].sum(axis=0) if active else np.zeros(channels.N, dtype=complex)
    amplitude = config.v.conj() @ h_sum
    return _detector(amplitude, config.eta, noise_power, pilot_power, n_pilots, rng)
