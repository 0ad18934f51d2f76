"""Sum-rate metrics, closed-form HRIS configurations and the centralized
fractional-programming benchmark.

Conventions: ``W`` is M x K with column k the precoder of UE k; the
end-to-end channel matrix ``H`` from :func:`hris.surface.effective_channels`
is M x K, and the receive amplitudes are ``H.conj().T @ W``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ChannelSet
from .surface import HrisConfig, effective_channels, reflected_rows


@dataclass(frozen=True)
class PrecoderMatrix:
    W: np.ndarray
    total_power: float


@dataclass
class FpState:
    mu: np.ndarray
    theta: HrisConfig
    objective_trace: list = field(default_factory=list)
    iterations: int = 0


def _W(W) -> np.ndarray:
    return W.W if isinstance(W, PrecoderMatrix) else np.asarray(W)


def receive_amplitudes(config: HrisConfig, channels: ChannelSet, W) -> np.ndarray:
    """K x K matrix; entry (k, j) is the amplitude of stream j at UE k."""
    return effective_channels(config, channels).conj().T @ _W(W)


def sinr_all(config: HrisConfig, channels: ChannelSet, W, noise_power: float) -> np.ndarray:
    power = np.abs(receive_amplitudes(config, channels, W)) ** 2
    signal = np.diag(power)
    interference = power.sum(axis=1) - signal
    return signal / (noise_power + interference)


def sinr_k(config: HrisConfig, channels: ChannelSet, W, k: int, noise_power: float) -> float:
    if not 0 <= k < channels.K:
        raise IndexError(f"UE index {k} out of range for K={channels.K}")
    return float(sinr_all(config, channels, W, noise_power)[k])


def rate_from_sinr(sinr) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(sinr, dtype=float))))


def sum_rate(config: HrisConfig, channels: ChannelSet, W, noise_power: float) -> float:
    """Network sum-rate in bit/s/Hz."""
    return rate_from_sinr(sinr_all(config, channels, W, noise_power))


# -- closed-form configurations ---------------------------------------------

def v_b_oracle(channels: ChannelSet) -> HrisConfig:
    """Configuration maximizing the power absorbed from the BS."""
    return HrisConfig(np.exp(1j * np.angle(channels.a_ris_bs)), None, channels.eta)


def aggregate_ue_channel(channels: ChannelSet, active_ues=None, weighted: bool = True) -> np.ndarray:
    active = range(channels.K) if active_ues is None else list(active_ues)
    h = channels.h[list(active)]
    if len(h) == 0:
        raise ValueError("aggregate UE channel needs at least one active UE")
    if not weighted:
        h = h / np.linalg.norm(h, axis=1, keepdims=True)
    return h.sum(axis=0)


def v_u_oracle(channels: ChannelSet, active_ues=None, weighted: bool = True) -> HrisConfig:
    """Configuration maximizing the power absorbed from the active UEs.

    ``weighted=True`` aligns to sum_k h_k (O-wMARISA); ``weighted=False``
    aligns to sum_k h_k / ||h_k||, i.e. directions only (O-MARISA).
    """
    h_sum = aggregate_ue_channel(channels, active_ues, weighted)
    return HrisConfig(np.exp(1j * np.angle(h_sum)), None, channels.eta)


def v_bu_compose(v_b, v_u) -> HrisConfig:
    """End-to-end reflection v_BU = v_U^* o v_B."""
    eta = v_b.eta if isinstance(v_b, HrisConfig) else 0.8
    b = v_b.v if isinstance(v_b, HrisConfig) else np.asarray(v_b, dtype=complex)
    u = v_u.v if isinstance(v_u, HrisConfig) else np.asarray(v_u, dtype=complex)
    if b.shape != u.shape:
        raise ValueError(f"length mismatch: {b.shape} vs {u.shape}")
    return HrisConfig(u.conj() * b, None, eta)


def equivalent_channel(channels: ChannelSet, active_ues=None, weighted: bool = True) -> np.ndarray:
    """h_hat = h_sum^* o a_R(b), the channel seen by v in the reflected gain."""
    return aggregate_ue_channel(channels, active_ues, weighted).conj() * channels.a_ris_bs


def oracle_config(channels: ChannelSet, weighted: bool = True) -> HrisConfig:
    return v_bu_compose(v_b_oracle(channels), v_u_oracle(channels, weighted=weighted))


def cauchy_bound_check(config: HrisConfig, channels: ChannelSet, w) -> tuple[float, float]:
    """Return (|h_sum^H Theta G w|^2, sum_k |h_k^H Theta G w|^2).

    The vector Cauchy-Schwarz inequality guarantees lhs <= K * rhs.
    """
    per_ue = reflected_rows(config, channels) @ np.asarray(w)
    return float(abs(per_ue.sum()) ** 2), float(np.sum(np.abs(per_ue) ** 2))


def snr_decomposition(config: HrisConfig, channels: ChannelSet, w) -> tuple[float, float, float]:
    """Split the single-UE receive power into reflected, direct and cross terms.

    z_R = sqrt(eta * gamma_br) a_BS(r)^H w carries the reflection coefficient,
    so the three terms add up to |effective_channel^H w|^2.
    """
    if channels.K != 1:
        raise ValueError(f"SNR decomposition is defined for a single UE, got K={channels.K}")
    w = np.asarray(w)
    z_r = np.sqrt(config.eta * channels.gain_bs_ris) * (channels.a_bs_ris.conj() @ w)
    z_d = channels.h_d[0].conj() @ w
    h_hat = channels.h[0].conj() * channels.a_ris_bs
    proj = config.v.conj() @ h_hat
    reflected = abs(z_r) ** 2 * abs(proj) ** 2
    cross = 2.0 * np.real(z_r * proj * np.conj(z_d))
    return float(reflected), float(abs(z_d) ** 2), float(cross)


# -- fractional programming benchmark ---------------------------------------

class _FpModel:
    """Precomputed pieces of A_k(v), B_k(v) for a fixed precoder."""

    def __init__(self, channels: ChannelSet, W: np.ndarray, noise_power: float, eta: float):
        GW = channels.G @ W                                   # N x K
        self.C = channels.h.conj()[:, None, :] * GW.T[None]   # C[k, j] = h_k^* o G w_j
        self.D = channels.h_d.conj() @ W                      # D[k, j] = h_D,k^H w_j
        self.noise = noise_power
        self.s = np.sqrt(eta)

    def amplitudes(self, v):
        return self.s * (self.C @ v.conj()) + self.D

    def ab(self, v):
        power = np.abs(self.amplitudes(v)) ** 2
        A = power.sum(axis=1) + self.noise
        return A, A - np.diag(power)

    def surrogate(self, v, mu):
        A, B = self.ab(v)
        arg = 2.0 * mu * np.sqrt(A) - mu ** 2 * B
        if np.any(arg <= 0.0):
            return -np.inf
        return float(np.sum(np.log2(arg)))

    def surrogate_grad(self, v, mu):
        """Wirtinger gradient d/dv^* of the surrogate for fixed mu."""
        amp = self.amplitudes(v)
        A, B = self.ab(v)
        grad_p = self.s * amp.conj()[:, :, None] * self.C    # d|amp_kj|^2 / dv^*
        grad_a = grad_p.sum(axis=1)
        grad_b = grad_a - grad_p[np.arange(len(A)), np.arange(len(A))]
        arg = 2.0 * mu * np.sqrt(A) - mu ** 2 * B
        coef_a = mu / np.sqrt(A) / (arg * np.log(2.0))
        coef_b = mu ** 2 / (arg * np.log(2.0))
        return coef_a @ grad_a - coef_b @ grad_b

    def rate(self, v):
        A, B = self.ab(v)
        return float(np.sum(np.log2(A / B)))


def fp_terms(config: HrisConfig, channels: ChannelSet, W, noise_power: float):
    """Return (A_k, B_k) for every UE."""
    return _FpModel(channels, _W(W), noise_power, config.eta).ab(config.v)


def fp_update_mu(config: HrisConfig, channels: ChannelSet, W, noise_power: float) -> np.ndarray:
    """Closed-form auxiliary variables mu_k = sqrt(A_k) / B_k."""
    A, B = fp_terms(config, channels, W, noise_power)
    return np.sqrt(A) / B


def fp_objective(config: HrisConfig, channels: ChannelSet, W, noise_power: float, mu) -> float:
    """Quadratic-transform objective sum_k log2(2 mu_k sqrt(A_k) - mu_k^2 B_k)."""
    model = _FpModel(channels, _W(W), noise_power, config.eta)
    return model.surrogate(config.v, np.asarray(mu, dtype=float))


def _project_disc(v):
    mag = np.abs(v)
    return np.where(mag > 1.0, v / np.maximum(mag, 1e-300), v)


def _theta_step(model: _FpModel, v, mu, inner_iters: int, tol: float):
    f = model.surrogate(v, mu)
    for _ in range(inner_iters):
        grad = model.surrogate_grad(v, mu)
        scale = np.max(np.abs(grad))
        if not np.isfinite(scale) or scale == 0.0:
            break
        direction = grad / scale
        step, accepted = 1.0, False
        while step > 1e-10:
            cand = _project_disc(v + step * direction)
            f_new = model.surrogate(cand, mu)
            if f_new > f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        gain = f_new - f
        v, f = cand, f_new
        if gain < tol:
            break
    return v


def fp_alternating_optimize(channels: ChannelSet, W, noise_power: float, max_iters: int = 500,
                            tol: float = 1e-6, init: HrisConfig | None = None,
                            inner_iters: int = 10) -> FpState:
    """Alternate the closed-form mu update with projected gradient ascent on v.

    The trace records the sum-rate after each alternation; it never decreases
    because the mu update is exact and the v step only accepts improvements.
    """
    if max_iters < 1 or tol <= 0:
        raise ValueError("need max_iters >= 1 and tol > 0")
    W = _W(W)
    if init is None:
        init = HrisConfig(np.ones(channels.N, dtype=complex), None, channels.eta)
    model = _FpModel(channels, W, noise_power, init.eta)
    v = init.v.copy()
    rate = model.rate(v)
    if not np.isfinite(rate):
        raise FloatingPointError("non-finite objective at the initial point")
    trace = [rate]
    A, B = model.ab(v)
    mu = np.sqrt(A) / B
    it = 0
    for it in range(1, max_iters + 1):
        v = _theta_step(model, v, mu, inner_iters, tol)
        A, B = model.ab(v)
        mu = np.sqrt(A) / B
        new_rate = float(np.sum(np.log2(A / B)))
        if not np.isfinite(new_rate):
            raise FloatingPointError(f"non-finite objective at iteration {it}")
        trace.append(new_rate)
        if new_rate - rate < tol:
            break
        rate = new_rate
    return FpState(mu=mu, theta=HrisConfig(v, None, init.eta), objective_trace=trace, iterations=it)


# -- precoder ----------------------------------------------------------------

def rzf_precoder(H: np.ndarray, total_power: float, noise_power: float) -> PrecoderMatrix:
    """Regularized zero-forcing with mu = K sigma^2 / P, scaled to ||W||_F^2 = P."""
    H = np.asarray(H, dtype=complex)
    if not np.any(H):
        raise ValueError("RZF precoder needs a non-zero channel matrix")
    M, K = H.shape
    reg = K * noise_power / total_power
    X = np.linalg.solve(H @ H.conj().T + reg * np.eye(M), H)
    W = np.sqrt(total_power) * X / np.linalg.norm(X, "fro")
    return PrecoderMatrix(W, total_power)
