import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hris.geometry import Scenario, build_channels
from hris.optimize import (aggregate_ue_channel, cauchy_bound_check, equivalent_channel,
                           fp_alternating_optimize, fp_objective, fp_terms, fp_update_mu,
                           oracle_config, rate_from_sinr, receive_amplitudes, rzf_precoder,
                           sinr_all, sinr_k, snr_decomposition, sum_rate, v_b_oracle,
                           v_bu_compose, v_u_oracle)
from hris.surface import HrisConfig, effective_channels, quantize_config

from conftest import random_channels, random_scenario

SIGMA2 = 1e-11


def random_v(rng, n):
    return np.exp(2j * np.pi * rng.random(n))


def no_direct(ch):
    return replace(ch, h_d=np.zeros_like(ch.h_d))


def instance(seed, K=3, **kw):
    rng = np.random.default_rng(seed)
    sc, ch = random_channels(rng, K=K, nlos_prob=0.3, **kw)
    c = HrisConfig(random_v(rng, sc.N))
    W = rzf_precoder(effective_channels(c, ch), sc.tx_power, SIGMA2)
    return sc, ch, c, W


# -- SINR and rate -------------------------------------------------------------

def test_single_ue_sinr_is_snr():
    sc, ch, c, W = instance(0, K=1)
    h = effective_channels(c, ch)[:, 0]
    assert sinr_k(c, ch, W, 0, SIGMA2) == pytest.approx(abs(h.conj() @ W.W[:, 0]) ** 2 / SIGMA2)


def test_orthogonal_direct_channels_no_interference():
    M = 4
    hd = np.eye(M, dtype=complex)[:2] * 1e-3
    sc = Scenario(M=M)
    ch = build_channels(sc.with_ues([[5, 10, 1.5], [-5, 20, 1.5]]))
    ch = replace(ch, h_d=hd)
    c = HrisConfig(np.ones(sc.N), eta=0.0)
    W = hd.conj().T.copy()  # w_k = h_D,k
    s = sinr_all(c, ch, W, SIGMA2)
    np.testing.assert_allclose(s, [abs(hd[k].conj() @ W[:, k]) ** 2 / SIGMA2 for k in range(2)])


def test_sinr_scaling():
    sc, ch, c, W = instance(1)
    amp = np.abs(receive_amplitudes(c, ch, W.W)) ** 2
    amp2 = np.abs(receive_amplitudes(c, ch, 2 * W.W)) ** 2
    np.testing.assert_allclose(amp2, 4 * amp, rtol=1e-12)
    assert np.all(sinr_all(c, ch, 2 * W.W, SIGMA2) > sinr_all(c, ch, W, SIGMA2))
    np.testing.assert_allclose(sinr_all(c, ch, 2 * W.W, 0.0), sinr_all(c, ch, W, 0.0), rtol=1e-9)


def test_rate_examples():
    assert rate_from_sinr([1.0]) == 1.0
    assert rate_from_sinr([3.0, 3.0]) == 4.0
    sc, ch, c, W = instance(2, K=4)
    per = sum(np.log2(1 + sinr_k(c, ch, W, k, SIGMA2)) for k in range(4))
    assert sum_rate(c, ch, W, SIGMA2) == pytest.approx(per, rel=1e-12)
    with pytest.raises(IndexError):
        sinr_k(c, ch, W, 4, SIGMA2)


# -- closed-form configurations ----------------------------------------------

def test_v_b_broadside_is_all_ones():
    sc = Scenario(bs_center=np.array([0.0, 30.0, 6.0]))
    ch = build_channels(sc.with_ues([[3, 10, 1.5]]))
    np.testing.assert_allclose(v_b_oracle(ch).v, np.ones(sc.N), atol=1e-12)


def test_v_b_maximizes_bs_gain(rng):
    sc, ch = random_channels(rng)
    vb = v_b_oracle(ch)
    best = abs(vb.v.conj() @ ch.a_ris_bs)
    assert best == pytest.approx(sc.N, rel=1e-9)
    samples = np.exp(2j * np.pi * rng.random((1000, sc.N)))
    assert np.all(np.abs(samples.conj() @ ch.a_ris_bs) <= best + 1e-9)


def test_v_u_single_ue_variants_coincide(rng):
    sc, ch = random_channels(rng, K=1)
    np.testing.assert_allclose(v_u_oracle(ch, weighted=True).v, v_u_oracle(ch, weighted=False).v)


def test_v_u_alignment_bound(rng):
    sc, ch = random_channels(rng, K=4)
    h = aggregate_ue_channel(ch)
    assert abs(v_u_oracle(ch).v.conj() @ h) == pytest.approx(np.abs(h).sum(), rel=1e-9)
    with pytest.raises(ValueError):
        aggregate_ue_channel(ch, active_ues=[])


def test_weighted_favors_strong_ue():
    sc = Scenario()
    ch = build_channels(sc.with_ues([[4, 3, 1.5], [-20, 40, 1.5]]))
    ratio = np.linalg.norm(ch.h[0]) ** 2 / np.linalg.norm(ch.h[1]) ** 2
    # scale the weak channel to a 100:1 path gain ratio
    h = ch.h.copy()
    h[1] *= np.sqrt(ratio / 100.0)
    ch = replace(ch, h=h)
    strong = ch.h[0]
    w_gain = abs(v_u_oracle(ch, weighted=True).v.conj() @ strong)
    u_gain = abs(v_u_oracle(ch, weighted=False).v.conj() @ strong)
    assert w_gain > u_gain


def test_v_bu_identities(rng):
    sc, ch = random_channels(rng, K=3)
    vb = v_b_oracle(ch)
    np.testing.assert_allclose(v_bu_compose(vb, vb).v, np.ones(sc.N), atol=1e-12)
    np.testing.assert_allclose(v_bu_compose(vb, np.ones(sc.N)).v, vb.v)
    h_hat = equivalent_channel(ch)
    assert abs(oracle_config(ch).v.conj() @ h_hat) == pytest.approx(np.abs(h_hat).sum(), rel=1e-9)
    with pytest.raises(ValueError):
        v_bu_compose(vb, np.ones(sc.N - 1))


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_v_bu_attains_analytic_max_small_surfaces(seed):
    rng = np.random.default_rng(seed)
    sc, ch = random_channels(rng, K=2, Nx=2, Nz=4)
    h_hat = equivalent_channel(ch)
    best = abs(oracle_config(ch).v.conj() @ h_hat)
    assert best == pytest.approx(np.abs(h_hat).sum(), rel=1e-9)
    samples = np.exp(2j * np.pi * rng.random((10_000, sc.N)))
    assert np.max(np.abs(samples.conj() @ h_hat)) <= best * (1 + 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_quantization_gap_bound_exhaustive(seed):
    rng = np.random.default_rng(seed)
    sc, ch = random_channels(rng, K=2, Nx=2, Nz=2)
    h_hat = equivalent_channel(ch)
    Q = 2
    mine = abs(quantize_config(oracle_config(ch).v, Q).v.conj() @ h_hat) ** 2
    grid = np.exp(1j * np.pi / 2 * np.arange(4))
    configs = np.array(list(itertools.product(grid, repeat=sc.N)))
    best = np.max(np.abs(configs.conj() @ h_hat) ** 2)
    assert best <= mine / np.cos(np.pi / 2 ** Q) ** 2 * (1 + 1e-12)


# -- Cauchy-Schwarz ---------------------------------------------------------

def test_cauchy_single_ue_equality(rng):
    sc, ch = random_channels(rng, K=1)
    lhs, rhs = cauchy_bound_check(HrisConfig(random_v(rng, sc.N)), ch, np.ones(sc.M))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_cauchy_k_factor_monte_carlo(rng):
    violations_printed = 0
    for _ in range(1000):
        K = int(rng.integers(2, 6))
        sc, ch = random_channels(rng, K=K)
        w = rng.standard_normal(sc.M) + 1j * rng.standard_normal(sc.M)
        lhs, rhs = cauchy_bound_check(HrisConfig(random_v(rng, sc.N)), ch, w)
        assert lhs <= K * rhs * (1 + 1e-12)
        violations_printed += lhs > rhs
    # without the factor K the bound is violated on a sizeable share of draws
    assert violations_printed > 0


def test_cauchy_equal_terms_attains_k_factor(rng):
    # identical per-UE terms make the K-factor form tight
    sc, ch = random_channels(rng, K=1)
    ch3 = replace(ch, h=np.repeat(ch.h, 3, axis=0), h_d=np.repeat(ch.h_d, 3, axis=0))
    lhs, rhs = cauchy_bound_check(HrisConfig(random_v(rng, sc.N)), ch3, np.ones(sc.M))
    assert lhs == pytest.approx(3 * rhs, rel=1e-12)


# -- SNR decomposition --------------------------------------------------------

def test_snr_decomposition_identity_and_zero_direct(rng):
    sc, ch = random_channels(rng, K=1)
    c = HrisConfig(random_v(rng, sc.N))
    w = rng.standard_normal(sc.M) + 1j * rng.standard_normal(sc.M)
    refl, direct, cross = snr_decomposition(c, ch, w)
    total = abs(effective_channels(c, ch)[:, 0].conj() @ w) ** 2
    assert refl + direct + cross == pytest.approx(total, rel=1e-9)
    refl0, direct0, cross0 = snr_decomposition(c, no_direct(ch), w)
    assert direct0 == 0 and cross0 == 0 and refl0 == pytest.approx(refl)
    with pytest.raises(ValueError):
        snr_decomposition(c, random_channels(rng, K=2)[1], w)


def test_snr_global_phase_sweep(rng):
    sc, ch = random_channels(rng, K=1)
    v = oracle_config(ch).v
    w = rng.standard_normal(sc.M) + 1j * rng.standard_normal(sc.M)
    psis = np.linspace(0, 2 * np.pi, 3601)
    parts = np.array([snr_decomposition(HrisConfig(v * np.exp(1j * p)), ch, w) for p in psis])
    np.testing.assert_allclose(parts[:, 0], parts[0, 0], rtol=1e-9)
    np.testing.assert_allclose(parts[:, 1], parts[0, 1], rtol=1e-9)
    best = psis[np.argmax(parts.sum(axis=1))]
    z_r = np.sqrt(0.8 * ch.gain_bs_ris) * (ch.a_bs_ris.conj() @ w)
    z_d = ch.h_d[0].conj() @ w
    proj = (v * np.exp(1j * best)).conj() @ (ch.h[0].conj() * ch.a_ris_bs)
    assert abs(np.angle(z_r * proj / z_d)) < 2 * np.pi / 3600 * 1.01


# -- fractional programming ---------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_quadratic_transform_identity(seed):
    sc, ch, c, W = instance(seed, K=3)
    mu = fp_update_mu(c, ch, W, SIGMA2)
    assert fp_objective(c, ch, W, SIGMA2, mu) == pytest.approx(sum_rate(c, ch, W, SIGMA2), rel=1e-9)
    A, B = fp_terms(c, ch, W, SIGMA2)
    # B = A - signal loses digits at high SINR
    np.testing.assert_allclose(A, B * (1 + sinr_all(c, ch, W, SIGMA2)), rtol=1e-7)


def test_fp_zero_signal_term(rng):
    sc, ch = random_channels(rng, K=2)
    c = HrisConfig(random_v(rng, sc.N))
    W = np.zeros((sc.M, 2), dtype=complex)
    W[:, 1] = 1e-3
    W[:, 0] = 0.0
    A, B = fp_terms(c, ch, W, SIGMA2)
    assert A[0] == pytest.approx(B[0])
    mu = fp_update_mu(c, ch, W, SIGMA2)
    assert mu[0] == pytest.approx(1 / np.sqrt(B[0]))
    term = np.log2(2 * mu[0] * np.sqrt(A[0]) - mu[0] ** 2 * B[0])
    assert term == pytest.approx(0.0, abs=1e-9)


def test_fp_mu_is_maximizer():
    sc, ch, c, W = instance(3)
    A, B = fp_terms(c, ch, W, SIGMA2)
    mu = np.sqrt(A) / B
    for k in range(len(A)):
        grid = mu[k] * np.linspace(0.5, 1.5, 201)
        terms = np.log2(np.maximum(2 * grid * np.sqrt(A[k]) - grid ** 2 * B[k], 1e-300))
        assert np.argmax(terms) == 100


def test_fp_single_element_grid_optimum():
    rng = np.random.default_rng(11)
    sc, ch = random_channels(rng, K=1, Nx=1, Nz=1)
    W = rzf_precoder(effective_channels(HrisConfig(np.ones(1)), ch), sc.tx_power, SIGMA2)
    state = fp_alternating_optimize(ch, W, SIGMA2)
    grid = np.exp(1j * np.linspace(0, 2 * np.pi, 10_001))
    best = max(sum_rate(HrisConfig(np.array([g])), ch, W, SIGMA2) for g in grid)
    assert sum_rate(state.theta, ch, W, SIGMA2) >= best - 1e-6


def test_fp_fixed_point_terminates_immediately():
    rng = np.random.default_rng(12)
    sc, ch = random_channels(rng, K=1, Nx=1, Nz=1)
    W = rzf_precoder(effective_channels(HrisConfig(np.ones(1)), ch), sc.tx_power, SIGMA2)
    first = fp_alternating_optimize(ch, W, SIGMA2)
    again = fp_alternating_optimize(ch, W, SIGMA2, init=first.theta)
    assert again.iterations == 1


@pytest.mark.parametrize("seed", range(20))
def test_fp_not_worse_than_closed_form_single_ue(seed):
    rng = np.random.default_rng(100 + seed)
    sc, ch = random_channels(rng, K=1)
    ch = no_direct(ch)
    vbu = oracle_config(ch)
    W = rzf_precoder(effective_channels(vbu, ch), sc.tx_power, SIGMA2)
    state = fp_alternating_optimize(ch, W, SIGMA2, init=vbu)
    assert sum_rate(state.theta, ch, W, SIGMA2) >= sum_rate(vbu, ch, W, SIGMA2) - 1e-6


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_fp_trace_monotone(seed):
    sc, ch, c, W = instance(seed, K=3)
    state = fp_alternating_optimize(ch, W, SIGMA2, max_iters=30)
    assert np.all(np.diff(state.objective_trace) >= -1e-9)
    assert np.all(np.abs(state.theta.v) <= 1 + 1e-12)


def test_fp_rejects_bad_arguments():
    sc, ch, c, W = instance(0)
    with pytest.raises(ValueError):
        fp_alternating_optimize(ch, W, SIGMA2, max_iters=0)


# -- RZF -------------------------------------------------------------------------

@given(st.integers(1, 6), st.integers(1, 6), st.floats(1e-3, 10), st.integers(0, 1000))
def test_rzf_power(M, K, P, seed):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K))
    W = rzf_precoder(H, P, 1e-3).W
    assert np.linalg.norm(W, "fro") ** 2 == pytest.approx(P, rel=1e-9)


def test_rzf_scalar():
    h = np.array([[0.3 - 0.4j]])
    W = rzf_precoder(h, 2.0, 0.1).W
    assert W[0, 0] == pytest.approx(np.sqrt(2.0) * h[0, 0] / abs(h[0, 0]))


def test_rzf_zf_limit(rng):
    H = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    W = rzf_precoder(H, 1.0, 1e-14).W
    amp = np.abs(H.conj().T @ W) ** 2
    signal = np.diag(amp)
    off = amp - np.diag(signal)
    assert np.all(off.sum(axis=1) < 1e-6 * signal)


def test_rzf_zero_channel():
    with pytest.raises(ValueError):
        rzf_precoder(np.zeros((2, 2)), 1.0, 1e-3)


@given(st.floats(-3, 3), st.floats(0, 2 * np.pi), st.integers(0, 1000))
def test_rzf_scale_consistency(log_a, phase, seed):
    rng = np.random.default_rng(seed)
    sc, ch = random_channels(rng, K=3)
    c = HrisConfig(random_v(rng, sc.N))
    H = effective_channels(c, ch)
    a = 10 ** log_a * np.exp(1j * phase)
    W1 = rzf_precoder(H, 1.0, 1e-3).W
    W2 = rzf_precoder(a * H, 1.0, 1e-3 * abs(a) ** 2).W
    assert np.linalg.norm(W2, "fro") ** 2 == pytest.approx(1.0, rel=1e-9)
    s = lambda HH, W, n: (lambda P: np.diag(P) / (n + P.sum(1) - np.diag(P)))(
        np.abs(HH.conj().T @ W) ** 2)
    np.testing.assert_allclose(s(a * H, W2, 1e-3 * abs(a) ** 2), s(H, W1, 1e-3), rtol=1e-7)
