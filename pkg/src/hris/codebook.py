"""Directive probing codebooks for azimuth sweeps.

The sweep covers azimuths phi in [0, pi] (measured from +x in the horizontal
plane, so every direction lies in front of the surface) at one fixed design
elevation. At that elevation the HRIS response factors into an x-part that
depends on phi and a constant z-part, which the designers exploit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Scenario
from .surface import quantize_config, quantize_phases, unit_modulus

log = logging.getLogger(__name__)

METHODS = ("max-min-discretized", "sdr-randomized", "steering", "hybrid")

# design-side headroom below epsilon so verification on denser grids holds
LEAKAGE_MARGIN = 1e-3


@dataclass(frozen=True)
class Codebook:
    """Ordered codewords with their angular sectors.

    ``phases`` (L x N, radians) is the canonical content; codewords are
    exp(1j * phases) so a text round-trip is bit-exact. ``indices`` maps each
    codeword to its sector index in the base codebook (hybrid codebooks
    skip sectors).
    """

    phases: np.ndarray
    sectors: np.ndarray
    method: str
    epsilon: float | None = None
    quantization_bits: int | None = None
    design_elevation: float = 0.0
    indices: tuple = ()
    feasible: tuple = ()

    def __post_init__(self):
        phases = np.atleast_2d(np.asarray(self.phases, dtype=float))
        if phases.size == 0:
            phases = phases.reshape(0, phases.shape[-1] if phases.ndim == 2 else 0)
        sectors = np.asarray(self.sectors, dtype=float).reshape(-1, 2)
        if len(sectors) != len(phases):
            raise ValueError(f"{len(phases)} codewords but {len(sectors)} sectors")
        if self.method not in METHODS:
            raise ValueError(f"unknown codebook method {self.method!r}")
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "sectors", sectors)
        if not self.indices:
            object.__setattr__(self, "indices", tuple(range(len(phases))))

    @property
    def codewords(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    @property
    def L(self) -> int:
        return self.phases.shape[0]

    @property
    def N(self) -> int:
        return self.phases.shape[1]

    def __len__(self) -> int:
        return self.L

    def quantized(self, Q: int | None) -> "Codebook":
        if Q is None or Q == self.quantization_bits:
            return self
        return replace(self, phases=quantize_phases(self.phases, Q), quantization_bits=Q)

    def permuted(self, order) -> "Codebook":
        order = list(order)
        feasible = tuple(self.feasible[i] for i in order) if self.feasible else ()
        return replace(self, phases=self.phases[order], sectors=self.sectors[order],
                       indices=tuple(self.indices[i] for i in order), feasible=feasible)


@dataclass
class CodewordDesign:
    v: np.ndarray
    min_in_band: float
    max_out_band: float
    feasible: bool
    relaxed_value: float | None = None
    iterations: int = 0
    history: list = field(default_factory=list)


def sector_partition(L: int) -> np.ndarray:
    """L contiguous azimuth sectors of width pi / L tiling [0, pi]."""
    if L < 1:
        raise ValueError(f"need at least one sector, got L={L}")
    edges = np.linspace(0.0, np.pi, L + 1)
    return np.column_stack([edges[:-1], edges[1:]])


def design_elevation(scenario: Scenario) -> float:
    """Elevation of a UE at ``ue_height`` half an area side away from the HRIS."""
    return float(np.arctan2(scenario.ue_height - scenario.ris_center[2], scenario.area_side / 2.0))


def azimuth_response(scenario: Scenario, phi, elevation: float) -> np.ndarray:
    """HRIS responses toward azimuths ``phi`` at ``elevation``, shape (len(phi), N)."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    k = (2.0 * np.pi / scenario.wavelength) * np.column_stack([
        np.cos(elevation) * np.cos(phi),
        np.cos(elevation) * np.sin(phi),
        np.full(phi.shape, np.sin(elevation)),
    ])
    return np.exp(1j * k @ scenario.ris_element_offsets().T)


def beam_gain(v, phi, scenario: Scenario, elevation: float | None = None):
    """|v^H a_R(phi)|^2; scalar for scalar phi, array otherwise."""
    if elevation is None:
        elevation = design_elevation(scenario)
    gains = np.abs(azimuth_response(scenario, phi, elevation) @ np.asarray(v).conj()) ** 2
    return float(gains[0]) if np.ndim(phi) == 0 else gains


def default_epsilon(scenario: Scenario) -> float:
    """Leakage threshold 10 dB below N, in the |v^H a|^2 gain domain."""
    return 0.1 * scenario.N


def design_grids(sector, density: int = 16, out_points: int | None = None):
    """In-band and out-of-band azimuth grids for one sector.

    The in-band grid holds ``density`` points including both edges. The
    out-of-band grid spreads ``out_points`` (default 4 x density) points
    uniformly over the complement of the sector in [0, pi] and also contains
    the two sector edges, since the supremum of the gain over the open
    complement is attained there.
    """
    lo, hi = float(sector[0]), float(sector[1])
    if out_points is None:
        out_points = 4 * density
    in_grid = np.linspace(lo, hi, density)
    width = np.pi - (hi - lo)
    if width <= 1e-12:
        return in_grid, np.empty(0)
    step = width / out_points
    offsets = (np.arange(out_points) + 0.5) * step
    below = offsets[offsets < lo]
    above = hi + offsets[offsets >= lo] - lo
    out_grid = np.concatenate([below, above])
    edges = [e for e in (lo, hi) if 0.0 < e < np.pi]
    return in_grid, np.sort(np.concatenate([out_grid, edges]))


def verification_grids(sector, density: int = 16, factor: int = 4):
    """Denser grids for checking a design; the out-of-band set excludes the edges."""
    lo, hi = float(sector[0]), float(sector[1])
    in_grid = np.linspace(lo, hi, density * factor)
    full = np.linspace(0.0, np.pi, 4 * density * factor + 1)
    out_grid = full[(full < lo) | (full > hi)]
    return in_grid, out_grid


def _split_signs(Nz: int) -> np.ndarray:
    n = Nz // 2
    return np.concatenate([np.ones(n), np.zeros(Nz - 2 * n), -np.ones(n)])


def _steered_codeword(scenario: Scenario, sector, elevation: float, level: float | None):
    """x-steering toward the sector's center in cos(phi), times a z-profile.

    The z-profile is the elevation response with phase offsets +/-kappa on
    its lower/upper halves, so |p^H a_z| = 2 n cos(kappa) (+1 for odd Nz).
    kappa is set so the gain at the sector edges equals ``level``.
    """
    lam = scenario.wavelength
    offsets = scenario.ris_element_offsets()
    x_off, z_off = offsets[:, 0], offsets[:, 2]
    u_lo, u_hi = np.cos(sector[1]), np.cos(sector[0])
    u_c = 0.5 * (u_lo + u_hi)
    k0 = 2.0 * np.pi / lam
    x_phase = k0 * np.cos(elevation) * u_c * x_off
    z_phase = k0 * np.sin(elevation) * z_off
    signs = np.tile(_split_signs(scenario.Nz), scenario.Nx)

    # x-pattern at the edge, per unit z-gain
    u_edge = u_hi
    x_edge = abs(np.sum(np.exp(1j * k0 * np.cos(elevation) * (u_edge - u_c)
                               * x_off[::scenario.Nz]))) ** 2
    Nz = scenario.Nz
    z_mag = float(Nz)
    if level is not None and x_edge > 0 and x_edge * Nz ** 2 > level:
        z_mag = np.sqrt(level / x_edge)
    n, r = Nz // 2, Nz % 2
    kappa = 0.0 if n == 0 else float(np.arccos(np.clip((z_mag - r) / (2 * n), -1.0, 1.0)))
    return np.exp(1j * (x_phase + z_phase + kappa * signs))


def _evaluate(v, A_in, A_out):
    g_in = np.abs(A_in @ v.conj()) ** 2
    g_out = np.abs(A_out @ v.conj()) ** 2 if len(A_out) else np.zeros(0)
    return g_in, g_out


def design_codeword_maxmin(sector, scenario: Scenario, epsilon: float | None = None,
                           grid_density: int = 16, *, elevation: float | None = None,
                           out_points: int | None = None, max_iters: int = 200,
                           step0: float = 0.05, penalty: float = 10.0,
                           seed: int = 0, init=None) -> CodewordDesign:
    """Approximate max-min codeword for one sector under a leakage bound.

    Solves max_v min_{phi in sector} |v^H a(phi)|^2 subject to
    |v^H a(phi)|^2 <= epsilon outside the sector on discretized grids. The
    search starts from an edge-leveled steering codeword and runs projected
    subgradient ascent on the unit-modulus phases with a quadratic penalty on
    leakage violations, keeping the best feasible iterate.
    """
    if grid_density < 8:
        raise ValueError(f"grid_density must be >= 8 points per sector, got {grid_density}")
    if epsilon is None:
        epsilon = default_epsilon(scenario)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if elevation is None:
        elevation = design_elevation(scenario)
    in_grid, out_grid = design_grids(sector, grid_density, out_points)
    A_in = azimuth_response(scenario, in_grid, elevation)
    A_out = azimuth_response(scenario, out_grid, elevation) if len(out_grid) else np.zeros((0, scenario.N))

    level = epsilon * (1.0 - LEAKAGE_MARGIN) if len(out_grid) else None
    bound = np.inf if level is None else level * (1.0 + 1e-9)
    if init is None:
        v = _steered_codeword(scenario, sector, elevation, level)
    else:
        v = unit_modulus(np.asarray(init, dtype=complex))
    g_in, g_out = _evaluate(v, A_in, A_out)
    best = CodewordDesign(v, g_in.min(), g_out.max(initial=0.0), g_out.max(initial=0.0) <= bound)

    rng = np.random.default_rng(seed)
    theta = np.angle(v)
    it = 0
    for it in range(1, max_iters + 1):
        i_min = np.argmin(g_in)
        a = A_in[i_min]
        grad = a * (a.conj() @ v)                       # d g_in[i_min] / d v^*
        excess = np.maximum(g_out - bound, 0.0)
        if np.any(excess > 0):
            act = np.nonzero(excess)[0]
            amps = A_out[act].conj() @ v
            grad = grad - penalty * (A_out[act].T * (excess[act] * amps)).sum(axis=1)
        dtheta = np.imag(grad * v.conj())               # chain rule through v = exp(j theta)
        scale = np.max(np.abs(dtheta))
        if scale == 0.0:
            # stationary subgradient: nudge to break symmetric ties
            dtheta = rng.standard_normal(v.size)
            scale = np.max(np.abs(dtheta))
        theta = theta + step0 / np.sqrt(it) * dtheta / scale
        v = np.exp(1j * theta)
        g_in, g_out = _evaluate(v, A_in, A_out)
        feasible = g_out.max(initial=0.0) <= bound
        t = g_in.min()
        if (feasible and (not best.feasible or t > best.min_in_band * (1 + 1e-9))) or \
           (not best.feasible and not feasible and g_out.max() < best.max_out_band):
            best = CodewordDesign(v.copy(), t, g_out.max(initial=0.0), feasible)
    best.iterations = it
    best.feasible = bool(best.max_out_band <= epsilon)
    if not best.feasible:
        log.warning("sector [%.4f, %.4f]: leakage bound %.3g not met (best %.3g)",
                    sector[0], sector[1], epsilon, best.max_out_band)
    return best


def design_codeword_sdr(sector, scenario: Scenario, epsilon: float | None = None,
                        n_randomizations: int = 100, grid_density: int = 16, *,
                        elevation: float | None = None, out_points: int | None = None,
                        unit_diagonal: bool = True, solver: str | None = None,
                        refine: bool = True, seed: int = 0) -> CodewordDesign:
    """Semidefinite relaxation of the max-min design with Gaussian randomization.

    Lifts v to V = v v^H, drops the rank constraint and solves
    max t s.t. a^H V a >= t in band, a^H V a <= epsilon out of band,
    V >= 0 and diag(V) = 1 (``unit_diagonal``) or diag(V) <= 1. Candidates
    drawn from CN(0, V) are projected to unit modulus; the best feasible one
    (or, failing that, the least leaking one) is kept. Tight leakage bounds
    leave V far from rank one and random candidates rarely feasible, so with
    ``refine`` the candidate seeds the penalized ascent of
    :func:`design_codeword_maxmin`.
    """
    import cvxpy as cp

    if n_randomizations < 1:
        raise ValueError("need at least one randomization")
    if epsilon is None:
        epsilon = default_epsilon(scenario)
    if elevation is None:
        elevation = design_elevation(scenario)
    N = scenario.N
    in_grid, out_grid = design_grids(sector, grid_density, out_points)
    A_in = azimuth_response(scenario, in_grid, elevation)
    A_out = azimuth_response(scenario, out_grid, elevation) if len(out_grid) else np.zeros((0, N))

    def lift(A):
        # row i is vec(conj(a_i) a_i^T), so row @ vec(V) = a_i^H V a_i
        return np.einsum("im,in->imn", A.conj(), A).reshape(len(A), N * N)

    V = cp.Variable((N, N), hermitian=True)
    t = cp.Variable()
    vecV = cp.reshape(V, (N * N,), order="C")
    cons = [V >> 0, cp.real(lift(A_in) @ vecV) >= t]
    if len(A_out):
        cons.append(cp.real(lift(A_out) @ vecV) <= epsilon)
    cons.append(cp.real(cp.diag(V)) == 1 if unit_diagonal else cp.real(cp.diag(V)) <= 1)
    prob = cp.Problem(cp.Maximize(t), cons)
    try:
        prob.solve(solver=solver or "CLARABEL")
    except cp.error.SolverError as exc:
        raise RuntimeError(f"SDP solver failed for sector {tuple(sector)} "
                           f"({len(A_in)} in-band, {len(A_out)} leakage constraints)") from exc
    if prob.status not in ("optimal", "optimal_inaccurate") or V.value is None:
        raise RuntimeError(f"SDP {prob.status} for sector {tuple(sector)}: leakage set with "
                           f"{len(A_out)} constraints at epsilon={epsilon:.4g}")

    vals, vecs = np.linalg.eigh(V.value)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_randomizations):
        z = (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / np.sqrt(2.0)
        xi = factor @ z
        if np.any(xi == 0):
            continue
        v = unit_modulus(xi)
        g_in, g_out = _evaluate(v, A_in, A_out)
        leak = g_out.max(initial=0.0)
        cand = CodewordDesign(v, g_in.min(), leak, leak <= epsilon, float(prob.value))
        if best is None or _better(cand, best):
            best = cand
    if refine:
        polished = design_codeword_maxmin(sector, scenario, epsilon, grid_density,
                                          elevation=elevation, out_points=out_points,
                                          max_iters=500, seed=seed, init=best.v)
        polished.relaxed_value = best.relaxed_value
        if _better(polished, best):
            best = polished
    return best


def _better(a: CodewordDesign, b: CodewordDesign) -> bool:
    if a.feasible != b.feasible:
        return a.feasible
    if a.feasible:
        return a.min_in_band > b.min_in_band
    return a.max_out_band < b.max_out_band


def design_codebook(scenario: Scenario, L: int = 32, method: str = "max-min-discretized",
                    epsilon: float | None = None, Q: int | None = None, *,
                    grid_density: int = 16, n_randomizations: int = 100,
                    elevation: float | None = None, seed: int = 0) -> Codebook:
    """Design one codeword per sector with the chosen method."""
    if epsilon is None:
        epsilon = default_epsilon(scenario)
    if elevation is None:
        elevation = design_elevation(scenario)
    if method == "steering":
        return steering_codebook(L, Q, scenario, elevation=elevation)
    sectors = sector_partition(L)
    # Meeting a small leakage bound needs near-total phase cancellation, which a
    # coarse phase grid cannot reproduce; quantized books are designed unleveled.
    design_eps = epsilon if Q is None else np.inf
    phases = []
    for l, sector in enumerate(sectors):
        if method == "max-min-discretized":
            d = design_codeword_maxmin(sector, scenario, design_eps, grid_density,
                                       elevation=elevation, seed=seed + l)
        elif method == "sdr-randomized":
            d = design_codeword_sdr(sector, scenario, design_eps, n_randomizations, grid_density,
                                    elevation=elevation, seed=seed + l)
        else:
            raise ValueError(f"unknown design method {method!r}")
        phases.append(np.angle(d.v))
    book = Codebook(np.array(phases), sectors, method, epsilon, None, elevation).quantized(Q)
    return replace(book, feasible=leakage_feasible(book, scenario, grid_density))


def leakage_feasible(book: Codebook, scenario: Scenario, grid_density: int = 16) -> tuple:
    """Per codeword: out-of-sector gain <= epsilon on the design grid."""
    if book.epsilon is None:
        return ()
    flags = []
    for c, sector in zip(book.codewords, book.sectors):
        _, out_grid = design_grids(sector, grid_density)
        leak = beam_gain(c, out_grid, scenario, book.design_elevation).max(initial=0.0)
        flags.append(bool(leak <= book.epsilon))
    return tuple(flags)


def steering_codebook(L: int, Q: int | None, scenario: Scenario, *,
                      elevation: float | None = None) -> Codebook:
    """Conjugate-steering codewords toward each sector center, quantized."""
    if elevation is None:
        elevation = design_elevation(scenario)
    sectors = sector_partition(L)
    A = azimuth_response(scenario, sectors.mean(axis=1), elevation)
    phases = np.angle(A)
    if Q is not None:
        phases = quantize_phases(phases, Q)
    return Codebook(phases, sectors, "steering", None, Q, elevation)


def hybrid_codebook(v_bu_bar, base: Codebook, peak_indices, Q: int | None = None) -> Codebook:
    """Probing-while-serving codewords for the sectors without a detected peak.

    Each codeword superposes the serving configuration with one unexplored
    base codeword, then projects back to unit modulus and the phase grid.
    """
    serving = np.asarray(getattr(v_bu_bar, "v", v_bu_bar), dtype=complex)
    if Q is None:
        Q = getattr(v_bu_bar, "quantization_bits", None)
    peaks = set(int(i) for i in peak_indices)
    keep = [i for i in range(base.L) if base.indices[i] not in peaks]
    phases = []
    for i in keep:
        probe = base.codewords[i]
        mixed = serving + probe
        # exact cancellation (routine with 1-bit phases) leaves the phase free;
        # split those entries evenly between the two branches
        tied = np.nonzero(np.abs(mixed) < 1e-12)[0]
        mixed[tied[0::2]] = serving[tied[0::2]]
        mixed[tied[1::2]] = probe[tied[1::2]]
        phases.append(np.angle(quantize_config(mixed, Q).v))
    phases = np.array(phases).reshape(len(keep), base.N)
    return Codebook(phases, base.sectors[keep], "hybrid", base.epsilon, Q,
                    base.design_elevation, tuple(base.indices[i] for i in keep))


# -- serialization -------------------------------------------------------------

def save_codebook(book: Codebook, path) -> Path:
    """Write a codebook as '# key: value' headers followed by CSV rows.

    Each row: sector index, sector start, sector end, then N phases in
    radians. Floats use repr() so reading back is bit-exact.
    """
    path = Path(path)
    lines = [
        "# hris-codebook v1",
        f"# N: {book.N}",
        f"# L: {book.L}",
        f"# Q: {'none' if book.quantization_bits is None else book.quantization_bits}",
        f"# epsilon: {'none' if book.epsilon is None else repr(float(book.epsilon))}",
        f"# method: {book.method}",
        f"# design_elevation: {float(book.design_elevation)!r}",
        f"# feasible: {','.join('1' if f else '0' for f in book.feasible)}",
    ]
    for idx, sector, row in zip(book.indices, book.sectors, book.phases):
        vals = [str(int(idx)), repr(float(sector[0])), repr(float(sector[1]))]
        vals += [repr(float(p)) for p in row]
        lines.append(",".join(vals))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write codebook to {path}: {exc}") from exc
    return path


def load_codebook(path) -> Codebook:
    path = Path(path)
    meta, rows = {}, []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            if ":" in line:
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
        elif line.strip():
            rows.append(line.split(","))
    N = int(meta["N"])
    if len(rows) != int(meta["L"]):
        raise ValueError(f"{path}: header says L={meta['L']} but found {len(rows)} rows")
    indices = tuple(int(r[0]) for r in rows)
    sectors = np.array([[float(r[1]), float(r[2])] for r in rows]).reshape(-1, 2)
    phases = np.array([[float(x) for x in r[3:]] for r in rows]).reshape(-1, N)
    Q = None if meta["Q"] == "none" else int(meta["Q"])
    eps = None if meta["epsilon"] == "none" else float(meta["epsilon"])
    feasible = tuple(x == "1" for x in meta.get("feasible", "").split(",") if x)
    return Codebook(phases, sectors, meta["method"], eps, Q, float(meta["design_elevation"]),
                    indices, feasible)
