"""Scenario geometry, array responses and single-ray LoS/NLoS channels.

Coordinates are in meters. The HRIS is a planar array in the xz-plane whose
normal points along +y; the BS is a uniform linear array along ``bs_axis``.
Both arrays use half-wavelength element spacing and are centered on their
reference point, so the element offsets sum to zero.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


class GeometryError(ValueError):
    """Raised for geometrically undefined inputs (coincident points, ...)."""


class LinkState(enum.Enum):
    LOS = "LoS"
    NLOS = "NLoS"


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * np.log10(watt) + 30.0


@dataclass(frozen=True)
class Scenario:
    """Physical layout and constants of one HRIS-assisted downlink cell.

    Defaults follow the 50 m x 50 m reference deployment: BS at the midpoint
    of the x = -25 edge, HRIS at the midpoint of the y = 0 edge, both 6 m high.
    """

    bs_center: np.ndarray = field(default_factory=lambda: np.array([-25.0, 25.0, 6.0]))
    ris_center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 6.0]))
    ue_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    M: int = 4
    Nx: int = 8
    Nz: int = 4
    fc: float = 28e9
    tx_power: float = dbm_to_watt(20.0)
    noise_power: float = dbm_to_watt(-80.0)
    beta_los: float = 2.0
    beta_nlos: float = 4.0
    gamma0: float = 1.0
    d0: float = 1.0
    eta: float = 0.8
    area_side: float = 50.0
    blocker_density: float = 0.3
    blocker_height: float = 1.8
    blocker_radius: float = 0.6
    ue_height: float = 1.5
    bs_axis: str = "y"

    def __post_init__(self):
        for name in ("bs_center", "ris_center"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
            object.__setattr__(self, name, arr)
        ue = np.asarray(self.ue_positions, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "ue_positions", ue)
        if min(self.M, self.Nx, self.Nz) < 1:
            raise ValueError("M, Nx and Nz must all be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.fc <= 0 or self.tx_power <= 0 or self.noise_power <= 0:
            raise ValueError("carrier frequency and powers must be positive")
        if self.bs_axis not in _AXES:
            raise ValueError(f"bs_axis must be one of {sorted(_AXES)}, got {self.bs_axis!r}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc

    @property
    def N(self) -> int:
        return self.Nx * self.Nz

    @property
    def K(self) -> int:
        return len(self.ue_positions)

    def with_ues(self, ue_positions) -> "Scenario":
        return replace(self, ue_positions=np.asarray(ue_positions, dtype=float).reshape(-1, 3))

    def bs_element_offsets(self) -> np.ndarray:
        """(M, 3) antenna offsets b_m - b, centered on the array."""
        step = self.wavelength / 2.0
        idx = np.arange(self.M) - (self.M - 1) / 2.0
        return np.outer(idx * step, _AXES[self.bs_axis])

    def ris_element_offsets(self) -> np.ndarray:
        """(N, 3) meta-atom offsets r_n - r, enumerated row-major over (x, z)."""
        step = self.wavelength / 2.0
        ix = (np.arange(self.Nx) - (self.Nx - 1) / 2.0) * step
        iz = (np.arange(self.Nz) - (self.Nz - 1) / 2.0) * step
        xx, zz = np.meshgrid(ix, iz, indexing="ij")
        return np.column_stack([xx.ravel(), np.zeros(self.N), zz.ravel()])


@dataclass(frozen=True)
class LinkStates:
    """Propagation condition of every link in a scenario."""

    bs_ris: LinkState = LinkState.LOS
    bs_ue: tuple = ()
    ris_ue: tuple = ()

    @classmethod
    def all_los(cls, K: int) -> "LinkStates":
        return cls(LinkState.LOS, (LinkState.LOS,) * K, (LinkState.LOS,) * K)

    def counts(self) -> dict:
        states = [self.bs_ris, *self.bs_ue, *self.ris_ue]
        n_nlos = sum(s is LinkState.NLOS for s in states)
        return {"los": len(states) - n_nlos, "nlos": n_nlos}


@dataclass(frozen=True)
class ChannelSet:
    """Realized channels of one trial.

    ``G`` is N x M (BS -> HRIS), ``h`` is K x N with row k the HRIS <-> UE_k
    channel, ``h_d`` is K x M with row k the direct BS -> UE_k channel.
    ``a_ris_bs`` keeps the HRIS response toward the BS, the rank-1 factor of G.
    """

    G: np.ndarray
    h: np.ndarray
    h_d: np.ndarray
    eta: float
    a_ris_bs: np.ndarray
    a_bs_ris: np.ndarray
    gain_bs_ris: float
    link_states: LinkStates = field(default_factory=LinkStates)

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def N(self) -> int:
        return self.G.shape[0]

    @property
    def M(self) -> int:
        return self.G.shape[1]

    def subset(self, ues) -> "ChannelSet":
        ues = list(ues)
        return replace(self, h=self.h[ues], h_d=self.h_d[ues])


def _as3(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    return arr


def wave_vector(p, origin, wavelength: float) -> np.ndarray:
    """Wave vector (rad/m) pointing from ``origin`` toward ``p``."""
    diff = _as3(p) - _as3(origin)
    dist = np.linalg.norm(diff)
    if dist == 0.0:
        raise GeometryError("wave vector undefined for coincident points")
    return (2.0 * np.pi / wavelength) * diff / dist


def _response(offsets: np.ndarray, k: np.ndarray) -> np.ndarray:
    return np.exp(1j * (offsets @ k))


def array_response_bs(scenario: Scenario, p) -> np.ndarray:
    """BS array response toward p, length M, unit-modulus entries."""
    k = wave_vector(p, scenario.bs_center, scenario.wavelength)
    return _response(scenario.bs_element_offsets(), k)


def array_response_ris(scenario: Scenario, p) -> np.ndarray:
    """HRIS array response toward p, length N, unit-modulus entries."""
    k = wave_vector(p, scenario.ris_center, scenario.wavelength)
    return _response(scenario.ris_element_offsets(), k)


def path_gain(p, q, beta: float, gamma0: float = 1.0, d0: float = 1.0) -> float:
    dist = np.linalg.norm(_as3(p) - _as3(q))
    if dist == 0.0:
        raise GeometryError("path gain undefined at zero distance")
    return gamma0 * (d0 / dist) ** beta


def _beta(scenario: Scenario, state: LinkState) -> float:
    return scenario.beta_los if state is LinkState.LOS else scenario.beta_nlos


def build_channels(scenario: Scenario, link_states: LinkStates | None = None) -> ChannelSet:
    """Construct G, h_k and h_D,k for every UE of ``scenario``.

    The model is deterministic: the only randomness of a trial lives in the
    UE drop and the link states, both drawn by the caller.
    """
    K = scenario.K
    if link_states is None:
        link_states = LinkStates.all_los(K)
    if len(link_states.bs_ue) != K or len(link_states.ris_ue) != K:
        raise ValueError(f"need one link state per UE for both UE links (K={K})")
    b, r = scenario.bs_center, scenario.ris_center
    g0, d0 = scenario.gamma0, scenario.d0

    a_r_b = array_response_ris(scenario, b)
    a_b_r = array_response_bs(scenario, r)
    gain_br = path_gain(b, r, _beta(scenario, link_states.bs_ris), g0, d0)
    G = np.sqrt(gain_br) * np.outer(a_r_b, a_b_r.conj())

    h = np.zeros((K, scenario.N), dtype=complex)
    h_d = np.zeros((K, scenario.M), dtype=complex)
    for k, u in enumerate(scenario.ue_positions):
        g_ru = path_gain(u, r, _beta(scenario, link_states.ris_ue[k]), g0, d0)
        g_bu = path_gain(b, u, _beta(scenario, link_states.bs_ue[k]), g0, d0)
        h[k] = np.sqrt(g_ru) * array_response_ris(scenario, u)
        h_d[k] = np.sqrt(g_bu) * array_response_bs(scenario, u)
    return ChannelSet(G=G, h=h, h_d=h_d, eta=scenario.eta, a_ris_bs=a_r_b,
                      a_bs_ris=a_b_r, gain_bs_ris=gain_br, link_states=link_states)


def blockage_probability(length: float, tx_z: float, rx_z: float, scenario: Scenario,
                         *, literal: bool = False) -> float:
    """NLoS probability of a link of 3-D length ``length`` between two heights.

    Blockers are cylinders of height h_B and radius r_B dropped as a PPP of
    intensity lambda_B. Only the part of the horizontal path where the ray is
    below h_B can be blocked; its share is (h_B - z_low) / (z_high - z_low).
    ``literal=True`` evaluates the printed variant whose height ratio is 1.
    """
    dz = abs(tx_z - rx_z)
    if length < dz:
        raise GeometryError(f"path length {length} shorter than height difference {dz}")
    lam_b, r_b, h_b = scenario.blocker_density, scenario.blocker_radius, scenario.blocker_height
    horizontal = np.sqrt(max(length * length - dz * dz, 0.0))
    if literal:
        ratio = 1.0
    else:
        z_hi, z_lo = max(tx_z, rx_z), min(tx_z, rx_z)
        if z_lo >= h_b:
            return 0.0
        ratio = 1.0 if z_hi == z_lo else min((h_b - z_lo) / (z_hi - z_lo), 1.0)
    p = 1.0 - np.exp(-2.0 * lam_b * r_b * (horizontal * ratio + r_b))
    return float(np.clip(p, 0.0, 1.0))


def sample_link_state(p_nlos: float, rng: np.random.Generator) -> LinkState:
    if not 0.0 <= p_nlos <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p_nlos}")
    return LinkState.NLOS if rng.random() < p_nlos else LinkState.LOS
