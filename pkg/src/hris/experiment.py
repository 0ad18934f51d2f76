"""Monte Carlo harness: scenario drops, the method registry and result files.

Every (sweep value, trial) pair gets its own generator seeded from
``[master_seed, trial]``, so all methods and all sweep values of one trial see
the same random stream (paired comparisons) and a rerun with more trials
reproduces the earlier ones exactly.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from .codebook import Codebook, design_codebook, load_codebook
from .geometry import (ChannelSet, LinkState, LinkStates, Scenario, blockage_probability,
                       build_channels, dbm_to_watt, sample_link_state)
from .optimize import (fp_alternating_optimize, oracle_config, rzf_precoder, sinr_all,
                       sum_rate)
from .protocol import ProtocolParams, run_probing
from .surface import HrisConfig, effective_channels

log = logging.getLogger(__name__)

WORKERS_ENV = "HRIS_WORKERS"
SWEEP_VARIABLES = ("K", "N", "area")
MAX_FAILURE_RATE = 0.10


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo study.

    Scenario fields carry the reference-deployment defaults; ``P_dBm`` and
    ``noise_dBm`` are in dBm. ``epsilon`` is the codebook leakage bound in the
    |v^H a|^2 gain domain (None: 0.1 N).
    """

    # scenario
    M: int = 4
    Nx: int = 8
    Nz: int = 4
    fc: float = 28e9
    P_dBm: float = 20.0
    noise_dBm: float = -80.0
    beta_los: float = 2.0
    beta_nlos: float = 4.0
    gamma0: float = 1.0
    d0: float = 1.0
    eta: float = 0.8
    L: int = 32
    lambda_B: float = 0.3
    h_B: float = 1.8
    r_B: float = 0.6
    u_z: float = 1.5
    area_side: float = 50.0
    K: int = 6
    direct_path: bool = True
    blockage: bool = True
    bs_ris_blockage: bool = False
    # study
    methods: tuple = ("O-MARISA", "O-wMARISA", "wMARISA-Q1", "wMARISA-Q2")
    sweep_variable: str = "K"
    sweep_values: tuple = (2, 6, 10, 14)
    n_trials: int = 100
    seed: int = 0
    output_dir: str = "results"
    # codebook and protocol
    codebook_method: str = "max-min-discretized"
    codebook_file: str | None = None
    epsilon: float | None = None
    grid_density: int = 16
    n_randomizations: int = 100
    kappa: float = 0.5
    local_maxima_only: bool = True
    wrap_sectors: bool = True
    fp_outer_iters: int = 5
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ValueError(f"sweep_variable must be one of {SWEEP_VARIABLES}")
        if not self.sweep_values or any(v <= 0 for v in self.sweep_values):
            raise ValueError("sweep values must be positive")
        if self.sweep_variable == "N" and any(v % self.Nz for v in self.sweep_values):
            raise ValueError(f"N sweep values must be multiples of Nz={self.Nz}")
        for m in self.methods:
            resolve_method(m)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a mapping at top level")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"{path}: unknown keys {unknown}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["sweep_values"] = list(self.sweep_values)
        return out

    def at(self, value) -> "ExperimentConfig":
        """The config with the sweep variable set to ``value``."""
        if self.sweep_variable == "K":
            return replace(self, K=int(value))
        if self.sweep_variable == "N":
            return replace(self, Nx=int(value) // self.Nz)
        return replace(self, area_side=float(value))

    def scenario(self) -> Scenario:
        s = self.area_side
        return Scenario(
            bs_center=np.array([-s / 2.0, s / 2.0, 6.0]), ris_center=np.array([0.0, 0.0, 6.0]),
            M=self.M, Nx=self.Nx, Nz=self.Nz, fc=self.fc, tx_power=dbm_to_watt(self.P_dBm),
            noise_power=dbm_to_watt(self.noise_dBm), beta_los=self.beta_los,
            beta_nlos=self.beta_nlos, gamma0=self.gamma0, d0=self.d0, eta=self.eta,
            area_side=s, blocker_density=self.lambda_B, blocker_height=self.h_B,
            blocker_radius=self.r_B, ue_height=self.u_z)


@dataclass
class TrialMetrics:
    sum_rate: float
    sinr: np.ndarray
    direct_fraction: np.ndarray
    link_counts: dict
    wall_clock: float = 0.0
    power: float = 0.0


@dataclass(frozen=True)
class TrialRecord:
    sweep_value: float
    method: str
    trial: int
    metrics: TrialMetrics | None
    error: str | None = None


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(trial)])


def generate_scenario(config: ExperimentConfig, rng: np.random.Generator):
    """Uniform UE drop over the square area plus blockage-driven link states.

    The BS-HRIS link is LoS unless ``bs_ris_blockage`` subjects it to the same
    model as the UE links.
    """
    base = config.scenario()
    s = config.area_side
    ues = np.column_stack([rng.uniform(-s / 2.0, s / 2.0, config.K),
                           rng.uniform(0.0, s, config.K),
                           np.full(config.K, config.u_z)])
    # keep UEs off the surface plane itself
    ues[:, 1] = np.maximum(ues[:, 1], 1e-3)
    scenario = base.with_ues(ues)
    b, r = scenario.bs_center, scenario.ris_center
    if config.blockage:
        def state(p, q):
            return sample_link_state(
                blockage_probability(float(np.linalg.norm(p - q)), p[2], q[2], scenario), rng)
        bs_ris = state(b, r) if config.bs_ris_blockage else LinkState.LOS
        bs_ue = tuple(state(b, u) for u in ues)
        ris_ue = tuple(state(r, u) for u in ues)
        links = LinkStates(bs_ris, bs_ue, ris_ue)
    else:
        links = LinkStates.all_los(config.K)
    return scenario, links


# -- method registry ------------------------------------------------------------

@dataclass(frozen=True)
class Method:
    name: str
    kind: str            # oracle | probing | fp
    weighted: bool = True
    quantization_bits: int | None = None


def resolve_method(name: str) -> Method:
    """Map a method name to its pipeline; the single place methods are added."""
    if name == "O-MARISA":
        return Method(name, "oracle", weighted=False)
    if name == "O-wMARISA":
        return Method(name, "oracle", weighted=True)
    if name == "FP-benchmark":
        return Method(name, "fp")
    for prefix, weighted in (("wMARISA-Q", True), ("MARISA-Q", False)):
        if name.startswith(prefix):
            try:
                Q = int(name[len(prefix):])
            except ValueError:
                break
            if Q < 1:
                break
            return Method(name, "probing", weighted=weighted, quantization_bits=Q)
    raise ValueError(f"unknown method {name!r}; expected O-MARISA, O-wMARISA, "
                     "MARISA-Q<bits>, wMARISA-Q<bits> or FP-benchmark")


@lru_cache(maxsize=32)
def _cached_codebook(scenario_key, L, method, epsilon, Q, grid_density, n_randomizations, path):
    if path is not None:
        return load_codebook(path).quantized(Q)
    Nx, Nz, area, u_z, fc = scenario_key
    scenario = Scenario(Nx=Nx, Nz=Nz, area_side=area, ue_height=u_z, fc=fc)
    return design_codebook(scenario, L, method, epsilon, Q, grid_density=grid_density,
                           n_randomizations=n_randomizations)


def probing_codebook(config: ExperimentConfig, Q: int | None) -> Codebook:
    key = (config.Nx, config.Nz, float(config.area_side), float(config.u_z), float(config.fc))
    return _cached_codebook(key, config.L, config.codebook_method, config.epsilon, Q,
                            config.grid_density, config.n_randomizations, config.codebook_file)


def direct_power_fraction(config: HrisConfig, channels: ChannelSet, W: np.ndarray) -> np.ndarray:
    """|z_D|^2 / (|z_D|^2 + |z_R|^2) per UE for its own stream.

    z_D = h_D,k^H w_k and z_R = sqrt(eta) h_k^H Theta G w_k; the ratio lies in
    [0, 1] and equals 1 when nothing is reflected.
    """
    z_d = np.einsum("km,mk->k", channels.h_d.conj(), W)
    z_r = np.sqrt(config.eta) * np.einsum(
        "km,mk->k", (channels.h.conj() * config.v.conj()) @ channels.G, W)
    p_d, p_r = np.abs(z_d) ** 2, np.abs(z_r) ** 2
    total = p_d + p_r
    return np.divide(p_d, total, out=np.ones_like(total), where=total > 0)


def _configure(method: Method, config: ExperimentConfig, scenario: Scenario,
               channels: ChannelSet) -> HrisConfig:
    if method.kind == "oracle":
        return oracle_config(channels, weighted=method.weighted)
    if method.kind == "probing":
        Q = method.quantization_bits
        params = ProtocolParams(quantization_bits=Q, combine="soft" if method.weighted else "hard",
                                kappa=config.kappa, local_maxima_only=config.local_maxima_only,
                                wrap_sectors=config.wrap_sectors)
        return run_probing(probing_codebook(config, Q), channels, scenario, params).config
    # FP benchmark: alternate the precoder and the FP surface update from v_BU
    v = oracle_config(channels, weighted=True)
    best, best_rate = v, -np.inf
    for _ in range(config.fp_outer_iters):
        W = rzf_precoder(effective_channels(v, channels), scenario.tx_power, scenario.noise_power)
        rate = sum_rate(v, channels, W, scenario.noise_power)
        if rate > best_rate:
            best, best_rate = v, rate
        v = fp_alternating_optimize(channels, W, scenario.noise_power, init=v).theta
    W = rzf_precoder(effective_channels(v, channels), scenario.tx_power, scenario.noise_power)
    if sum_rate(v, channels, W, scenario.noise_power) > best_rate:
        best = v
    return best


def run_trial(config: ExperimentConfig, scenario: Scenario, channels: ChannelSet,
              method: str) -> TrialMetrics:
    """Configure the surface with ``method``, freeze it, precode and score."""
    start = time.perf_counter()
    m = resolve_method(method)
    if not config.direct_path:
        channels = replace(channels, h_d=np.zeros_like(channels.h_d))
    v = _configure(m, config, scenario, channels)
    W = rzf_precoder(effective_channels(v, channels), scenario.tx_power, scenario.noise_power).W
    power = float(np.linalg.norm(W, "fro") ** 2)
    if abs(power - scenario.tx_power) > 1e-9 * scenario.tx_power:
        raise AssertionError(f"precoder power {power} differs from P={scenario.tx_power}")
    sinr = sinr_all(v, channels, W, scenario.noise_power)
    return TrialMetrics(
        sum_rate=float(np.sum(np.log2(1.0 + sinr))), sinr=sinr,
        direct_fraction=direct_power_fraction(v, channels, W),
        link_counts=channels.link_states.counts(),
        wall_clock=time.perf_counter() - start, power=power)


def _run_unit(args) -> list[TrialRecord]:
    """All methods at one (sweep value, trial); runs inside a worker."""
    config, value, trial = args
    point = config.at(value)
    rng = trial_rng(config.seed, trial)
    scenario, links = generate_scenario(point, rng)
    channels = build_channels(scenario, links)
    out = []
    for method in config.methods:
        try:
            metrics = run_trial(point, scenario, channels, method)
            out.append(TrialRecord(value, method, trial, metrics))
        except Exception as exc:  # recorded per trial, judged in aggregate
            log.warning("trial %d, %s=%s, %s failed: %s", trial, config.sweep_variable,
                        value, method, exc)
            out.append(TrialRecord(value, method, trial, None, f"{type(exc).__name__}: {exc}"))
    return out


def worker_count(config: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return max(1, config.workers)


@dataclass
class ResultTable:
    """Aggregated means per (sweep value, method) plus the raw trial records."""

    sweep_variable: str
    rows: list = field(default_factory=list)      # dicts, see SUMMARY_COLUMNS
    records: list = field(default_factory=list)   # TrialRecord

    def row(self, value, method) -> dict:
        for r in self.rows:
            if r["sweep_value"] == value and r["method"] == method:
                return r
        raise KeyError((value, method))

    def trial_rates(self, value, method) -> np.ndarray:
        recs = [r for r in self.records if r.sweep_value == value and r.method == method]
        recs.sort(key=lambda r: r.trial)
        return np.array([r.metrics.sum_rate if r.metrics else np.nan for r in recs])


def run_experiment(config: ExperimentConfig) -> ResultTable:
    units = [(config, v, t) for v in config.sweep_values for t in range(config.n_trials)]
    n_workers = worker_count(config)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            chunks = list(pool.map(_run_unit, units, chunksize=max(1, len(units) // (4 * n_workers))))
    else:
        chunks = [_run_unit(u) for u in units]
    records = [r for chunk in chunks for r in chunk]
    table = ResultTable(config.sweep_variable, records=records)
    for value in config.sweep_values:
        for method in config.methods:
            recs = [r for r in records if r.sweep_value == value and r.method == method]
            ok = [r.metrics.sum_rate for r in recs if r.metrics is not None]
            failed = len(recs) - len(ok)
            if failed > MAX_FAILURE_RATE * len(recs):
                first = next(r.error for r in recs if r.error)
                raise ExperimentError(f"{method} at {config.sweep_variable}={value}: {failed}/"
                                      f"{len(recs)} trials failed (first: {first})")
            rates = np.array(ok)
            stderr = float(rates.std(ddof=1) / math.sqrt(len(rates))) if len(rates) > 1 else 0.0
            table.rows.append({"sweep_value": value, "method": method,
                               "mean_sum_rate": float(rates.mean()), "stderr": stderr,
                               "n_trials": len(rates), "n_failed": failed})
    return table


# -- persistence ----------------------------------------------------------------

SUMMARY_COLUMNS = ("sweep_variable", "sweep_value", "method", "mean_sum_rate", "stderr",
                   "n_trials", "n_failed")
TRIAL_COLUMNS = ("sweep_variable", "sweep_value", "method", "trial", "ue", "sum_rate",
                 "sinr", "direct_fraction", "n_los", "n_nlos")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def export_results(table: ResultTable, path, fmt: str = "csv") -> tuple[Path, Path]:
    """Write the summary table to ``path`` and per-UE trial rows next to it.

    The trial file is ``<stem>_trials.csv``: one row per UE per successful
    trial, which is what the direct-power CDF needs. Wall-clock times are not
    exported so reruns are byte-identical.
    """
    if fmt != "csv":
        raise ValueError(f"unsupported format {fmt!r} (only 'csv')")
    path = Path(path)
    var = table.sweep_variable
    summary = _write_csv(path, SUMMARY_COLUMNS, (
        (var, r["sweep_value"], r["method"], r["mean_sum_rate"], r["stderr"], r["n_trials"],
         r["n_failed"]) for r in table.rows))
    recs = sorted((r for r in table.records if r.metrics is not None),
                  key=lambda r: (r.sweep_value, r.method, r.trial))

    def rows():
        for r in recs:
            m = r.metrics
            for k in range(len(m.sinr)):
                yield (var, r.sweep_value, r.method, r.trial, k, m.sum_rate, float(m.sinr[k]),
                       float(m.direct_fraction[k]), m.link_counts["los"], m.link_counts["nlos"])
    trials = _write_csv(path.with_name(path.stem + "_trials.csv"), TRIAL_COLUMNS, rows())
    return summary, trials


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def import_results(path) -> ResultTable:
    """Read a summary file written by :func:`export_results`."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = list(reader)
    var = rows[0]["sweep_variable"] if rows else "K"
    table = ResultTable(var)
    for r in rows:
        table.rows.append({"sweep_value": _number(r["sweep_value"]), "method": r["method"],
                           "mean_sum_rate": float(r["mean_sum_rate"]),
                           "stderr": float(r["stderr"]), "n_trials": int(r["n_trials"]),
                           "n_failed": int(r["n_failed"])})
    return table


def read_trials(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: (v if k in ("sweep_variable", "method") else _number(v)) for k, v in r.items()}
                for r in csv.DictReader(fh)]
