"""Scenario configuration, Monte-Carlo harness, RMSE tables and CSV output."""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .crb import CrbReport, UnidentifiableScenarioError, compute_crb
from .estimators import ESTIMATORS, EstimationReport, RansacOptions, refine_estimates
from .mlcost import EstimateSet
from .model import ArrayConfig, InvalidScenarioError, SourceParams, generate_snapshots

WORKERS_ENV = "PPSDOA_WORKERS"
SWEEPS = ("snr", "delta_theta", "delta_phi1", "delta_phi2", "sensors")
ORACLE_ESTIMATOR = "refine-from-truth"


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


def snr_to_noise_power(snr_db: float) -> float:
    """sigma^2 = 10^(-SNR/10) for unit-power sources."""
    return 10.0 ** (-snr_db / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    array: ArrayConfig
    sources: tuple
    snr_db: tuple = (10.0,)
    runs: int = 100
    estimator: str = "alg1"
    ransac: RansacOptions = field(default_factory=RansacOptions)
    seed: int = 0
    sweep: str = "snr"
    sweep_values: tuple = ()

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("scenario needs at least one source")
        if len({s.K for s in self.sources}) != 1:
            raise ConfigError("all sources must share the polynomial order")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.sweep not in SWEEPS:
            raise ConfigError(f"unknown sweep {self.sweep!r}; choose from {', '.join(SWEEPS)}")
        if self.estimator not in ESTIMATORS and self.estimator != ORACLE_ESTIMATOR:
            raise ConfigError(f"unknown estimator {self.estimator!r}")

    @property
    def K(self) -> int:
        return self.sources[0].K

    @property
    def L(self) -> int:
        return len(self.sources)

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def points(self) -> list:
        """Sweep values; for the SNR sweep these default to ``snr_db``."""
        if self.sweep == "snr" and not self.sweep_values:
            return list(self.snr_db)
        return list(self.sweep_values)

    def at(self, value) -> tuple["ScenarioConfig", float]:
        """Scenario and SNR for one sweep value.

        Offsets are applied to source 2 relative to source 1, as in the
        two-source resolution experiments.
        """
        snr = self.snr_db[0]
        sc = self
        if self.sweep == "snr":
            snr = float(value)
        elif self.sweep == "sensors":
            sc = self.with_(array=self.array.replace(M=int(value)))
        else:
            if self.L < 2:
                raise ConfigError(f"sweep {self.sweep} needs two sources")
            s1, s2 = self.sources[0], self.sources[1]
            if self.sweep == "delta_theta":
                s2 = replace(s2, theta=s1.theta + math.radians(float(value)))
            else:
                k = 0 if self.sweep == "delta_phi1" else 1
                phi = list(s2.phi)
                phi[k] = s1.phi[k] + float(value)
                s2 = replace(s2, phi=tuple(phi))
            sc = self.with_(sources=(s1, s2) + tuple(self.sources[2:]))
        return sc, snr


# ---------------------------------------------------------------------------
# Built-in scenarios
# ---------------------------------------------------------------------------


def four_source_scenario(**overrides) -> ScenarioConfig:
    """Four-source scenario: M=8, d=1.5 m, c=1500 m/s, 10 ms sampling, N=128, 450 Hz carrier."""
    fc = 450.0
    wc = 2.0 * math.pi * fc
    array = ArrayConfig(M=8, d=1.5, c=1500.0, delta=0.01, N=128, omega_c=wc)
    sources = (
        SourceParams(math.radians(-25.0), (2 * math.pi * (fc - 16), -12.0, 175.0, 12.0), 1.0),
        SourceParams(math.radians(-8.0), (wc, 150.0, 0.0, 0.0), 1j),
        SourceParams(math.radians(8.0), (wc, -150.0, 0.0, 0.0), -1.0),
        SourceParams(math.radians(25.0), (2 * math.pi * (fc + 16), 12.0, -175.0, -12.0), -1j),
    )
    return ScenarioConfig(array, sources, **overrides)


def resolution_scenario(sweep: str, offset: float, **overrides) -> ScenarioConfig:
    """Two quadratic-phase sources; source 2 copies source 1 except for one offset parameter."""
    fc = 450.0
    array = ArrayConfig(M=8, d=1.5, c=1500.0, delta=0.01, N=128, omega_c=2 * math.pi * fc)
    s1 = SourceParams(math.radians(8.0), (2 * math.pi * (fc + 16), -150.0), 1.0)
    s2 = SourceParams(s1.theta, s1.phi, 1j)
    base = ScenarioConfig(array, (s1, s2), snr_db=(20.0,), sweep=sweep, sweep_values=(offset,), **overrides)
    sc, _ = base.at(offset)
    return sc.with_(sweep="snr", sweep_values=())


# ---------------------------------------------------------------------------
# Config files: flat key = value
# ---------------------------------------------------------------------------

_ARRAY_KEYS = {
    "sensors": ("M", int),
    "spacing_m": ("d", float),
    "speed_m_s": ("c", float),
    "delta_s": ("delta", float),
    "snapshots": ("N", int),
}
_RANSAC_KEYS = {
    "lambda": ("lam", int),
    "window": ("H", int),
    "dft": ("F", int),
    "epsilon_percentile": ("epsilon_percentile", float),
    "grid_step_deg": ("angular_grid_step", lambda v: math.radians(float(v))),
    "seed": ("seed", int),
    "interval_halfwidth": ("interval_halfwidth", float),
    "strict_maxima": ("strict_maxima", lambda v: v.lower() in ("1", "true", "yes")),
    "screen_candidates": ("screen_candidates", int),
}


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def parse_config(text: str) -> ScenarioConfig:
    """Parse the key=value scenario format.

    Recognized keys: ``sensors spacing_m speed_m_s delta_s snapshots
    carrier_hz order snr_db runs estimator seed sweep sweep_values``,
    ``ransac.<lambda|window|dft|epsilon_percentile|grid_step_deg|seed|...>``
    and per source ``source.<n>.<theta_deg|phi1_rad_s|freq_offset_hz|phi<k>|amp_re|amp_im>``.
    Angles are in degrees; ``#`` starts a comment.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key or not val:
            raise ConfigError(f"line {lineno}: empty key or value")
        values[key] = val

    used: set[str] = set()

    def take(key, conv=str, default=None):
        if key not in values:
            if default is None:
                raise ConfigError(f"missing key {key!r}")
            return default
        used.add(key)
        try:
            return conv(values[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {values[key]!r}") from exc

    try:
        arr = {name: take(key, conv) for key, (name, conv) in _ARRAY_KEYS.items()}
        fc = take("carrier_hz", float, 0.0)
        array = ArrayConfig(omega_c=2 * math.pi * fc, **arr)
        K = take("order", int)
        ids = sorted({int(k.split(".")[1]) for k in values if k.startswith("source.") and k.count(".") == 2})
        if not ids:
            raise ConfigError("no source.<n>.* keys")
        sources = []
        for n in ids:
            pre = f"source.{n}."
            theta = math.radians(take(pre + "theta_deg", float))
            if pre + "phi1_rad_s" in values:
                phi1 = take(pre + "phi1_rad_s", float)
            else:
                phi1 = 2 * math.pi * (fc + take(pre + "freq_offset_hz", float, 0.0))
            phi = [phi1] + [take(f"{pre}phi{k}", float, 0.0) for k in range(2, K + 1)]
            amp = complex(take(pre + "amp_re", float, 1.0), take(pre + "amp_im", float, 0.0))
            sources.append(SourceParams(theta, tuple(phi), amp))
        ropts = {name: take("ransac." + key, conv) for key, (name, conv) in _RANSAC_KEYS.items()
                 if "ransac." + key in values}
        ransac = RansacOptions(**ropts)
        sc = ScenarioConfig(
            array,
            tuple(sources),
            snr_db=take("snr_db", _floats, (10.0,)),
            runs=take("runs", int, 100),
            estimator=take("estimator", str, "alg1"),
            ransac=ransac,
            seed=take("seed", int, 0),
            sweep=take("sweep", str, "snr"),
            sweep_values=take("sweep_values", _floats, ()),
        )
    except (InvalidScenarioError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    unknown = sorted(set(values) - used)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    return sc


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def format_config(sc: ScenarioConfig) -> str:
    """Inverse of ``parse_config`` (sources written with explicit phi1)."""
    a = sc.array
    lines = [
        f"sensors = {a.M}",
        f"spacing_m = {a.d!r}",
        f"speed_m_s = {a.c!r}",
        f"delta_s = {a.delta!r}",
        f"snapshots = {a.N}",
        f"carrier_hz = {a.omega_c / (2 * math.pi)!r}",
        f"order = {sc.K}",
        f"snr_db = {' '.join(repr(v) for v in sc.snr_db)}",
        f"runs = {sc.runs}",
        f"estimator = {sc.estimator}",
        f"seed = {sc.seed}",
        f"sweep = {sc.sweep}",
    ]
    if sc.sweep_values:
        lines.append(f"sweep_values = {' '.join(repr(v) for v in sc.sweep_values)}")
    for n, s in enumerate(sc.sources, 1):
        lines.append(f"source.{n}.theta_deg = {math.degrees(s.theta)!r}")
        lines.append(f"source.{n}.phi1_rad_s = {s.phi[0]!r}")
        for k in range(2, s.K + 1):
            lines.append(f"source.{n}.phi{k} = {s.phi[k - 1]!r}")
        amp = complex(s.amplitude)
        lines.append(f"source.{n}.amp_re = {amp.real!r}")
        lines.append(f"source.{n}.amp_im = {amp.imag!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Association and RMSE
# ---------------------------------------------------------------------------


def associate_estimates(truth: EstimateSet, est: EstimateSet, crb: CrbReport | None = None) -> tuple:
    """Minimum-cost pairing; ``perm[l]`` is the estimate assigned to true source l.

    Cost is the sum of squared errors over (theta, phi_1..phi_K) divided by
    the parameter's bound variance (unit weights without a bound).
    """
    L = truth.i
    if est.i != L:
        raise ValueError("truth and estimate counts differ")
    if L > 8:
        raise ValueError("brute-force association supports at most 8 sources")
    t = np.vstack([truth.thetas[None, :], truth.phis])
    e = np.vstack([est.thetas[None, :], est.phis])
    var = np.ones_like(t) if crb is None else np.maximum(crb.variances(), 1e-300)
    # cost[l, j] of pairing truth l with estimate j
    cost = (((t[:, :, None] - e[:, None, :]) ** 2) / var[:, :, None]).sum(axis=0)
    best, best_perm = np.inf, tuple(range(L))
    for perm in itertools.permutations(range(L)):
        c = cost[np.arange(L), perm].sum()
        if c < best:
            best, best_perm = c, perm
    return tuple(int(p) for p in best_perm)


def rmse(sq_errors: np.ndarray) -> float:
    """sqrt(1/(R L) sum_r sum_l err^2) for an (R, L) array of squared errors."""
    sq_errors = np.asarray(sq_errors, dtype=float)
    if sq_errors.size == 0:
        return float("nan")
    return float(np.sqrt(sq_errors.mean()))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class RunOutcome:
    index: int
    sq_errors: np.ndarray | None  # (K+1, L), rows theta, phi_1..phi_K
    elapsed: float
    failed: bool


@dataclass
class RmseTable:
    """One row per sweep value."""

    sweep: str
    K: int
    rows: list = field(default_factory=list)

    def columns(self, timing: bool = False) -> list:
        cols = [_sweep_column(self.sweep), "rmse_theta_deg"]
        cols += [f"rmse_phi{k}_{_unit(k)}" for k in range(1, self.K + 1)]
        cols += ["crb_theta_deg"] + [f"crb_phi{k}_{_unit(k)}" for k in range(1, self.K + 1)]
        if timing:
            cols.append("mean_time_s")
        cols += ["failures", "runs"]
        return cols

    def to_csv(self, fh=None, timing: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.columns(timing)
        w.writerow(cols)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in cols])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text

    def rmse_vector(self, i: int) -> np.ndarray:
        row = self.rows[i]
        return np.array([row["rmse_theta_deg"]] + [row[f"rmse_phi{k}_{_unit(k)}"] for k in range(1, self.K + 1)])

    def crb_vector(self, i: int) -> np.ndarray:
        row = self.rows[i]
        return np.array([row["crb_theta_deg"]] + [row[f"crb_phi{k}_{_unit(k)}"] for k in range(1, self.K + 1)])

    def within_crb(self, i: int, factor: float = 2.0) -> bool:
        r, c = self.rmse_vector(i), self.crb_vector(i)
        return bool(np.all(np.isfinite(r)) and np.all(r <= factor * c))


def _unit(k: int) -> str:
    return "rad_s" if k == 1 else f"rad_s{k}"


def _sweep_column(sweep: str) -> str:
    return {
        "snr": "snr_db",
        "delta_theta": "delta_theta_deg",
        "delta_phi1": "delta_phi1_rad_s",
        "delta_phi2": "delta_phi2_rad_s2",
        "sensors": "sensors",
    }[sweep]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _run_seeds(master: int, point: int, runs: int) -> list:
    return np.random.SeedSequence([int(master), int(point)]).spawn(runs)


EstimatorFn = Callable[[np.ndarray, ArrayConfig, int, int, RansacOptions], EstimationReport]


def _one_run(args) -> RunOutcome:
    index, sc, snr, seed_seq, estimator_fn = args
    truth = EstimateSet.from_sources(sc.sources)
    noise_ss, ransac_ss = (np.random.SeedSequence(seed_seq.entropy, spawn_key=seed_seq.spawn_key + (k,)) for k in (0, 1))
    noise_rng = np.random.default_rng(noise_ss)
    ransac_seed = int(ransac_ss.generate_state(1)[0])
    x = generate_snapshots(sc.array, sc.sources, snr_to_noise_power(snr), noise_rng)
    opts = replace(sc.ransac, seed=ransac_seed)
    t0 = time.perf_counter()
    if estimator_fn is not None:
        report = estimator_fn(x.data, sc.array, sc.K, sc.L, opts)
    elif sc.estimator == ORACLE_ESTIMATOR:
        est = refine_estimates(sc.array, EstimateSet(truth.thetas, truth.phis), x, opts.optim)
        report = EstimationReport(est, method=ORACLE_ESTIMATOR)
    else:
        report = ESTIMATORS[sc.estimator](x.data, sc.array, sc.K, sc.L, opts)
    elapsed = time.perf_counter() - t0
    est = report.estimates
    if report.failed or est.i != sc.L:
        return RunOutcome(index, None, elapsed, True)
    return RunOutcome(index, _squared_errors(truth, est, sc), elapsed, False)


def _squared_errors(truth: EstimateSet, est: EstimateSet, sc: ScenarioConfig, crb=None) -> np.ndarray:
    perm = associate_estimates(truth, est, crb)
    est = est.take(perm)
    t = np.vstack([truth.thetas[None, :], truth.phis])
    e = np.vstack([est.thetas[None, :], est.phis])
    return (e - t) ** 2


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV, "").strip()
        workers = int(env) if env else 1
    return max(1, int(workers))


def run_monte_carlo(
    sc: ScenarioConfig,
    workers: int | None = None,
    estimator_fn: EstimatorFn | None = None,
) -> RmseTable:
    """Monte-Carlo RMSE per sweep value with bound and failure columns.

    Run r at sweep point j draws noise and RANSAC seeds from
    ``SeedSequence([seed, j]).spawn(runs)[r]``. Failed runs are excluded from
    the RMSE and counted. Results are reduced in run order, so the table does
    not depend on the worker count.
    """
    workers = resolve_workers(workers)
    table = RmseTable(sc.sweep, sc.K)
    for j, value in enumerate(sc.points()):
        point, snr = sc.at(value)
        seeds = _run_seeds(sc.seed, j, sc.runs)
        jobs = [(r, point, snr, seeds[r], estimator_fn) for r in range(sc.runs)]
        if workers > 1 and estimator_fn is None:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_one_run, jobs))
        else:
            outcomes = [_one_run(job) for job in jobs]
        outcomes.sort(key=lambda o: o.index)
        table.rows.append(_summarize(point, snr, value, outcomes, sc))
    return table


def _summarize(point: ScenarioConfig, snr: float, value, outcomes: Sequence[RunOutcome], sc: ScenarioConfig) -> dict:
    K = sc.K
    ok = [o.sq_errors for o in outcomes if not o.failed]
    row = {_sweep_column(sc.sweep): value if sc.sweep != "sensors" else int(value)}
    if ok:
        stack = np.stack(ok)  # (R_ok, K+1, L)
        vals = [rmse(stack[:, k, :]) for k in range(K + 1)]
    else:
        vals = [float("nan")] * (K + 1)
    vals[0] = math.degrees(vals[0])
    row["rmse_theta_deg"] = vals[0]
    for k in range(1, K + 1):
        row[f"rmse_phi{k}_{_unit(k)}"] = vals[k]
    try:
        agg = compute_crb(point.array, point.sources, snr_to_noise_power(snr)).aggregate_std()
    except UnidentifiableScenarioError:
        agg = np.full(K + 1, np.nan)
    row["crb_theta_deg"] = math.degrees(agg[0])
    for k in range(1, K + 1):
        row[f"crb_phi{k}_{_unit(k)}"] = float(agg[k])
    row["mean_time_s"] = float(np.mean([o.elapsed for o in outcomes]))
    row["failures"] = sum(o.failed for o in outcomes)
    row["runs"] = len(outcomes)
    return row


def crb_row(sc: ScenarioConfig, snr_db: float) -> tuple[list, list]:
    """Header and values of the per-source bound table (one row)."""
    rep = compute_crb(sc.array, sc.sources, snr_to_noise_power(snr_db))
    header, values = ["snr_db"], [float(snr_db)]
    for l in range(sc.L):
        header.append(f"crb_s{l + 1}_theta_deg")
        values.append(math.degrees(rep.theta_std[l]))
        for k in range(1, sc.K + 1):
            header.append(f"crb_s{l + 1}_phi{k}_{_unit(k)}")
            values.append(float(rep.phi_std[k - 1, l]))
    return header, values


def time_estimators(sc: ScenarioConfig, names: Sequence[str], snr_db: float, runs: int) -> dict:
    """Wall-clock seconds per run for each estimator on identical data."""
    seeds = _run_seeds(sc.seed, 0, runs)
    out = {name: [] for name in names}
    for r in range(runs):
        x = generate_snapshots(sc.array, sc.sources, snr_to_noise_power(snr_db), np.random.default_rng(seeds[r]))
        for name in names:
            t0 = time.perf_counter()
            ESTIMATORS[name](x.data, sc.array, sc.K, sc.L, sc.ransac)
            out[name].append(time.perf_counter() - t0)
    return out
