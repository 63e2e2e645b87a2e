"""Sequential RANSAC/ML estimators for DOA and polynomial-phase coefficients.

``estimate_sequential`` re-derives the beamspace support from the residual of
every sequential step and scores RANSAC candidates with the efficient
i-source ML cost, refining all sources found so far after each step.
``estimate_lowcost`` builds the support once, scores candidates with the
polynomial-phase beamformer, removes each source's one-bin corridor from the
support and refines everything once at the end.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .beamspace import (
    NoSupportError,
    SupportSet,
    TfPoints,
    adjacent_beams,
    adjacent_union,
    dominant_beam,
    frame_range,
    mainlobe_angle,
    remove_points,
    sparse_support,
)
from .mlcost import (
    CandidateInSpanError,
    DegenerateGeometryError,
    EstimateSet,
    cost_and_gradient,
    isource_cost_and_gradient,
    isource_cost_points,
    negative_log_likelihood,
    pp_beamformer_points,
    residual_update,
)
from .model import ArrayConfig, SnapshotBlock, instantaneous_frequency
from .optim import InvalidStartError, OptimOptions, bfgs_minimize

logger = logging.getLogger(__name__)


class EstimationFailure(RuntimeError):
    """No usable candidate for a source."""


class PartitionEmptyError(ValueError):
    pass


class SingularSystemError(ValueError):
    pass


class EmptyIntervalError(ValueError):
    pass


class RefitSkipped(ValueError):
    pass


@dataclass(frozen=True)
class RansacOptions:
    """RANSAC and pre-processing settings.

    ``doa_mode`` is ``"search"`` (grid search on the i-source cost) or
    ``"random"`` (uniform draw from the angular interval).
    """

    lam: int = 500
    angular_grid_step: float = math.radians(1.0)
    seed: int | None = 0
    H: int = 16
    F: int = 64
    epsilon_percentile: float = 90.0
    refine: bool = True
    doa_mode: str = "search"
    strict_maxima: bool = False
    interval_halfwidth: float = 0.5
    refine_stages: tuple = (0.25, 0.5)
    screen_candidates: int = 5
    screen_iters: int = 60
    screen_stages: tuple = (0.2, 0.3, 0.45, 0.65, 0.8)
    optim: OptimOptions = field(default_factory=OptimOptions)

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("lam must be >= 1")
        if self.angular_grid_step <= 0:
            raise ValueError("angular_grid_step must be positive")
        if self.screen_candidates < 1:
            raise ValueError("screen_candidates must be >= 1")
        if self.screen_iters < 1:
            raise ValueError("screen_iters must be >= 1")
        if self.interval_halfwidth < 0:
            raise ValueError("interval_halfwidth must be >= 0")
        if self.doa_mode not in ("search", "random"):
            raise ValueError(f"unknown doa_mode {self.doa_mode!r}")


@dataclass(frozen=True)
class Candidate:
    theta: float
    phi: np.ndarray
    cost: float
    ransac_iter: int
    sample_times: np.ndarray | None = None  # times of the K support points behind phi


@dataclass
class StepDiagnostics:
    source: int
    dominant_beam: int = -1
    n_support: int = 0  # points in the adjacent-beam union
    support_size: int = 0  # points in all beams when the step starts
    n_candidates: int = 0
    n_skipped: int = 0
    selected_lambda: int | None = None
    residual_norm2: float = float("nan")
    refit_used: bool | None = None
    candidate: Candidate | None = None  # RANSAC winner before any screening or refinement


@dataclass
class EstimationReport:
    estimates: EstimateSet
    steps: list = field(default_factory=list)
    elapsed: float = 0.0
    failed: bool = False
    message: str = ""
    method: str = ""


# ---------------------------------------------------------------------------
# RANSAC building blocks
# ---------------------------------------------------------------------------


def partition_bounds(frame_span: tuple[int, int], K: int) -> np.ndarray:
    """Lower edges of K equal time partitions (the last one closes at the final frame)."""
    p_first, p_last = frame_span
    nbar = math.ceil((p_last - p_first) / K) if p_last > p_first else 1
    return p_first + nbar * np.arange(K + 1)


def _partition_members(support: TfPoints, K: int, frame_span) -> list[np.ndarray]:
    edges = partition_bounds(frame_span, K)
    members = []
    for k in range(K):
        lo = edges[k]
        if k == K - 1:
            sel = support.p >= lo
        else:
            sel = (support.p >= lo) & (support.p < edges[k + 1])
        members.append(np.flatnonzero(sel))
    return members


def sample_tf_points(support: TfPoints, K: int, rng, frame_span, size: int | None = None):
    """Draw one support point uniformly from each of K time partitions.

    Returns index arrays into ``support``; shape (K,) or (size, K).
    """
    members = _partition_members(support, K, frame_span)
    if any(m.size == 0 for m in members):
        raise PartitionEmptyError("a time partition holds no support point")
    shape = (1 if size is None else size,)
    cols = [m[rng.integers(0, m.size, size=shape)] for m in members]
    idx = np.stack(cols, axis=-1)
    return idx[0] if size is None else idx


def _derivative_vandermonde(t: np.ndarray, K: int) -> np.ndarray:
    k = np.arange(1, K + 1)
    return k * t[..., None] ** (k - 1)


def fit_polynomial_exact(t, omega, omega_c: float = 0.0) -> np.ndarray:
    """Solve the K x K system omega_j = sum_k k phi_k t_j^(k-1).

    ``omega`` are baseband frequencies; the carrier is added back to phi_1.
    Batched inputs of shape (..., K) are accepted.
    """
    t = np.asarray(t, dtype=float)
    omega = np.asarray(omega, dtype=float)
    K = t.shape[-1]
    V = _derivative_vandermonde(t, K)
    ts = np.sort(t, axis=-1)
    if K > 1 and np.any(np.diff(ts, axis=-1) == 0):
        raise SingularSystemError("repeated time values")
    try:
        phi = np.linalg.solve(V, omega[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    phi[..., 0] += omega_c
    return phi


def refit_ls(t, omega, K: int, omega_c: float = 0.0) -> np.ndarray:
    """Least-squares fit of the K-term derivative polynomial to corridor points."""
    t = np.asarray(t, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if t.size <= K or np.unique(t).size < K:
        raise RefitSkipped(f"need more than K={K} points with K distinct times, got {t.size}")
    V = _derivative_vandermonde(t, K)
    phi, *_ = np.linalg.lstsq(V, omega, rcond=None)
    phi[0] += omega_c
    return phi


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    g = lo + step * np.arange(n)
    if hi - g[-1] > 1e-12:
        g = np.append(g, hi)
    return g


def _track_angles(omega: np.ndarray, b: int, cfg: ArrayConfig, halfwidth: float) -> np.ndarray:
    # mainlobe of beam b and, for halfwidth > 0, the crossovers with its neighbours
    offsets = (0.0,) if halfwidth == 0 else (-halfwidth, 0.0, halfwidth)
    return np.stack([mainlobe_angle(omega, b + o, cfg) for o in offsets], axis=-1)


def angular_interval(phi, b: int, cfg: ArrayConfig, grid_step: float, halfwidth: float = 0.5) -> np.ndarray:
    """Grid spanning the mainlobe angles of beam b along the candidate's frequency track.

    With ``halfwidth = h > 0`` the span also covers the beam positions b - h and
    b + h, so h = 1/2 reaches the crossovers with the adjacent mainlobes; h = 0
    uses beam b alone.
    """
    angles = _track_angles(instantaneous_frequency(phi, cfg.times), b, cfg, halfwidth)
    angles = angles[np.isfinite(angles)]
    if angles.size == 0:
        raise EmptyIntervalError("mainlobe undefined for every snapshot")
    return _grid(float(angles.min()), float(angles.max()), grid_step)


def _interval_bounds(phis: np.ndarray, b: int, cfg: ArrayConfig, halfwidth: float):
    # phis: (C, K) passband
    t = cfg.times
    omega = np.zeros((phis.shape[0], t.size))
    for k in range(phis.shape[1], 0, -1):
        omega = omega * t + k * phis[:, k - 1 : k]
    ang = _track_angles(omega, b, cfg, halfwidth).reshape(phis.shape[0], -1)
    valid = np.isfinite(ang).any(axis=1)
    lo = np.full(phis.shape[0], np.nan)
    hi = np.full(phis.shape[0], np.nan)
    lo[valid] = np.nanmin(ang[valid], axis=1)
    hi[valid] = np.nanmax(ang[valid], axis=1)
    return lo, hi, valid


def candidate_doa_search(grid, phi, state, cfg: ArrayConfig) -> tuple[float, float]:
    """Grid point minimizing the efficient i-source cost (ties: smallest angle)."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyIntervalError("empty grid")
    cost = isource_cost_points(cfg, state, grid, np.zeros(grid.size, dtype=np.intp), np.atleast_2d(phi))
    j = int(np.argmin(cost))
    if not np.isfinite(cost[j]):
        raise EmptyIntervalError("every grid point lies in the span of previous estimates")
    return float(grid[j]), float(cost[j])


def candidate_doa_random(grid, rng) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyIntervalError("empty grid")
    return float(grid[rng.integers(0, grid.size)])


def select_best(candidates, mode: str) -> int:
    """Position of the winning candidate; ``mode`` is 'i-source' (min) or 'single-source' (max)."""
    if not candidates:
        raise EstimationFailure("no surviving RANSAC candidate")
    costs = np.array([c.cost for c in candidates])
    if mode == "i-source":
        return int(np.argmin(costs))
    if mode == "single-source":
        return int(np.argmax(costs))
    raise ValueError(f"unknown selection mode {mode!r}")


def corridor_set(support: TfPoints, phi, delta: float, H: int, F: int, omega_c: float) -> TfPoints:
    """Support points within one window-limited bin of the candidate's baseband frequency track."""
    t = delta * support.p.astype(float)
    omega_q = 2.0 * math.pi * support.q / (delta * F)
    track = instantaneous_frequency(phi, t) - omega_c
    sel = np.abs(track - omega_q) <= 2.0 * math.pi / (delta * H) + 1e-9
    return TfPoints(support.p[sel], support.q[sel], support.mag[sel])


def remove_corridor(support: TfPoints, corridor: TfPoints) -> TfPoints:
    keep = ~np.isin(support.keys(), corridor.keys())
    return TfPoints(support.p[keep], support.q[keep], support.mag[keep])


# ---------------------------------------------------------------------------
# Candidate generation shared by both estimators
# ---------------------------------------------------------------------------


@dataclass
class _Sweep:
    candidates: list
    skipped: int


def _ransac_sweep(
    cfg: ArrayConfig,
    K: int,
    union: TfPoints,
    beam: int,
    opts: RansacOptions,
    rng: np.random.Generator,
    doa_mode: str,
    score: str,
    state=None,
    x=None,
) -> _Sweep:
    lam = opts.lam
    span = frame_range(cfg.N, opts.H)
    try:
        idx = sample_tf_points(union, K, rng, span, size=lam)
    except PartitionEmptyError:
        return _Sweep([], lam)
    t = cfg.delta * union.p[idx].astype(float)
    omega = 2.0 * math.pi * union.q[idx] / (cfg.delta * opts.F)
    V = _derivative_vandermonde(t, K)
    ok = np.ones(lam, dtype=bool)
    if K > 1:
        ok &= np.all(np.diff(np.sort(t, axis=1), axis=1) > 0, axis=1)
    phis = np.zeros((lam, K))
    if ok.any():
        phis[ok] = np.linalg.solve(V[ok], omega[ok][..., None])[..., 0]
    phis[:, 0] += cfg.omega_c

    lo, hi, valid = _interval_bounds(phis, beam, cfg, opts.interval_halfwidth)
    ok &= valid
    rows = np.flatnonzero(ok)
    grids = [_grid(lo[r], hi[r], opts.angular_grid_step) for r in rows]

    if doa_mode == "random":
        picks = rng.random(rows.size)
        thetas = np.array([g[min(int(u * g.size), g.size - 1)] for g, u in zip(grids, picks)])
        owner = rows.astype(np.intp)
        if score == "i-source":
            costs = isource_cost_points(cfg, state, thetas, owner, phis)
        else:
            costs, _ = pp_beamformer_points(cfg, thetas, owner, phis, x)
    else:
        sizes = np.array([g.size for g in grids], dtype=np.intp)
        flat = np.concatenate(grids) if grids else np.zeros(0)
        owner = np.repeat(rows, sizes).astype(np.intp)
        if score == "i-source":
            all_costs = isource_cost_points(cfg, state, flat, owner, phis)
        else:
            all_costs, _ = pp_beamformer_points(cfg, flat, owner, phis, x)
            all_costs = -all_costs
        thetas = np.empty(rows.size)
        costs = np.empty(rows.size)
        start = 0
        for j, n in enumerate(sizes):
            seg = all_costs[start : start + n]
            k = int(np.argmin(seg))
            thetas[j] = flat[start + k]
            costs[j] = seg[k]
            start += n
        if score != "i-source":
            costs = -costs

    candidates = [
        Candidate(float(thetas[j]), phis[r].copy(), float(costs[j]), int(r), t[r].copy())
        for j, r in enumerate(rows)
        if np.isfinite(costs[j])
    ]
    return _Sweep(candidates, lam - len(candidates))


def _scaling(cfg: ArrayConfig, K: int, n_sources: int) -> np.ndarray:
    half = 0.5 * cfg.N * cfg.delta
    per = np.concatenate(([1.0], half ** -np.arange(1, K + 1, dtype=float)))
    return np.tile(per, n_sources)


def _wrap_angles(thetas: np.ndarray) -> np.ndarray:
    # the model only depends on sin(theta)
    return np.arcsin(np.clip(np.sin(thetas), -1.0, 1.0))


def _center_block(cfg: ArrayConfig, x: np.ndarray, fraction: float):
    # centred sub-block keeping the symmetric time origin
    n = max(2, int(round(cfg.N * fraction)))
    n -= (n - cfg.N) % 2
    n = min(n, cfg.N)
    start = cfg.N // 2 - n // 2
    sub = cfg.replace(N=n)
    return sub, x[start * cfg.M : (start + n) * cfg.M]


def _bfgs(cfg: ArrayConfig, est: EstimateSet, x: np.ndarray, base: OptimOptions):
    K = est.K
    opts = OptimOptions(
        max_iters=base.max_iters,
        grad_tol=base.grad_tol,
        armijo_c1=base.armijo_c1,
        backtrack_factor=base.backtrack_factor,
        max_backtracks=base.max_backtracks,
        scaling=_scaling(cfg, K, est.i) if base.scaling is None else base.scaling,
    )

    def fg(vec):
        return cost_and_gradient(cfg, EstimateSet.from_vector(vec, K), x)

    res = bfgs_minimize(None, None, est.to_vector(), opts, fun_and_grad=fg)
    return EstimateSet.from_vector(res.x, K), res.fun


def refine_estimates(
    cfg: ArrayConfig,
    est: EstimateSet,
    x,
    options: OptimOptions | None = None,
    stages: tuple = (),
) -> EstimateSet:
    """Local BFGS search on ||P_perp(A(theta, Phi)) x||^2 from ``est``.

    ``stages`` lists fractions of the snapshot block (centred on the time
    origin) to fit first, coarse to fine. High-order phase errors are small
    near the origin, so short blocks widen the basin of attraction; the last
    pass always uses the full block. A direct search from ``est`` runs as
    well and the lower full-data cost wins, so the result never has a higher
    cost than the direct search alone.
    """
    x = x.data if isinstance(x, SnapshotBlock) else np.asarray(x, dtype=complex)
    base = options or OptimOptions()
    out, fun = _bfgs(cfg, est, x, base)
    stages = tuple(f for f in stages if f < 1.0)
    if stages:
        try:
            cur = est
            for frac in stages:
                sub, xs = _center_block(cfg, x, frac)
                cur, _ = _bfgs(sub, cur, xs, base)
            staged, staged_fun = _bfgs(cfg, cur, x, base)
            if staged_fun < fun:
                out = staged
        except DegenerateGeometryError as exc:
            logger.debug("staged refinement abandoned: %s", exc)
    return EstimateSet(_wrap_angles(out.thetas), out.phis)


def _refine_new_source(cfg: ArrayConfig, state, cand: Candidate, opts: RansacOptions, stages=()):
    # BFGS over the newest source only, earlier estimates held fixed through the residual;
    # ``stages`` holds (cfg, state) pairs of centred sub-blocks fitted first
    K = cand.phi.size
    base = opts.optim
    vec = np.concatenate([[cand.theta], cand.phi])
    res = None
    for c, st in tuple(stages) + ((cfg, state),):
        o = OptimOptions(opts.screen_iters, base.grad_tol, base.armijo_c1, base.backtrack_factor,
                         base.max_backtracks, _scaling(c, K, 1))

        def fg(v, c=c, st=st):
            return isource_cost_and_gradient(c, st, v[0], v[1:])

        res = bfgs_minimize(None, None, vec, o, fun_and_grad=fg)
        vec = res.x
    return res.x, res.fun


def _sub_states(cfg: ArrayConfig, est: EstimateSet, x: np.ndarray, fractions) -> list:
    out = []
    for frac in fractions:
        if frac >= 1.0:
            continue
        sub, xs = _center_block(cfg, x, frac)
        out.append((sub, residual_update(sub, est, xs)))
    return out


def screen_candidates(
    cfg: ArrayConfig,
    state,
    candidates,
    opts: RansacOptions,
    context: tuple | None = None,
) -> Candidate:
    """Refine the newest source of the best few candidates and keep the lowest cost.

    The ``opts.screen_candidates`` lowest-cost distinct candidates are each
    refined with the earlier estimates held fixed; the winner is returned with
    its refined parameters and cost. With ``context = (est, x)``, the earlier
    estimates and the data, each candidate is also fitted coarse to fine on
    the centred sub-blocks of ``opts.screen_stages``; the lower full-block
    cost of the direct and staged fits is kept.
    """
    order = sorted(range(len(candidates)), key=lambda j: (candidates[j].cost, j))
    seen, picked = set(), []
    for j in order:
        c = candidates[j]
        key = (round(c.theta, 12),) + tuple(np.round(c.phi, 9))
        if key in seen:
            continue
        seen.add(key)
        picked.append(c)
        if len(picked) == opts.screen_candidates:
            break
    stage_sets = [()]
    if context is not None and opts.screen_stages:
        try:
            stage_sets.append(_sub_states(cfg, context[0], context[1], opts.screen_stages))
        except DegenerateGeometryError as exc:
            logger.debug("staged screening abandoned: %s", exc)
    best, best_cost = picked[0], np.inf
    for c, stages in itertools.product(picked, stage_sets):
        try:
            vec, fun = _refine_new_source(cfg, state, c, opts, stages)
        except (CandidateInSpanError, InvalidStartError) as exc:
            logger.debug("screening skipped candidate %d: %s", c.ransac_iter, exc)
            continue
        if fun < best_cost:
            theta = float(_wrap_angles(np.array([vec[0]]))[0])
            best, best_cost = Candidate(theta, vec[1:].copy(), float(fun), c.ransac_iter, c.sample_times), fun
    return best


def _step_rng(seed, i: int) -> np.random.Generator:
    # one stream per sequential step: SeedSequence([seed, i])
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng([int(seed), int(i)])


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def estimate_sequential(x, cfg: ArrayConfig, K: int, L: int, opts: RansacOptions | None = None) -> EstimationReport:
    """Sequential estimator scoring candidates with the i-source ML approximation."""
    opts = opts or RansacOptions()
    if L < 1:
        raise ValueError("L must be >= 1")
    x = x.data if isinstance(x, SnapshotBlock) else np.asarray(x, dtype=complex).ravel()
    t0 = time.perf_counter()
    est = EstimateSet.empty(K)
    state = residual_update(cfg, est, x)
    report = EstimationReport(est, method="alg1")
    for i in range(1, L + 1):
        diag = StepDiagnostics(source=i)
        report.steps.append(diag)
        block = SnapshotBlock(state.residual, cfg.M, cfg.N)
        bs = sparse_support(block, cfg.delta, opts.H, opts.F, opts.epsilon_percentile, opts.strict_maxima)
        try:
            b = dominant_beam(bs.support)
        except NoSupportError as exc:
            return _fail(report, est, t0, f"source {i}: {exc}")
        union = adjacent_union(bs.support, b)
        diag.dominant_beam, diag.n_support, diag.support_size = b, len(union), len(bs.support)
        sweep = _ransac_sweep(cfg, K, union, b, opts, _step_rng(opts.seed, i), opts.doa_mode, "i-source", state=state)
        diag.n_candidates, diag.n_skipped = len(sweep.candidates), sweep.skipped
        try:
            best = sweep.candidates[select_best(sweep.candidates, "i-source")]
        except EstimationFailure as exc:
            return _fail(report, est, t0, f"source {i}: {exc}")
        diag.candidate = best
        if opts.refine and opts.screen_candidates > 1:
            best = screen_candidates(cfg, state, sweep.candidates, opts, (est, x))
        diag.selected_lambda = best.ransac_iter
        trial = est.append(best.theta, best.phi)
        if opts.refine:
            try:
                trial = refine_estimates(cfg, trial, x, opts.optim, opts.refine_stages)
            except DegenerateGeometryError as exc:
                logger.debug("refinement skipped at source %d: %s", i, exc)
        try:
            state = residual_update(cfg, trial, x)
        except DegenerateGeometryError as exc:
            return _fail(report, est, t0, f"source {i}: {exc}")
        est = trial
        diag.residual_norm2 = state.norm2
    report.estimates = est
    report.elapsed = time.perf_counter() - t0
    return report


def estimate_lowcost(x, cfg: ArrayConfig, K: int, L: int, opts: RansacOptions | None = None) -> EstimationReport:
    """Low-cost estimator: one beamspace pass, random DOA draws and corridor elimination."""
    opts = opts or RansacOptions(doa_mode="random")
    if L < 1:
        raise ValueError("L must be >= 1")
    x = x.data if isinstance(x, SnapshotBlock) else np.asarray(x, dtype=complex).ravel()
    t0 = time.perf_counter()
    bs = sparse_support(SnapshotBlock(x, cfg.M, cfg.N), cfg.delta, opts.H, opts.F,
                        opts.epsilon_percentile, opts.strict_maxima)
    support: SupportSet = bs.support
    est = EstimateSet.empty(K)
    report = EstimationReport(est, method="alg2")
    for i in range(1, L + 1):
        diag = StepDiagnostics(source=i)
        report.steps.append(diag)
        try:
            b = dominant_beam(support)
        except NoSupportError as exc:
            return _fail(report, est, t0, f"source {i}: {exc}")
        union = adjacent_union(support, b)
        diag.dominant_beam, diag.n_support, diag.support_size = b, len(union), len(support)
        sweep = _ransac_sweep(cfg, K, union, b, opts, _step_rng(opts.seed, i), "random", "single-source", x=x)
        diag.n_candidates, diag.n_skipped = len(sweep.candidates), sweep.skipped
        try:
            best = sweep.candidates[select_best(sweep.candidates, "single-source")]
        except EstimationFailure as exc:
            return _fail(report, est, t0, f"source {i}: {exc}")
        diag.candidate = best
        diag.selected_lambda = best.ransac_iter
        corridor = corridor_set(union, best.phi, cfg.delta, opts.H, opts.F, cfg.omega_c)
        phi = best.phi
        try:
            t = cfg.delta * corridor.p.astype(float)
            omega = 2.0 * math.pi * corridor.q / (cfg.delta * opts.F)
            phi = refit_ls(t, omega, K, cfg.omega_c)
            diag.refit_used = True
        except RefitSkipped:
            diag.refit_used = False
        support = remove_points(support, corridor, beams=adjacent_beams(b, support.n_beams))
        est = est.append(best.theta, phi)
        try:
            diag.residual_norm2 = negative_log_likelihood(cfg, est, x)
        except DegenerateGeometryError:
            diag.residual_norm2 = float("nan")
    if opts.refine:
        try:
            est = refine_estimates(cfg, est, x, opts.optim, opts.refine_stages)
        except DegenerateGeometryError as exc:
            logger.debug("final refinement skipped: %s", exc)
    report.estimates = est
    report.elapsed = time.perf_counter() - t0
    return report


def _fail(report: EstimationReport, est: EstimateSet, t0: float, message: str) -> EstimationReport:
    report.estimates = est
    report.failed = True
    report.message = message
    report.elapsed = time.perf_counter() - t0
    logger.info("estimation failed: %s", message)
    return report


ESTIMATORS = {
    "alg1": lambda x, cfg, K, L, o: estimate_sequential(x, cfg, K, L, o),
    "alg1-random-doa": lambda x, cfg, K, L, o: estimate_sequential(x, cfg, K, L, _with(o, doa_mode="random")),
    "alg1-no-refine": lambda x, cfg, K, L, o: estimate_sequential(x, cfg, K, L, _with(o, refine=False)),
    "alg2": lambda x, cfg, K, L, o: estimate_lowcost(x, cfg, K, L, o),
    "alg2-no-refine": lambda x, cfg, K, L, o: estimate_lowcost(x, cfg, K, L, _with(o, refine=False)),
}


def _with(opts: RansacOptions, **changes) -> RansacOptions:
    from dataclasses import replace

    return replace(opts, **changes)


def run_estimator(name: str, x, cfg: ArrayConfig, K: int, L: int, opts: RansacOptions | None = None) -> EstimationReport:
    if name not in ESTIMATORS:
        raise KeyError(f"unknown estimator {name!r}; choose from {sorted(ESTIMATORS)}")
    report = ESTIMATORS[name](x, cfg, K, L, opts or RansacOptions())
    report.method = name
    return report
