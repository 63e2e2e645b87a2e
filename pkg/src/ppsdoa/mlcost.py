"""Concentrated ML cost family for the stacked polynomial-phase model.

All projections go through a thin QR factorization of the response matrix;
the same factor serves amplitude concentration, residuals, the efficient
i-source cost and the analytic gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .model import ArrayConfig, SnapshotBlock, SourceParams, response_matrix

RANK_COND_LIMIT = 1e12
SPAN_TOL = 1e-12


class DegenerateGeometryError(ValueError):
    """Response matrix is (numerically) rank deficient."""


class CandidateInSpanError(ValueError):
    """Candidate response lies in the span of the already estimated sources."""


@dataclass(frozen=True)
class EstimateSet:
    """DOAs (length i) and a K x i coefficient matrix, column l pairing with thetas[l]."""

    thetas: np.ndarray
    phis: np.ndarray
    amplitudes: np.ndarray | None = None

    def __post_init__(self):
        thetas = np.atleast_1d(np.asarray(self.thetas, dtype=float))
        phis = np.asarray(self.phis, dtype=float)
        if phis.ndim == 1:
            phis = phis.reshape(-1, thetas.size) if thetas.size else phis.reshape(0, 0)
        if phis.shape[1] != thetas.size:
            raise ValueError("phis needs one column per theta")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "phis", phis)

    @property
    def i(self) -> int:
        return int(self.thetas.size)

    @property
    def K(self) -> int:
        return int(self.phis.shape[0])

    @classmethod
    def empty(cls, K: int) -> "EstimateSet":
        return cls(np.zeros(0), np.zeros((K, 0)))

    @classmethod
    def from_sources(cls, sources: Sequence[SourceParams]) -> "EstimateSet":
        thetas = np.array([s.theta for s in sources], dtype=float)
        phis = np.array([s.phi for s in sources], dtype=float).T
        amps = np.array([s.amplitude for s in sources], dtype=complex)
        return cls(thetas, phis, amps)

    def append(self, theta: float, phi) -> "EstimateSet":
        phi = np.asarray(phi, dtype=float).reshape(-1, 1)
        return EstimateSet(np.append(self.thetas, theta), np.hstack([self.phis, phi]))

    def take(self, order) -> "EstimateSet":
        order = np.asarray(order, dtype=int)
        amps = None if self.amplitudes is None else self.amplitudes[order]
        return EstimateSet(self.thetas[order], self.phis[:, order], amps)

    def to_vector(self) -> np.ndarray:
        """Parameters ordered (theta_1, phi_11..phi_1K, theta_2, ...)."""
        return np.vstack([self.thetas[None, :], self.phis]).T.ravel()

    @classmethod
    def from_vector(cls, vec, K: int) -> "EstimateSet":
        block = np.asarray(vec, dtype=float).reshape(-1, K + 1)
        return cls(block[:, 0].copy(), block[:, 1:].T.copy())

    def with_amplitudes(self, amplitudes) -> "EstimateSet":
        return EstimateSet(self.thetas, self.phis, np.asarray(amplitudes, dtype=complex))


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, SnapshotBlock) else np.asarray(x, dtype=complex).ravel()


def _factor(A: np.ndarray):
    Q, R = np.linalg.qr(A, mode="reduced")
    if R.shape[0]:
        sv = np.linalg.svd(R, compute_uv=False)
        if sv[-1] <= sv[0] / RANK_COND_LIMIT:
            raise DegenerateGeometryError("response matrix is rank deficient (coincident sources?)")
    return Q, R


def response(cfg: ArrayConfig, est: EstimateSet) -> np.ndarray:
    if est.i == 0:
        return np.zeros((cfg.size, 0), dtype=complex)
    return response_matrix(cfg, est.thetas, est.phis)


@dataclass(frozen=True)
class ResidualState:
    """Residual of the data after projecting out ``basis`` (orthonormal, MN x i)."""

    residual: np.ndarray
    basis: np.ndarray
    _basis_t: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_basis_t", np.ascontiguousarray(self.basis.T))

    def apply(self, v) -> np.ndarray:
        """Apply the orthogonal-complement projector to ``v``."""
        v = np.asarray(v, dtype=complex)
        return v - self.basis @ (self.basis.conj().T @ v)

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.residual, self.residual).real)

    @property
    def basis_rows(self) -> np.ndarray:
        return self._basis_t


def residual_update(cfg: ArrayConfig, est: EstimateSet, x) -> ResidualState:
    """Residual r = P_perp(A) x for the sources in ``est``."""
    x = _data(x)
    if est.i == 0:
        return ResidualState(x.copy(), np.zeros((x.size, 0), dtype=complex))
    Q, _ = _factor(response(cfg, est))
    return ResidualState(x - Q @ (Q.conj().T @ x), Q)


def concentrate_amplitudes(cfg: ArrayConfig, est: EstimateSet, x) -> np.ndarray:
    """Least-squares amplitudes A^+ x."""
    x = _data(x)
    if est.i == 0:
        return np.zeros(0, dtype=complex)
    Q, R = _factor(response(cfg, est))
    return solve_triangular(R, Q.conj().T @ x)


def negative_log_likelihood(cfg: ArrayConfig, est: EstimateSet, x) -> float:
    """Concentrated cost ||P_perp(A) x||^2."""
    return residual_update(cfg, est, x).norm2


def isource_cost_direct(cfg: ArrayConfig, est: EstimateSet, x) -> float:
    """i-source ML approximation for the i sources in ``est``."""
    return negative_log_likelihood(cfg, est, x)


def pp_beamformer(cfg: ArrayConfig, theta: float, phi, x) -> float:
    """Polynomial-phase beamformer |a^H x|^2 / (MN)."""
    c2, _ = pp_beamformer_points(cfg, np.array([theta]), np.zeros(1, dtype=np.intp), np.atleast_2d(phi), x)
    return float(c2[0])


def pp_beamformer_points(cfg: ArrayConfig, thetas, owner, phis, x):
    """Vectorized polynomial-phase beamformer; returns (values, raw |a^H x|^2)."""
    c2, _ = kernels.correlate_points(
        thetas, owner, phis, _data(x), np.zeros((0, cfg.size), dtype=complex),
        cfg.delta, cfg.d / cfg.c, cfg.omega_c, cfg.M, cfg.N,
    )
    return c2 / cfg.size, c2


def isource_cost_points(cfg: ArrayConfig, state: ResidualState, thetas, owner, phis) -> np.ndarray:
    """Efficient i-source cost for many (theta, phi) points at once.

    Points whose projected response vanishes get ``inf``.
    """
    c2, den = kernels.correlate_points(
        thetas, owner, phis, state.residual, state.basis_rows,
        cfg.delta, cfg.d / cfg.c, cfg.omega_c, cfg.M, cfg.N,
    )
    ok = den >= SPAN_TOL * cfg.size
    cost = np.full(c2.shape, np.inf)
    cost[ok] = np.maximum(state.norm2 - c2[ok] / den[ok], 0.0)
    return cost


def isource_cost_fast(cfg: ArrayConfig, state: ResidualState, theta: float, phi) -> float:
    """||r||^2 - |a^H r|^2 / ||P_perp a||^2 with the previous sources held fixed."""
    cost = isource_cost_points(cfg, state, np.array([theta]), np.zeros(1, dtype=np.intp), np.atleast_2d(phi))
    if not np.isfinite(cost[0]):
        raise CandidateInSpanError("candidate response lies in the span of previous estimates")
    return float(cost[0])


def _source_weights(cfg: ArrayConfig, theta: float, phi: np.ndarray) -> np.ndarray:
    """Real phase sensitivities (K+1, N, M) for (theta, phi_1..phi_K) of one source."""
    K = phi.size
    t = cfg.times[:, None]
    mm = np.arange(cfg.M)[None, :]
    u = mm * (cfg.d / cfg.c) * np.sin(theta)
    s = t - u
    w = np.empty((K + 1,) + s.shape)
    # d(phase)/d(s) = passband instantaneous frequency at s
    dphase = np.zeros_like(s)
    for k in range(K, 0, -1):
        dphase = dphase * s + k * phi[k - 1]
    w[0] = -dphase * mm * (cfg.d / cfg.c) * np.cos(theta)
    sk = np.ones_like(s)
    for k in range(1, K + 1):
        sk = sk * s
        w[k] = sk
    return w


def response_derivatives(cfg: ArrayConfig, est: EstimateSet, param_index: int) -> np.ndarray:
    """dA/dpsi for one scalar parameter; only the owning source's column is nonzero."""
    K = est.K
    l, j = divmod(int(param_index), K + 1)
    if not 0 <= l < est.i:
        raise IndexError(f"parameter index {param_index} out of range")
    a = response_matrix(cfg, est.thetas[l : l + 1], est.phis[:, l : l + 1])[:, 0]
    w = _source_weights(cfg, est.thetas[l], est.phis[:, l])[j].ravel()
    D = np.zeros((cfg.size, est.i), dtype=complex)
    D[:, l] = 1j * w * a
    return D


def cost_and_gradient(cfg: ArrayConfig, est: EstimateSet, x) -> tuple[float, np.ndarray]:
    """Cost ||P_perp x||^2 and its gradient in the ``EstimateSet.to_vector`` ordering.

    Uses df/dpsi = 2 Re{alpha^H A^H D alpha - x^H D alpha}; with D holding a
    single column this collapses to -2 Re{alpha_l r^H d_psi}, r the residual.
    """
    x = _data(x)
    A = response(cfg, est)
    Q, R = _factor(A)
    qx = Q.conj().T @ x
    r = x - Q @ qx
    alpha = solve_triangular(R, qx)
    K = est.K
    grad = np.empty(est.i * (K + 1))
    for l in range(est.i):
        w = _source_weights(cfg, est.thetas[l], est.phis[:, l]).reshape(K + 1, -1)
        v = r.conj() * A[:, l]
        grad[l * (K + 1) : (l + 1) * (K + 1)] = 2.0 * np.imag(alpha[l] * (w @ v))
    return float(np.vdot(r, r).real), grad


def isource_cost_and_gradient(cfg: ArrayConfig, state: ResidualState, theta: float, phi) -> tuple[float, np.ndarray]:
    """Efficient i-source cost of one new source and its gradient in (theta, phi_1..phi_K).

    With p = P_perp a, n = a^H r and q = ||p||^2 the cost is ||r||^2 - |n|^2 / q;
    the earlier sources enter only through the residual state.
    """
    phi = np.asarray(phi, dtype=float)
    a = response_matrix(cfg, np.array([theta]), phi.reshape(-1, 1))[:, 0]
    p = state.apply(a)
    q = float(np.vdot(p, p).real)
    if q < SPAN_TOL * cfg.size:
        raise CandidateInSpanError("candidate response lies in the span of previous estimates")
    n = np.vdot(a, state.residual)
    w = _source_weights(cfg, theta, phi).reshape(phi.size + 1, -1)
    # d a / d psi = 1j w a
    da_r = -1j * (w @ (a.conj() * state.residual))  # d(a^H r)/dpsi
    dq = 2.0 * np.real(1j * (w @ (p.conj() * a)))  # d(a^H P a)/dpsi
    dnn = 2.0 * np.real(np.conj(n) * da_r)
    n2 = float(abs(n) ** 2)
    grad = -(dnn * q - n2 * dq) / q**2
    return state.norm2 - n2 / q, grad


def cost_gradient(cfg: ArrayConfig, est: EstimateSet, x) -> np.ndarray:
    return cost_and_gradient(cfg, est, x)[1]
