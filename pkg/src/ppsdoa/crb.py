"""Deterministic-signal Cramer-Rao bounds for DOA and polynomial-phase coefficients.

The real parameter vector is ordered

    (theta_1, phi_11..phi_1K, ..., theta_L, phi_L1..phi_LK, Re a_1..Re a_L, Im a_1..Im a_L)

and the Fisher information of circular Gaussian noise with power sigma2 is
``(2 / sigma2) Re(J^H J)`` with J the Jacobian of the noise-free mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .mlcost import EstimateSet, _source_weights
from .model import ArrayConfig, SourceParams, stacked_response

COND_LIMIT = 1e14


class UnidentifiableScenarioError(ValueError):
    """Fisher information is singular to working precision."""


@dataclass(frozen=True)
class CrbReport:
    """Bounds (standard deviations) per source.

    ``theta_std`` has shape (L,) in radians; ``phi_std`` is K x L in rad/s^k.
    ``cov`` is the full inverse Fisher information.
    """

    theta_std: np.ndarray
    phi_std: np.ndarray
    fim: np.ndarray
    cov: np.ndarray
    condition: float

    @property
    def L(self) -> int:
        return int(self.theta_std.size)

    @property
    def K(self) -> int:
        return int(self.phi_std.shape[0])

    def variances(self) -> np.ndarray:
        """(K+1) x L variances, row 0 for theta and row k for phi_k."""
        return np.vstack([self.theta_std[None, :], self.phi_std]) ** 2

    def aggregate_std(self) -> np.ndarray:
        """Per-parameter bound averaged over sources like the RMSE, sqrt(mean_l var_l)."""
        return np.sqrt(self.variances().mean(axis=1))


def jacobian(cfg: ArrayConfig, sources: Sequence[SourceParams]) -> np.ndarray:
    """Complex Jacobian of the mean A(theta, Phi) alpha, shape (MN, L(K+3))."""
    if not sources:
        raise ValueError("need at least one source")
    est = EstimateSet.from_sources(sources)
    A = stacked_response(cfg, sources)
    L, K = est.i, est.K
    alpha = est.amplitudes
    J = np.empty((cfg.size, L * (K + 1) + 2 * L), dtype=complex)
    for l in range(L):
        w = _source_weights(cfg, est.thetas[l], est.phis[:, l]).reshape(K + 1, -1)
        J[:, l * (K + 1) : (l + 1) * (K + 1)] = (1j * alpha[l] * A[:, l])[:, None] * w.T
    J[:, L * (K + 1) : L * (K + 2)] = A
    J[:, L * (K + 2) :] = 1j * A
    return J


def fisher_information(cfg: ArrayConfig, sources: Sequence[SourceParams], sigma2: float) -> np.ndarray:
    """Real Fisher information matrix for (theta, Phi, Re alpha, Im alpha)."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    J = jacobian(cfg, sources)
    fim = (2.0 / sigma2) * np.real(J.conj().T @ J)
    return 0.5 * (fim + fim.T)


def _equilibrate(fim: np.ndarray):
    d = np.sqrt(np.diag(fim))
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise UnidentifiableScenarioError("a parameter has zero Fisher information")
    return fim / np.outer(d, d), d


def crb_bounds(fim: np.ndarray, L: int | None = None, K: int | None = None) -> CrbReport:
    """Invert the Fisher information and extract the (theta, Phi) bounds.

    The inverse goes through a Cholesky factorization of the diagonally
    equilibrated matrix; its condition number is checked against 1e14.
    ``L`` and ``K`` are inferred from the size when only one is given.
    """
    fim = np.asarray(fim, dtype=float)
    P = fim.shape[0]
    if L is None and K is None:
        raise ValueError("give L or K")
    if L is None:
        L = P // (K + 3)
    if K is None:
        K = P // L - 3
    if L * (K + 3) != P:
        raise ValueError(f"FIM of size {P} does not match L={L}, K={K}")
    scaled, d = _equilibrate(fim)
    ev = np.linalg.eigvalsh(scaled)
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else np.inf
    if not cond <= COND_LIMIT:
        raise UnidentifiableScenarioError(f"Fisher information condition {cond:.3g} exceeds {COND_LIMIT:.0e}")
    try:
        factor = cho_factor(scaled, lower=True)
    except np.linalg.LinAlgError as exc:
        raise UnidentifiableScenarioError(str(exc)) from exc
    cov = cho_solve(factor, np.eye(P)) / np.outer(d, d)
    cov = 0.5 * (cov + cov.T)
    diag = np.diag(cov)[: L * (K + 1)].reshape(L, K + 1)
    std = np.sqrt(diag)
    return CrbReport(std[:, 0].copy(), std[:, 1:].T.copy(), fim, cov, cond)


def compute_crb(cfg: ArrayConfig, sources: Sequence[SourceParams], sigma2: float) -> CrbReport:
    sources = list(sources)
    K = sources[0].K if sources else 0
    return crb_bounds(fisher_information(cfg, sources, sigma2), L=len(sources), K=K)
