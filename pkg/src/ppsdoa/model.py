"""Source and array definitions plus the snapshot simulator.

Sources are far-field polynomial-phase signals observed by a uniform linear
array. Coefficients are kept in the passband convention (``phi[0]`` carries the
carrier); the simulated data is the down-converted baseband stream, so every
response evaluation subtracts ``omega_c * t`` from the temporal phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class InvalidScenarioError(ValueError):
    """Raised for inconsistent source or array definitions."""


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear array geometry and sampling setup.

    Parameters
    ----------
    M : int
        Number of sensors.
    d : float
        Inter-sensor spacing in meters.
    c : float
        Propagation speed in m/s.
    delta : float
        Sampling period in seconds.
    N : int
        Number of snapshots.
    omega_c : float
        Carrier angular frequency in rad/s removed by down-conversion.
    """

    M: int
    d: float
    c: float
    delta: float
    N: int
    omega_c: float = 0.0

    def __post_init__(self):
        if self.M < 2 or self.N < 2:
            raise InvalidScenarioError(f"need M >= 2 and N >= 2, got M={self.M}, N={self.N}")
        if self.d <= 0 or self.c <= 0 or self.delta <= 0:
            raise InvalidScenarioError("d, c and delta must be positive")
        if self.omega_c < 0:
            raise InvalidScenarioError("omega_c must be non-negative")

    @property
    def omega0(self) -> float:
        """Cut-off angular frequency for spatial aliasing, pi*c/d."""
        return math.pi * self.c / self.d

    @property
    def n_offset(self) -> int:
        """ceil((N-1)/2), the magnitude of the first snapshot index."""
        return self.N // 2

    @property
    def n_indices(self) -> np.ndarray:
        """Symmetric snapshot indices -ceil((N-1)/2) .. floor((N-1)/2)."""
        return np.arange(self.N) - self.n_offset

    @property
    def times(self) -> np.ndarray:
        return self.delta * self.n_indices

    @property
    def size(self) -> int:
        return self.M * self.N

    def replace(self, **changes) -> "ArrayConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class SourceParams:
    """One polynomial-phase source.

    ``phi[k-1]`` is the order-k coefficient in rad/s^k (passband convention).
    """

    theta: float
    phi: tuple
    amplitude: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))
        if not self.phi:
            raise InvalidScenarioError("phi must hold at least one coefficient")
        if abs(self.theta) > math.pi / 2 + 1e-12:
            raise InvalidScenarioError(f"theta={self.theta} outside [-pi/2, pi/2]")

    @property
    def K(self) -> int:
        return len(self.phi)


@dataclass(frozen=True)
class SnapshotBlock:
    """Stacked measurement vector of length M*N.

    Element ``M*(n + ceil((N-1)/2)) + m - 1`` holds sensor ``m`` at snapshot
    ``n``, i.e. ``data.reshape(N, M)`` is indexed ``[snapshot, sensor]``.
    """

    data: np.ndarray
    M: int
    N: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=complex).ravel()
        if data.size != self.M * self.N:
            raise ValueError(f"expected {self.M * self.N} samples, got {data.size}")
        object.__setattr__(self, "data", data)

    def per_sensor(self) -> np.ndarray:
        """(M, N) view with one row per sensor."""
        return self.data.reshape(self.N, self.M).T

    @classmethod
    def from_sensor_matrix(cls, r: np.ndarray) -> "SnapshotBlock":
        r = np.asarray(r)
        M, N = r.shape
        return cls(np.ascontiguousarray(r.T).ravel(), M, N)


def inter_sensor_delay(theta, cfg: ArrayConfig):
    """Delay between adjacent sensors in seconds, (d/c) sin(theta)."""
    return cfg.d / cfg.c * np.sin(theta)


def instantaneous_frequency(phi: Sequence[float], t):
    """sum_k k*phi_k*t^(k-1) in rad/s."""
    phi = np.asarray(phi, dtype=float)
    if phi.size == 0:
        raise ValueError("phi must be non-empty")
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for k in range(phi.size, 0, -1):  # Horner on the derivative polynomial
        out = out * t + k * phi[k - 1]
    return out if out.ndim else float(out)


def frequency_rate(phi: Sequence[float], t):
    """Time derivative of the instantaneous frequency, sum_k k(k-1) phi_k t^(k-2)."""
    phi = np.asarray(phi, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for k in range(phi.size, 1, -1):
        out = out * t + k * (k - 1) * phi[k - 1]
    return out if out.ndim else float(out)


def response_phase(cfg: ArrayConfig, theta: float, phi: Sequence[float]) -> np.ndarray:
    """Baseband phase of one source's stacked response, shape (N, M).

    Returns sum_k phi_k (t - u)^k - omega_c t with t = delta*n and
    u = (m-1)*tau. The carrier term is folded into the linear coefficient
    before evaluation to avoid cancelling two large phases.
    """
    phi = np.asarray(phi, dtype=float)
    t = cfg.times[:, None]
    u = np.arange(cfg.M)[None, :] * inter_sensor_delay(theta, cfg)
    s = t - u
    phase = (phi[0] - cfg.omega_c) * t - phi[0] * u
    if phi.size > 1:
        sk = s.copy()
        for k in range(2, phi.size + 1):
            sk = sk * s
            phase = phase + phi[k - 1] * sk
    return phase


def response_matrix(cfg: ArrayConfig, thetas: Sequence[float], phis: np.ndarray) -> np.ndarray:
    """Stacked response matrix of shape (M*N, L) for K x L coefficients ``phis``."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    phis = np.asarray(phis, dtype=float)
    if phis.ndim == 1:
        phis = phis[:, None]
    if phis.shape[1] != thetas.size:
        raise InvalidScenarioError("phis must have one column per angle")
    A = np.empty((cfg.size, thetas.size), dtype=complex)
    for l, theta in enumerate(thetas):
        A[:, l] = np.exp(1j * response_phase(cfg, theta, phis[:, l])).ravel()
    return A


def _common_order(sources: Sequence[SourceParams]) -> int:
    orders = {s.K for s in sources}
    if len(orders) > 1:
        raise InvalidScenarioError(f"all sources must share K, got orders {sorted(orders)}")
    return orders.pop() if orders else 0


def stacked_response(cfg: ArrayConfig, sources: Sequence[SourceParams]) -> np.ndarray:
    """Response matrix with one column per source, in input order."""
    K = _common_order(sources)
    if not sources:
        return np.zeros((cfg.size, 0), dtype=complex)
    phis = np.array([s.phi for s in sources], dtype=float).T.reshape(K, len(sources))
    return response_matrix(cfg, [s.theta for s in sources], phis)


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_snapshots(
    cfg: ArrayConfig,
    sources: Sequence[SourceParams],
    noise_power: float,
    seed=None,
) -> SnapshotBlock:
    """Noisy stacked snapshots x = A(theta, Phi) alpha + z.

    The noise is circular complex Gaussian with per-element variance
    ``noise_power`` split evenly between real and imaginary parts.
    """
    if noise_power < 0:
        raise ValueError("noise_power must be >= 0")
    x = np.zeros(cfg.size, dtype=complex)
    if sources:
        A = stacked_response(cfg, sources)
        x += A @ np.array([s.amplitude for s in sources], dtype=complex)
    if noise_power > 0:
        rng = as_rng(seed)
        scale = math.sqrt(noise_power / 2.0)
        x += scale * (rng.standard_normal(cfg.size) + 1j * rng.standard_normal(cfg.size))
    return SnapshotBlock(x, cfg.M, cfg.N)


def coherence_margin(phi, cfg: ArrayConfig, last_sensor: int, time_range: tuple[int, int]) -> float:
    """Ratio that must stay << 1 for time-invariant beamforming to be coherent.

    Evaluates max|omega'(n)| * d * (last_sensor - 1) / (2 * min omega(n) * c)
    over snapshot indices ``time_range[0] .. time_range[1]`` (inclusive).
    """
    n1, n2 = time_range
    if n2 < n1 or last_sensor < 1:
        raise ValueError("invalid sensor or time range")
    t = cfg.delta * np.arange(n1, n2 + 1)
    omega_min = float(np.min(instantaneous_frequency(phi, t)))
    if omega_min <= 0:
        raise ValueError("instantaneous frequency must stay positive for the margin to be defined")
    rate_max = float(np.max(np.abs(frequency_rate(phi, t))))
    return rate_max * cfg.d * (last_sensor - 1) / (2.0 * omega_min * cfg.c)
