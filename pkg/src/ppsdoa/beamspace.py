"""Time-frequency-beamspace transform and sparse support extraction.

Pipeline: per-sensor rectangular-window STFT (zero-padded DFT), a bank of M
DFT beamformers across the sensor axis, local maxima over neighbouring beams
and frequency bins, global-percentile thresholding, dominant-beam selection
and the adjacent-beam union handed to RANSAC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ArrayConfig, SnapshotBlock


class NoSupportError(RuntimeError):
    """No beam holds any thresholded support point."""


@dataclass(frozen=True)
class TfBeamTensor:
    """Complex time-frequency maps, ``values[channel, p_idx, q_idx]``.

    Channels are sensors before beamforming and beams after it. ``p_min`` and
    ``q_min`` give the signed time-frame and frequency index of the first row
    and column.
    """

    values: np.ndarray
    window_width: int
    dft_length: int
    delta: float
    p_min: int
    q_min: int

    @property
    def p_indices(self) -> np.ndarray:
        return self.p_min + np.arange(self.values.shape[1])

    @property
    def q_indices(self) -> np.ndarray:
        return self.q_min + np.arange(self.values.shape[2])

    def time_of(self, p):
        return self.delta * np.asarray(p, dtype=float)

    def omega_of(self, q):
        return 2.0 * math.pi * np.asarray(q, dtype=float) / (self.delta * self.dft_length)

    @property
    def bin_width(self) -> float:
        """Window-limited frequency resolution 2*pi/(delta*H) in rad/s."""
        return 2.0 * math.pi / (self.delta * self.window_width)


@dataclass(frozen=True)
class TfPoints:
    """Flat set of time-frequency points with magnitudes (no beam label)."""

    p: np.ndarray
    q: np.ndarray
    mag: np.ndarray

    def __len__(self):
        return int(self.p.size)

    def keys(self) -> np.ndarray:
        return _pack(self.p, self.q)

    @classmethod
    def empty(cls) -> "TfPoints":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros(0))


@dataclass(frozen=True)
class SupportSet:
    """Per-beam time-frequency support points stored as flat arrays.

    Record ``j`` is ``(beam[j], p[j], q[j], mag[j])``; records are sorted by
    beam and no (p, q) repeats within a beam.
    """

    n_beams: int
    beam: np.ndarray
    p: np.ndarray
    q: np.ndarray
    mag: np.ndarray

    def __post_init__(self):
        for name in ("beam", "p", "q"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        object.__setattr__(self, "mag", np.asarray(self.mag, dtype=float))

    def __len__(self):
        return int(self.beam.size)

    def counts(self) -> np.ndarray:
        return np.bincount(self.beam, minlength=self.n_beams)[: self.n_beams]

    def beam_points(self, b: int) -> TfPoints:
        sel = self.beam == b
        return TfPoints(self.p[sel], self.q[sel], self.mag[sel])

    def subset(self, mask: np.ndarray) -> "SupportSet":
        return SupportSet(self.n_beams, self.beam[mask], self.p[mask], self.q[mask], self.mag[mask])


def _pack(p, q) -> np.ndarray:
    # signed indices well inside +-2^31
    return (np.asarray(p, dtype=np.int64) << 32) + (np.asarray(q, dtype=np.int64) + (1 << 31))


def frame_range(N: int, H: int) -> tuple[int, int]:
    """First and last STFT frame index whose window lies inside the data."""
    n0 = N // 2
    return -n0 + H // 2, (N - 1 - n0) - (H - 1) // 2


def stft_per_sensor(block: SnapshotBlock, H: int, F: int, delta: float = 1.0) -> TfBeamTensor:
    """Rectangular-window STFT of every sensor, zero-padded to F DFT points.

    ``y_m(p, q) = (1/H) sum_h r_m(p + h) exp(-j 2 pi h q / F)`` for window
    offsets ``h = -ceil((H-1)/2) .. floor((H-1)/2)``. Only frames with the
    whole window inside the data are returned.
    """
    if H < 1 or H > block.N:
        raise ValueError(f"window width H={H} must satisfy 1 <= H <= N={block.N}")
    if F < H:
        raise ValueError(f"DFT length F={F} must be >= H={H}")
    r = block.per_sensor()
    h_lo = -(H // 2)
    p_first, p_last = frame_range(block.N, H)
    n0 = block.N // 2
    start = p_first + h_lo + n0
    segs = np.lib.stride_tricks.sliding_window_view(r, H, axis=1)[:, start : start + p_last - p_first + 1, :]
    spec = np.fft.fft(segs, n=F, axis=-1)
    q_min = -(F // 2)
    q = q_min + np.arange(F)
    # FFT bin q mod F, then shift the window origin from h_lo to 0
    spec = spec[..., np.mod(q, F)] * np.exp(-2j * np.pi * h_lo * q / F)
    return TfBeamTensor(spec / H, H, F, delta, p_first, q_min)


def beamform(y: TfBeamTensor) -> TfBeamTensor:
    """Bank of DFT beamformers, ``z_b = (1/M) w_b^H y`` for b = 0..M-1."""
    M = y.values.shape[0]
    z = np.fft.fft(y.values, axis=0) / M
    return TfBeamTensor(z, y.window_width, y.dft_length, y.delta, y.p_min, y.q_min)


def beampattern(theta, omega, b, cfg: ArrayConfig):
    """Normalized DFT-beamformer magnitude response |P_b(theta, omega)|."""
    x = np.asarray(omega) * cfg.d / cfg.c * np.sin(theta) + 2.0 * math.pi * np.asarray(b) / cfg.M
    den = np.sin(0.5 * x)
    num = np.sin(0.5 * cfg.M * x)
    singular = np.abs(den) < 1e-12
    out = np.where(singular, 1.0, np.abs(num / np.where(singular, 1.0, cfg.M * den)))
    return out if out.ndim else float(out)


def mainlobe_angle(omega, b, cfg: ArrayConfig):
    """Angle of the b-th beamformer mainlobe at instantaneous frequency omega.

    Half-integer ``b`` gives the crossover of adjacent mainlobes. Returns NaN
    where the arcsin argument leaves [-1, 1] or omega <= 0.
    """
    omega = np.asarray(omega, dtype=float)
    b = float(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 2.0 * cfg.omega0 / omega
        if b < cfg.M / 2:
            arg = -ratio * b / cfg.M
        else:
            arg = ratio * (1.0 - b / cfg.M)
        ok = (omega > 0) & (np.abs(arg) <= 1.0)
        out = np.where(ok, np.arcsin(np.clip(arg, -1.0, 1.0)), np.nan)
    return out if out.ndim else float(out)


def local_maxima(z: TfBeamTensor, strict: bool = False) -> SupportSet:
    """Cells at least as large as their neighbours in adjacent beams.

    The neighbour set is ``(b +- 1 mod M, q +- 1)``; frequency indices are
    clamped at the edges. With ``strict=True`` the same-beam neighbours
    ``(b, q +- 1)`` are compared as well. Ties survive; zero cells never do.
    """
    mag = np.abs(z.values)
    B, P, Q = mag.shape
    qm = np.concatenate(([0], np.arange(Q - 1)))
    qp = np.concatenate((np.arange(1, Q), [Q - 1]))
    shifted = np.maximum(mag[:, :, qm], mag[:, :, qp])
    neigh = np.maximum(np.roll(shifted, 1, axis=0), np.roll(shifted, -1, axis=0))
    if strict:
        neigh = np.maximum(neigh, shifted)
    b, pi, qi = np.nonzero((mag >= neigh) & (mag > 0))
    return SupportSet(B, b.astype(np.int64), pi + z.p_min, qi + z.q_min, mag[b, pi, qi])


def threshold_support(s: SupportSet, epsilon_percentile: float, reference=None) -> SupportSet:
    """Keep support points whose magnitude reaches the given percentile.

    The threshold is the linear-interpolation percentile of ``reference``
    (all tensor magnitudes in the pipeline), or of the support magnitudes
    themselves when no reference is given.
    """
    if not 0 <= epsilon_percentile <= 100:
        raise ValueError("percentile must lie in [0, 100]")
    if len(s) == 0:
        return s
    ref = s.mag if reference is None else np.asarray(reference).ravel()
    eps = np.percentile(ref, epsilon_percentile)
    return s.subset(s.mag >= eps)


def dominant_beam(t: SupportSet) -> int:
    counts = t.counts()
    if counts.size == 0 or counts.max() == 0:
        raise NoSupportError("all beams are empty")
    return int(np.argmax(counts))


def adjacent_beams(b: int, n_beams: int) -> list[int]:
    return sorted({(b - 1) % n_beams, b % n_beams, (b + 1) % n_beams})


def adjacent_union(t: SupportSet, b: int) -> TfPoints:
    """Union of beams b-1, b, b+1 (mod M); duplicate (p, q) keep the larger magnitude."""
    sel = np.isin(t.beam, adjacent_beams(b, t.n_beams))
    p, q, mag = t.p[sel], t.q[sel], t.mag[sel]
    if p.size == 0:
        return TfPoints.empty()
    keys = _pack(p, q)
    order = np.lexsort((-mag, keys))
    keys, p, q, mag = keys[order], p[order], q[order], mag[order]
    first = np.concatenate(([True], keys[1:] != keys[:-1]))
    return TfPoints(p[first], q[first], mag[first])


def remove_points(t: SupportSet, points: TfPoints, beams=None) -> SupportSet:
    """Drop records whose (p, q) appears in ``points``, optionally only in ``beams``."""
    hit = np.isin(_pack(t.p, t.q), points.keys())
    if beams is not None:
        hit &= np.isin(t.beam, list(beams))
    return t.subset(~hit)


@dataclass(frozen=True)
class BeamspaceResult:
    z: TfBeamTensor
    maxima: SupportSet
    support: SupportSet


def sparse_support(
    block: SnapshotBlock,
    delta: float,
    H: int,
    F: int,
    epsilon_percentile: float,
    strict: bool = False,
) -> BeamspaceResult:
    """Full chain from snapshots to the thresholded per-beam support sets."""
    y = stft_per_sensor(block, H, F, delta)
    z = beamform(y)
    s = local_maxima(z, strict=strict)
    t = threshold_support(s, epsilon_percentile, reference=np.abs(z.values))
    return BeamspaceResult(z, s, t)
