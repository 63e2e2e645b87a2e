"""Pure numpy implementation of the hot kernels (fallback for ``_kernels``)."""

import numpy as np

_CHUNK_ELEMENTS = 1 << 20


def correlate_points(thetas, owner, phis, r, basis_t, delta, d_over_c, omega_c, M, N):
    """Per-point ``|a^H r|^2`` and ``||P_perp a||^2`` for steering vectors ``a``.

    Point ``p`` uses angle ``thetas[p]`` with coefficient row ``phis[owner[p]]``.
    ``basis_t`` holds the orthonormal basis of the projected-out subspace as
    rows (shape ``(J, M*N)``); ``J == 0`` means no projection.
    """
    thetas = np.asarray(thetas, dtype=float)
    owner = np.asarray(owner, dtype=np.intp)
    phis = np.asarray(phis, dtype=float)
    P = thetas.size
    K = phis.shape[1]
    c2 = np.empty(P)
    den = np.empty(P)
    t = delta * (np.arange(N) - N // 2)
    m = np.arange(M)
    step = max(1, _CHUNK_ELEMENTS // (M * N))
    for start in range(0, P, step):
        sl = slice(start, min(P, start + step))
        rows = phis[owner[sl]]
        u = (d_over_c * np.sin(thetas[sl]))[:, None, None] * m[None, None, :]
        tt = t[None, :, None]
        s = tt - u
        p0 = rows[:, 0][:, None, None]
        ph = (p0 - omega_c) * tt - p0 * u
        sk = s
        for k in range(1, K):
            sk = sk * s
            ph = ph + rows[:, k][:, None, None] * sk
        a = np.exp(1j * ph).reshape(ph.shape[0], M * N)
        c2[sl] = np.abs(a.conj() @ r) ** 2
        if basis_t.shape[0] == 0:
            den[sl] = np.sum(a.real**2 + a.imag**2, axis=1)
        else:
            g = a @ basis_t.conj().T
            resid = a - g @ basis_t
            den[sl] = np.sum(resid.real**2 + resid.imag**2, axis=1)
    return c2, den
