# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loop: steering-vector synthesis fused with projected correlation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos
from libc.stdlib cimport malloc, free

cnp.import_array()


def correlate_points(
    const double[::1] thetas,
    const Py_ssize_t[::1] owner,
    const double[:, ::1] phis,
    const double complex[::1] r,
    const double complex[:, ::1] basis_t,
    double delta,
    double d_over_c,
    double omega_c,
    int M,
    int N,
):
    cdef Py_ssize_t P = thetas.shape[0]
    cdef Py_ssize_t K = phis.shape[1]
    cdef Py_ssize_t J = basis_t.shape[0]
    cdef Py_ssize_t MN = M * N
    cdef Py_ssize_t n0 = N // 2
    cdef Py_ssize_t p, n, m, k, j, idx, row
    cdef double t, u, s, sk, ph, tau, p0, re, im, cre, cim, dsum, gre, gim
    cdef double complex q

    c2_arr = np.empty(P, dtype=np.float64)
    den_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] c2 = c2_arr
    cdef double[::1] den = den_arr

    cdef double *are = <double *> malloc(MN * sizeof(double))
    cdef double *aim = <double *> malloc(MN * sizeof(double))
    cdef double *gr = <double *> malloc((J + 1) * sizeof(double))
    cdef double *gi = <double *> malloc((J + 1) * sizeof(double))
    if are == NULL or aim == NULL or gr == NULL or gi == NULL:
        free(are); free(aim); free(gr); free(gi)
        raise MemoryError()

    try:
        with nogil:
            for p in range(P):
                row = owner[p]
                tau = d_over_c * sin(thetas[p])
                p0 = phis[row, 0]
                cre = 0.0
                cim = 0.0
                for n in range(N):
                    t = delta * (n - n0)
                    for m in range(M):
                        u = m * tau
                        s = t - u
                        ph = (p0 - omega_c) * t - p0 * u
                        sk = s
                        for k in range(1, K):
                            sk = sk * s
                            ph = ph + phis[row, k] * sk
                        idx = n * M + m
                        re = cos(ph)
                        im = sin(ph)
                        are[idx] = re
                        aim[idx] = im
                        # conj(a) * r
                        cre = cre + re * r[idx].real + im * r[idx].imag
                        cim = cim + re * r[idx].imag - im * r[idx].real
                c2[p] = cre * cre + cim * cim
                if J == 0:
                    dsum = 0.0
                    for idx in range(MN):
                        dsum = dsum + are[idx] * are[idx] + aim[idx] * aim[idx]
                    den[p] = dsum
                    continue
                # g = Q^H a
                for j in range(J):
                    gre = 0.0
                    gim = 0.0
                    for idx in range(MN):
                        q = basis_t[j, idx]
                        gre = gre + q.real * are[idx] + q.imag * aim[idx]
                        gim = gim + q.real * aim[idx] - q.imag * are[idx]
                    gr[j] = gre
                    gi[j] = gim
                # || a - Q g ||^2
                dsum = 0.0
                for idx in range(MN):
                    re = are[idx]
                    im = aim[idx]
                    for j in range(J):
                        q = basis_t[j, idx]
                        re = re - (q.real * gr[j] - q.imag * gi[j])
                        im = im - (q.real * gi[j] + q.imag * gr[j])
                    dsum = dsum + re * re + im * im
                den[p] = dsum
    finally:
        free(are)
        free(aim)
        free(gr)
        free(gi)
    return c2_arr, den_arr
