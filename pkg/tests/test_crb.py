import math

import numpy as np
import numpy.testing as npt
import pytest

from ppsdoa.crb import UnidentifiableScenarioError, compute_crb, crb_bounds, fisher_information, jacobian
from ppsdoa.mlcost import EstimateSet
from ppsdoa.model import ArrayConfig, SourceParams, stacked_response

from conftest import WC, random_sources


def test_fim_symmetric_psd(four_src):
    fim = fisher_information(four_src.array, four_src.sources, 0.1)
    assert np.max(np.abs(fim - fim.T)) <= 1e-12 * np.max(np.abs(fim))
    ev = np.linalg.eigvalsh(fim)
    assert ev.min() >= -1e-10 * np.linalg.norm(fim, 2)
    assert fim.shape == (4 * 7, 4 * 7)


def test_fim_scales_with_noise(four_src):
    a = fisher_information(four_src.array, four_src.sources, 0.1)
    b = fisher_information(four_src.array, four_src.sources, 0.2)
    npt.assert_allclose(b, a / 2, rtol=1e-12)
    with pytest.raises(ValueError):
        fisher_information(four_src.array, four_src.sources, 0.0)


def test_bounds_scale_with_sigma(four_src):
    a = compute_crb(four_src.array, four_src.sources, 0.1)
    b = compute_crb(four_src.array, four_src.sources, 0.4)
    npt.assert_allclose(b.theta_std, 2 * a.theta_std, rtol=1e-9)
    npt.assert_allclose(b.phi_std, 2 * a.phi_std, rtol=1e-9)


def test_single_tone_closed_form():
    # unknown frequency and amplitude; the odd N decouples theta from phi_1 at broadside
    M, N = 6, 33
    cfg = ArrayConfig(M=M, d=1.5, c=1500.0, delta=0.01, N=N, omega_c=WC)
    alpha, sigma2 = 0.8 * np.exp(0.3j), 0.05
    rep = compute_crb(cfg, [SourceParams(0.0, (WC,), alpha)], sigma2)
    kappa = WC * cfg.d / cfg.c
    var = 6 * sigma2 / (abs(alpha) ** 2 * kappa**2 * N * M * (M**2 - 1))
    assert rep.theta_std[0] == pytest.approx(math.sqrt(var), rel=1e-9)


def test_jacobian_matches_finite_differences(small_cfg):
    rng = np.random.default_rng(3)
    srcs = random_sources(rng, 2, 2)
    J = jacobian(small_cfg, srcs)
    est = EstimateSet.from_sources(srcs)
    v = est.to_vector()
    amps = np.array([s.amplitude for s in srcs])

    def mean(vec, a):
        e = EstimateSet.from_vector(vec, 2)
        sources = [SourceParams(e.thetas[l], tuple(e.phis[:, l]), a[l]) for l in range(2)]
        return stacked_response(small_cfg, sources) @ a

    for idx in range(v.size):
        h = 1e-6 * max(1.0, abs(v[idx]))
        vp, vm = v.copy(), v.copy()
        vp[idx] += h
        vm[idx] -= h
        fd = (mean(vp, amps) - mean(vm, amps)) / (2 * h)
        npt.assert_allclose(J[:, idx], fd, rtol=1e-5, atol=1e-5 * np.abs(J[:, idx]).max())
    A = stacked_response(small_cfg, srcs)
    npt.assert_allclose(J[:, 6:8], A)
    npt.assert_allclose(J[:, 8:], 1j * A)


def test_permutation_symmetry(four_src):
    a = compute_crb(four_src.array, four_src.sources, 0.1)
    order = [2, 0, 3, 1]
    b = compute_crb(four_src.array, [four_src.sources[i] for i in order], 0.1)
    npt.assert_allclose(b.theta_std, a.theta_std[order], rtol=1e-9)
    npt.assert_allclose(b.phi_std, a.phi_std[:, order], rtol=1e-9)


def test_report_shapes_and_aggregate(four_src):
    rep = compute_crb(four_src.array, four_src.sources, 0.1)
    assert rep.L == 4 and rep.K == 4
    assert rep.variances().shape == (5, 4)
    npt.assert_allclose(rep.aggregate_std()[0], math.sqrt(np.mean(rep.theta_std**2)))
    assert rep.condition < 1e14


def test_coincident_sources_unidentifiable(cfg):
    s = SourceParams(0.1, (WC, 10.0), 1.0)
    with pytest.raises(UnidentifiableScenarioError):
        compute_crb(cfg, [s, SourceParams(0.1, (WC, 10.0), 1j)], 0.1)


def test_crb_bounds_validates_size():
    with pytest.raises(ValueError):
        crb_bounds(np.eye(7), L=2, K=1)
    with pytest.raises(ValueError):
        crb_bounds(np.eye(6))
    with pytest.raises(UnidentifiableScenarioError):
        crb_bounds(np.zeros((4, 4)), L=1, K=1)
