import numpy as np
import pytest

from fima import synth
from fima.deconv import (HaarWavelet, af_blind, af_nonblind, blind_problem,
                         convolve_circular, correlate_circular, default_levels,
                         estimate_kernel_cg, image_gradients, nonblind_problem,
                         psf_to_otf, resize_kernel, solve_blind, solve_nonblind)
from fima.metrics import kernel_similarity, psnr
from fima.modules import module_tv_denoise
from fima.prox import ScalarPenalty
from fima.solvers import SolverConfig

from oracles import direct_convolve, fd_gradient

rng = np.random.default_rng(123)


def test_convolve_delta_kernel_is_identity():
    img = rng.uniform(0, 1, size=(16, 16))
    np.testing.assert_allclose(convolve_circular(img, synth.delta_kernel(5)), img, atol=1e-10)


def test_convolve_constant_image_preserved_by_normalized_kernel():
    img = np.full((12, 12), 0.6)
    k = synth.gaussian_kernel(5)
    np.testing.assert_allclose(convolve_circular(img, k), img, atol=1e-12)


def test_convolve_matches_direct_summation():
    img = rng.uniform(0, 1, size=(8, 8))
    k = rng.uniform(0, 1, size=(3, 3))
    np.testing.assert_allclose(convolve_circular(img, k), direct_convolve(img, k), atol=1e-9)


def test_convolve_rejects_oversized_kernel():
    with pytest.raises(ValueError):
        convolve_circular(np.zeros((4, 4)), np.ones((5, 5)) / 25.0)


def test_correlate_is_adjoint_of_convolve():
    img = rng.standard_normal((10, 10))
    other = rng.standard_normal((10, 10))
    k = rng.uniform(0, 1, size=(3, 3))
    lhs = np.vdot(convolve_circular(img, k), other)
    rhs = np.vdot(img, correlate_circular(other, k))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_wavelet_roundtrip_and_parseval():
    w = HaarWavelet(3)
    img = rng.standard_normal((32, 32))
    c = w.forward(img)
    np.testing.assert_allclose(w.inverse(c), img, atol=1e-10)
    assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(img), abs=1e-10)


def test_wavelet_constant_image_has_zero_detail():
    w = HaarWavelet(2)
    c = w.forward(np.full((16, 16), 0.4))
    coarse = c[:4, :4].copy()
    c[:4, :4] = 0.0
    assert np.max(np.abs(c)) <= 1e-12
    assert np.max(np.abs(coarse)) > 0


def test_wavelet_levels_zero_is_identity_and_bad_dims_rejected():
    w = HaarWavelet(0)
    img = rng.standard_normal((6, 6))
    np.testing.assert_array_equal(w.forward(img), img)
    with pytest.raises(ValueError):
        HaarWavelet(2).forward(np.zeros((6, 6)))
    assert default_levels((64, 64)) == 3
    assert default_levels((48, 48)) == 3
    assert default_levels((6, 10)) == 1


def test_af_nonblind_delta_kernel_scalar_formula():
    w = HaarWavelet(0)
    y = rng.uniform(0, 1, size=(8, 8))
    x = rng.standard_normal((8, 8))
    tau = 0.3
    out = af_nonblind(x, y, synth.delta_kernel(3), tau, w)
    np.testing.assert_allclose(out, (y + tau * x) / (1.0 + tau), atol=1e-12)


def test_af_nonblind_moves_toward_data_consistency():
    z_true = synth.synthetic_image(32, 1)
    k = synth.gaussian_kernel(7)
    y = convolve_circular(z_true, k)
    w = HaarWavelet(default_levels(y.shape))
    x_off = w.forward(z_true) + 0.3 * rng.standard_normal(y.shape)
    out = af_nonblind(x_off, y, k, 1e-3, w)
    err_before = np.linalg.norm(w.inverse(x_off) - z_true)
    err_after = np.linalg.norm(w.inverse(out) - z_true)
    assert err_after < err_before


def test_af_nonblind_normal_equation_residual():
    y = rng.uniform(0, 1, size=(16, 16))
    k = rng.uniform(0, 1, size=(5, 5))
    k /= k.sum()
    tau = 0.05
    w = HaarWavelet(2)
    x = rng.standard_normal((16, 16))
    out = af_nonblind(x, y, k, tau, w)
    z_star = w.inverse(out)
    lhs = correlate_circular(convolve_circular(z_star, k), k) + tau * z_star
    rhs = correlate_circular(y, k) + tau * w.inverse(x)
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs)


def test_af_nonblind_rejects_bad_tau():
    with pytest.raises(ValueError):
        af_nonblind(np.zeros((8, 8)), np.zeros((8, 8)), synth.delta_kernel(3), 0.0, HaarWavelet(0))


def test_nonblind_problem_gradient_matches_finite_differences():
    z = synth.synthetic_image(32, 2)
    k = synth.gaussian_kernel(5)
    y = convolve_circular(z, k)
    problem, w = nonblind_problem(y, k, ScalarPenalty("l1", 1e-3))
    x = w.forward(y) + 0.1 * rng.standard_normal(y.shape)
    g = problem.smooth.gradient(x)
    idx = [(0, 0), (3, 7), (17, 25)]
    for i, j in idx:
        e = np.zeros_like(x)
        e[i, j] = 1e-6
        fd = (problem.smooth.value(x + e) - problem.smooth.value(x - e)) / 2e-6
        assert g[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_solve_nonblind_near_exact_recovery_without_blur():
    z = synth.synthetic_image(64, 3)
    y = convolve_circular(z, synth.delta_kernel(3))
    cfg = SolverConfig(max_iters=40, iter_error_tol=1e-10)
    out, trace = solve_nonblind(y, synth.delta_kernel(3), ScalarPenalty("l1", 1e-12), "pg", cfg)
    assert psnr(out, z) >= 60.0


def test_solve_nonblind_beats_blurred_input():
    z, b, y = synth.synthetic_instance(seed=11, size=64, kernel_kind="gaussian",
                                       noise_level=0.01, kernel_size=9)
    cfg = SolverConfig(max_iters=120, iter_error_tol=1e-4, mu_schedule=0.4, C_schedule=0.196)
    out, trace = solve_nonblind(y, b, ScalarPenalty("l0", 5e-4), "ifima", cfg,
                                tau=0.2, image_denoiser=module_tv_denoise(1e-3))
    assert psnr(out, z) > psnr(y, z) + 2.0
    # inherited descent chain
    psi_v = np.array(trace.diag["psi_v"])
    psi_x = np.array(trace.diag["psi_x"])
    psi_next = trace.column("objective")
    assert np.all(psi_next <= psi_v + 1e-10 * np.abs(psi_v))
    assert np.all(psi_v <= psi_x + 1e-10 * np.abs(psi_x))


def test_solve_nonblind_rejects_unknown_scheme_and_module():
    z, b, y = synth.synthetic_instance(seed=1, size=32, kernel_kind="delta",
                                       noise_level=0.0, kernel_size=3)
    with pytest.raises(ValueError):
        solve_nonblind(y, b, ScalarPenalty("l1", 1e-3), "bogus", SolverConfig(max_iters=2))
    with pytest.raises(ValueError):
        solve_nonblind(y, b, ScalarPenalty("l1", 1e-3), "efima", SolverConfig(max_iters=2),
                       module="warp")


def test_af_blind_fixed_point_at_ground_truth():
    z = synth.synthetic_image(48, 4)
    b = synth.motion_line_kernel(9, 0.7)
    grad_y = image_gradients(convolve_circular(z, b))
    x_true = image_gradients(z)
    x_new, b_new = af_blind(x_true, b, grad_y, tau_x=1e-3, tau_b=1.0)
    assert np.linalg.norm(x_new - x_true) <= 1e-6 * max(1.0, np.linalg.norm(x_true))
    assert np.linalg.norm(b_new - b) <= 1e-6


def test_af_blind_strong_anchors_freeze_inputs():
    z = synth.synthetic_image(32, 5)
    b0 = synth.gaussian_kernel(7)
    grad_y = image_gradients(convolve_circular(z, synth.motion_line_kernel(7, 0.3)))
    x0 = image_gradients(z) * 0.5
    x_new, b_new = af_blind(x0, b0, grad_y, tau_x=1e8, tau_b=1e8)
    assert np.linalg.norm(x_new - x0) <= 1e-6
    assert np.linalg.norm(b_new - b0) <= 1e-6


def test_af_blind_x_subproblem_residual():
    x = np.stack([rng.standard_normal((16, 16)), rng.standard_normal((16, 16))])
    b = synth.gaussian_kernel(5)
    grad_y = np.stack([rng.standard_normal((16, 16)), rng.standard_normal((16, 16))])
    tau_x = 0.2
    x_new, _ = af_blind(x, b, grad_y, tau_x=tau_x, tau_b=1.0)
    for c in range(2):
        lhs = correlate_circular(convolve_circular(x_new[c], b), b) + tau_x * x_new[c]
        rhs = correlate_circular(grad_y[c], b) + tau_x * x[c]
        assert np.linalg.norm(lhs - rhs) <= 1e-6 * np.linalg.norm(rhs)


def test_estimate_kernel_cg_recovers_kernel():
    z = synth.synthetic_image(48, 6)
    b_true = synth.motion_line_kernel(9, 1.1)
    x = image_gradients(z)
    grad_y = np.stack([convolve_circular(x[c], b_true) for c in range(2)])
    b_est = estimate_kernel_cg(x, grad_y, 1e-8, kernel_shape=(9, 9))
    assert np.linalg.norm(b_est - b_true) <= 1e-3


def test_estimate_kernel_cg_zero_gradients_give_zero_kernel():
    x = np.zeros((2, 16, 16))
    grad_y = np.zeros((2, 16, 16))
    b = estimate_kernel_cg(x, grad_y, 2.0, kernel_shape=(5, 5))
    np.testing.assert_array_equal(b, np.zeros((5, 5)))


def test_estimate_kernel_cg_residual_certificate():
    z = synth.synthetic_image(32, 7)
    x = image_gradients(z)
    grad_y = np.stack([convolve_circular(x[c], synth.gaussian_kernel(5)) for c in range(2)])
    lam = 0.5
    b = estimate_kernel_cg(x, grad_y, lam, kernel_shape=(5, 5))
    from fima.deconv import _kernel_normal_ops

    gram, rhs_from = _kernel_normal_ops(x, grad_y, (5, 5))
    rhs = rhs_from(grad_y)
    resid = rhs - (gram(b) + lam * b)
    assert np.linalg.norm(resid) <= 1e-6 * np.linalg.norm(rhs)


def test_blind_problem_gradients_match_finite_differences():
    z = synth.synthetic_image(32, 8)
    b = synth.gaussian_kernel(5)
    grad_y = image_gradients(convolve_circular(z, synth.motion_line_kernel(5, 0.4)))
    problem = blind_problem(grad_y, lambda_x=1e-3)
    x = image_gradients(z)

    def f_of_b(bb):
        return problem.f_value([x, bb.reshape(5, 5)])

    g_b = problem.grad_block([x, b], 1)
    fd = fd_gradient(f_of_b, b.ravel()).reshape(5, 5)
    np.testing.assert_allclose(g_b, fd, rtol=1e-5, atol=1e-6)


def test_resize_kernel_keeps_simplex():
    b = synth.motion_line_kernel(11, 0.9)
    for target in ((7, 7), (15, 15), (11, 11)):
        out = resize_kernel(b, target)
        assert out.shape == target
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-12


def test_solve_blind_smoke():
    z, b_true, y = synth.synthetic_instance(seed=3, size=64, kernel_kind="motion-line",
                                            noise_level=0.0, kernel_size=11)
    cfg = SolverConfig(max_iters=8, iter_error_tol=1e-4)
    x, b, trace = solve_blind(y, 11, cfg, scales=2, gradient_denoiser=module_tv_denoise(1e-3))
    assert b.shape == (11, 11)
    for snap in trace.diag["kernel_snapshots"]:
        assert np.all(snap >= 0.0)
        assert abs(snap.sum() - 1.0) <= 1e-12
    ks = kernel_similarity(b, b_true)
    assert ks > kernel_similarity(np.full((11, 11), 1.0 / 121.0), b_true)


def test_solve_blind_identity_modules_keeps_descent():
    z, b_true, y = synth.synthetic_instance(seed=4, size=64, kernel_kind="motion-line",
                                            noise_level=0.0, kernel_size=11)
    cfg = SolverConfig(max_iters=6, iter_error_tol=1e-4)
    x, b, trace = solve_blind(y, 11, cfg, scales=1, identity_modules=True)
    objs = trace.column("objective")
    assert np.all(np.diff(objs) <= 1e-10 * np.maximum(1.0, np.abs(objs[:-1])))
    assert np.all(b >= 0.0) and abs(b.sum() - 1.0) <= 1e-12


def test_solve_blind_validates_arguments():
    y = synth.synthetic_image(64, 1)
    with pytest.raises(ValueError):
        solve_blind(y, 10, SolverConfig(max_iters=2))
    with pytest.raises(ValueError):
        solve_blind(y, 11, SolverConfig(max_iters=2), scales=0)
