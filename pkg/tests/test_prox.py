import numpy as np
import pytest

from fima.prox import (ScalarPenalty, SimplexSet, penalty_prox, penalty_value,
                       project_simplex, prox_l0, prox_l1, prox_lp_half, quadratic_model)

from oracles import scalar_prox_oracle, simplex_oracle_3d, simplex_oracle_3d_refined

rng = np.random.default_rng(20240811)


def test_prox_l1_examples():
    np.testing.assert_allclose(prox_l1([3.0], 1.0), [2.0], atol=1e-12)
    np.testing.assert_allclose(prox_l1([0.0, 0.0], 0.5), [0.0, 0.0])
    np.testing.assert_allclose(prox_l1([-0.3], 0.5), [0.0])


def test_prox_l0_examples():
    np.testing.assert_allclose(prox_l0([2.0], 1.0), [2.0])
    np.testing.assert_allclose(prox_l0([1.0], 1.0), [0.0])
    np.testing.assert_allclose(prox_l0([0.0], 1.0), [0.0])


def test_prox_l0_tie_resolves_to_zero():
    # v^2 == 2*theta exactly representable: v=2, theta=2
    assert prox_l0([2.0], 2.0)[0] == 0.0


def test_prox_lp_half_examples():
    np.testing.assert_allclose(prox_lp_half([0.0], 1.0), [0.0])
    np.testing.assert_allclose(prox_lp_half([0.01], 1.0), [0.0])
    expected = scalar_prox_oracle(lambda x: np.sqrt(np.abs(x)), 5.0, 0.1)
    np.testing.assert_allclose(prox_lp_half([5.0], 0.1), [expected], atol=1e-5)


def test_prox_lp_half_threshold_boundary():
    # the magnitude at which the nonzero branch starts winning is 1.5*theta^(2/3)
    assert prox_lp_half([1.5], 1.0)[0] == 0.0
    assert prox_lp_half([1.5 + 1e-6], 1.0)[0] > 0.9


def test_scalar_prox_against_grid_oracle():
    cases = {
        "l1": (prox_l1, lambda x: np.abs(x)),
        "l0": (prox_l0, lambda x: (x != 0).astype(float)),
        "lp_half": (prox_lp_half, lambda x: np.sqrt(np.abs(x))),
    }
    for name, (op, h) in cases.items():
        for _ in range(40):
            v = float(rng.uniform(-5, 5))
            theta = float(rng.uniform(0.05, 3.0))
            got = op([v], theta)[0]
            want = scalar_prox_oracle(h, v, theta)
            assert abs(got - want) <= 1e-5 + 1e-6, f"{name}: v={v} theta={theta}"


def test_prox_optimality_dominance():
    # prox output must beat 1000 random probe points in the prox objective
    penalties = [ScalarPenalty("l1", 0.7), ScalarPenalty("l0", 0.3),
                 ScalarPenalty("lp_half", 0.5)]
    for pen in penalties:
        for _ in range(5):
            v = rng.uniform(-3, 3, size=8)
            gamma = float(rng.uniform(0.1, 2.0))
            p = penalty_prox(pen, v, gamma)
            base = penalty_value(pen, p) + np.sum((p - v) ** 2) / (2 * gamma)
            probes = rng.uniform(-4, 4, size=(1000, 8))
            vals = np.array([penalty_value(pen, q) + np.sum((q - v) ** 2) / (2 * gamma)
                             for q in probes])
            assert np.all(base <= vals + 1e-9)


def test_simplex_optimality_dominance():
    for _ in range(5):
        v = rng.uniform(-1, 2, size=6)
        p = project_simplex(v)
        base = np.sum((p - v) ** 2)
        probes = rng.dirichlet(np.ones(6), size=1000)
        vals = np.sum((probes - v) ** 2, axis=1)
        assert np.all(base <= vals + 1e-9)


def test_prox_separability_permutation():
    v = rng.uniform(-2, 2, size=12)
    perm = rng.permutation(12)
    for op, theta in ((prox_l1, 0.4), (prox_l0, 0.2)):
        np.testing.assert_array_equal(op(v, theta)[perm], op(v[perm], theta))


def test_project_simplex_examples():
    np.testing.assert_array_equal(project_simplex([0.3, 0.7]), [0.3, 0.7])
    np.testing.assert_allclose(project_simplex([1.2, 0.2]), [1.0, 0.0], atol=2e-4)
    np.testing.assert_array_equal(project_simplex([0.5]), [1.0])


def test_project_simplex_against_dense_grid_oracle():
    v = np.array([0.9, -0.2, 0.5])
    want = simplex_oracle_3d(v, step=1e-3)
    got = project_simplex(v)
    assert np.max(np.abs(got - want)) <= 2e-3


def test_project_simplex_invariants():
    for _ in range(30):
        v = rng.uniform(-2, 2, size=int(rng.integers(1, 30)))
        w = project_simplex(v)
        assert np.all(w >= 0.0)
        assert abs(w.sum() - 1.0) <= 1e-12
        np.testing.assert_array_equal(project_simplex(w), w)  # bitwise idempotent


def test_project_simplex_random_vs_refined_oracle():
    for _ in range(10):
        v = rng.uniform(-1, 1.5, size=3)
        got = project_simplex(v)
        want = simplex_oracle_3d_refined(v)
        assert np.max(np.abs(got - want)) <= 2e-4


class _Quad:
    def __init__(self):
        self.value = lambda x: 0.5 * float(np.vdot(x, x))
        self.gradient = lambda x: np.asarray(x, dtype=float)


def test_quadratic_model_examples():
    f = _Quad()
    assert quadratic_model(f, np.array([0.0]), np.array([1.0]), 1.0) == pytest.approx(0.5)
    x = np.array([0.7, -0.2])
    assert quadratic_model(f, x, x, 0.3) == pytest.approx(f.value(x))
    assert quadratic_model(f, np.array([1.0]), np.array([2.0]), 0.5) == pytest.approx(2.5)


def test_input_validation():
    with pytest.raises(ValueError):
        prox_l1([np.nan], 1.0)
    with pytest.raises(ValueError):
        prox_l1([1.0], 0.0)
    with pytest.raises(ValueError):
        prox_l0([np.inf], 1.0)
    with pytest.raises(ValueError):
        project_simplex([])
    with pytest.raises(ValueError):
        project_simplex([np.nan, 0.5])


def test_scalar_penalty_type():
    with pytest.raises(ValueError):
        ScalarPenalty("l7", 1.0)
    with pytest.raises(ValueError):
        ScalarPenalty("l1", -0.5)
    assert ScalarPenalty("simplex", 3.0).weight == 0.0
    assert ScalarPenalty("zero", 9.0).weight == 0.0
    with pytest.raises(ValueError):
        SimplexSet(0)
    assert SimplexSet(4).dimension == 4


def test_penalty_values():
    assert penalty_value(ScalarPenalty("l1", 2.0), [1.0, -3.0]) == pytest.approx(8.0)
    assert penalty_value(ScalarPenalty("l0", 2.0), [1.0, 0.0, -3.0]) == pytest.approx(4.0)
    assert penalty_value(ScalarPenalty("simplex"), [0.5, 0.5]) == 0.0
    assert penalty_value(ScalarPenalty("simplex"), [0.5, 0.1]) == np.inf
    assert penalty_value(ScalarPenalty("zero"), [5.0]) == 0.0
