import numpy as np
import pytest

from _helpers import box, dsl_problem
from slhjb import expr as ex
from slhjb.errors import InvalidArgumentError, NonFiniteValueError
from slhjb.mesh import build_uniform_mesh
from slhjb.problem import (
    REGISTRY,
    Problem,
    benchmark,
    make_manufactured,
    manufactured_1d,
    manufactured_2d,
    sample_control_set,
    validate_problem,
)


def test_control_set_examples():
    np.testing.assert_array_equal(sample_control_set(([-1], [1]), [3]).samples[:, 0], [-1, 0, 1])
    corners = sample_control_set(([-1, -1], [1, 1]), [2, 2]).samples
    assert sorted(map(tuple, corners)) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    np.testing.assert_array_equal(sample_control_set(([-1], [1]), [1]).samples, [[0.0]])


@pytest.mark.parametrize("bounds,counts", [(([1], [-1]), [2]), (([-1], [1]), [0]), (([-1], [1]), [2, 2])])
def test_control_set_rejects_bad_input(bounds, counts):
    with pytest.raises(InvalidArgumentError):
        sample_control_set(bounds, counts)


def test_constant_manufactured_solution():
    ctrl = sample_control_set(([-1], [1]), [5])
    mp = make_manufactured("1", ["u1*y1 + 3"], 1.0, box(-1, 1), ctrl)
    Y = np.linspace(-1, 1, 7)[:, None]
    for u in ctrl.samples:
        np.testing.assert_array_equal(mp.problem.g(Y, u), 1.0)
    np.testing.assert_array_equal(mp.exact(Y), 1.0)


def test_benchmark_running_cost_matches_hand_derivation():
    mp = manufactured_1d()
    rng = np.random.default_rng(0)
    Y = rng.uniform(-1, 1, (500, 1))
    U = rng.uniform(-1, 1, (500, 1))
    y, u = Y[:, 0], U[:, 0]
    np.testing.assert_allclose(mp.problem.g(Y, U), y**2 - 2 * u * y * (1 - y**2), atol=1e-15)


@pytest.mark.parametrize("mp", [manufactured_1d(), manufactured_2d()], ids=["1d", "2d"])
def test_hjb_residual_is_rounding_level(mp):
    p = mp.problem
    rng = np.random.default_rng(5)
    Y = rng.uniform(p.domain.lower, p.domain.upper, (1000, p.n))
    U = rng.uniform(p.controls.lower, p.controls.upper, (1000, p.m))
    assert np.abs(mp.hjb_residual(Y, U)).max() <= 1e-10


def test_hjb_residual_for_a_nonpolynomial_manufactured_solution():
    ctrl = sample_control_set(([-1, 0], [1, 2]), [3, 3])
    mp = make_manufactured("sin(y1)*exp(y2) + y1*y2", ["u1*cos(y2)", "u2 - y1^2"], 0.7, box([-1, -1], [1, 1]), ctrl)
    rng = np.random.default_rng(9)
    Y = rng.uniform(-1, 1, (1000, 2))
    U = rng.uniform([-1, 0], [1, 2], (1000, 2))
    assert np.abs(mp.hjb_residual(Y, U)).max() <= 1e-10


def test_exact_value_may_not_depend_on_controls():
    with pytest.raises(InvalidArgumentError):
        make_manufactured("y1*u1", ["u1"], 1.0, box(-1, 1), sample_control_set(([-1], [1]), [3]))


def test_registry_bounds_hold_on_a_dense_grid():
    for name, (n, m, _) in REGISTRY.items():
        dom = box([-1.0] * n, [1.0] * n)
        mp = benchmark(name, 1.0, dom, sample_control_set(([-1.0] * m, [1.0] * m), [3] * m))
        p = mp.problem
        g1 = np.linspace(-1, 1, 201 if n == 1 else 41)
        Y = np.stack(np.meshgrid(*[g1] * n, indexing="ij"), -1).reshape(-1, n)
        worst = 0.0
        for u in sample_control_set(([-1.0] * m, [1.0] * m), [21 if m == 1 else 9] * m).samples:
            worst = max(worst, np.abs(p.g(Y, u)).max())
            assert np.abs(p.f(Y, u)).max() <= p.bounds.M_f + 1e-12
        assert worst <= p.bounds.M_g + 1e-12
        assert worst >= 0.99 * p.bounds.M_g


def test_benchmark_rejects_wrong_dimensions():
    with pytest.raises(InvalidArgumentError):
        benchmark("manufactured-2d", 1.0, box(-1, 1), sample_control_set(([-1], [1]), [3]))
    with pytest.raises(InvalidArgumentError):
        benchmark("nope", 1.0, box(-1, 1), sample_control_set(([-1], [1]), [3]))


def test_lambda_must_be_positive():
    with pytest.raises(InvalidArgumentError):
        dsl_problem("0", "1", lam=0.0)


def test_benchmark_dynamics_are_invariant_for_moderate_steps():
    mp = manufactured_1d()
    mesh = build_uniform_mesh(mp.problem.domain, [40])
    for h in (0.05, 0.25, 0.5):
        assert validate_problem(mp.problem, h, mesh).invariance_violations == 0


def test_benchmark_invariance_matches_direct_check():
    mp = manufactured_1d()
    mesh = build_uniform_mesh(mp.problem.domain, [40])
    y = mesh.vertices[:, 0][:, None]
    u = mp.problem.controls.samples[:, 0][None, :]
    for h in (0.5, 0.9):
        feet = y + h * u * (1 - y**2)
        expected = int(np.count_nonzero(np.abs(feet) > 1))
        assert validate_problem(mp.problem, h, mesh).invariance_violations == expected


def test_constant_drift_leaves_through_the_right_boundary():
    p = dsl_problem("1", "1", lower=0.0, upper=1.0)
    mesh = build_uniform_mesh(p.domain, [4])
    report = validate_problem(p, 0.1, mesh)
    assert report.invariance_violations == len(p.controls)
    assert report.worst_vertex == mesh.n_vertices - 1
    assert report.worst_violation == pytest.approx(0.1)


def test_unit_cost_reports_unit_bound():
    p = dsl_problem("0", "1")
    report = validate_problem(p, 0.1, build_uniform_mesh(p.domain, [5]))
    assert report.max_abs_g == 1.0
    assert report.as_bounds().M_g == 1.0
    assert "invariance violations    0" in report.format()


def test_lipschitz_estimates_do_not_exceed_true_constants():
    mp = manufactured_1d()
    report = validate_problem(mp.problem, 0.1, build_uniform_mesh(mp.problem.domain, [10]), pairs=5000)
    assert report.L_f <= 2.0 + 1e-12 and report.L_f > 1.0
    assert report.L_g <= 6.0 + 1e-12


def test_validate_names_nonfinite_data():
    p = dsl_problem("0", "log(y1)", lower=0.0, upper=1.0)
    with pytest.raises(NonFiniteValueError, match="vertex 0"):
        validate_problem(p, 0.1, build_uniform_mesh(p.domain, [4]))


def test_problem_accepts_python_callables():
    dom = box(0, 1)
    p = Problem(1, 1, lambda Y, U: -Y, lambda Y, U: U[:, 0] ** 2, 2.0, dom, sample_control_set(([0], [1]), [2]))
    np.testing.assert_array_equal(p.f([[0.5]], [[1.0]]), [[-0.5]])
    np.testing.assert_array_equal(p.g([[0.5], [0.2]], [[3.0]]), [9.0, 9.0])
    assert isinstance(p.with_bounds(M_g=1.0).bounds.M_g, float)


def test_problem_keeps_its_expressions():
    p = dsl_problem("u1*(1 - y1^2)", "y1^2")
    assert ex.to_string(p.cost_expr) == ex.to_string(ex.parse_expression("y1^2"))
