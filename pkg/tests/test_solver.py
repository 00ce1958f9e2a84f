import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import dsl_problem, sample_problem
from slhjb.errors import ConvergenceError, InvalidStepError, OutOfDomainError
from slhjb.interp import NodalField, sample_function
from slhjb.mesh import build_uniform_mesh
from slhjb.problem import manufactured_1d, manufactured_2d
from slhjb.solver import BellmanOperator, SolveConfig, bellman_apply, lipschitz_estimate, solve_fixed_point


def test_one_sweep_from_zero_is_the_stage_cost():
    p = dsl_problem("u1*(1 - y1^2)", "1")
    mesh = build_uniform_mesh(p.domain, [8])
    out, _ = bellman_apply(NodalField(mesh, np.zeros(mesh.n_vertices)), p, 0.1)
    np.testing.assert_allclose(out.scalar, 0.1, rtol=0, atol=1e-15)


def test_constant_is_a_fixed_point():
    p = dsl_problem("u1*(1 - y1^2)", "1")
    mesh = build_uniform_mesh(p.domain, [8])
    out, _ = bellman_apply(NodalField(mesh, np.ones(mesh.n_vertices)), p, 0.1)
    np.testing.assert_allclose(out.scalar, 1.0, rtol=0, atol=1e-15)


def test_three_vertex_sweep_matches_hand_enumeration():
    # mesh {0, 0.5, 1}; controls -0.5 and 0.5; feet stay inside for h = 0.4
    p = sample_problem("u1*(1 - y1)", "y1 + u1^2 + 0.3*u1", [[-0.5], [0.5]], lower=0.0, upper=1.0, lam=0.8)
    mesh = build_uniform_mesh(p.domain, [2])
    h = 0.4
    v = np.array([0.7, -0.2, 1.3])
    out, arg = bellman_apply(NodalField(mesh, v), p, h)
    grid = np.array([0.0, 0.5, 1.0])
    delta = 1 - 0.8 * h
    for i, y in enumerate(grid):
        cands = []
        for u in (-0.5, 0.5):
            foot = y + h * u * (1 - y)
            cands.append(delta * np.interp(foot, grid, v) + h * (y + u * u + 0.3 * u))
        assert out.scalar[i] == pytest.approx(min(cands), abs=1e-15)
        assert arg[i] == int(np.argmin(cands))


def test_ties_go_to_the_lowest_control_index():
    p = sample_problem("0", "u1^2", [[1.0], [-1.0], [0.0], [0.0]])
    mesh = build_uniform_mesh(p.domain, [3])
    _, arg = bellman_apply(NodalField(mesh, np.zeros(4)), p, 0.1)
    np.testing.assert_array_equal(arg, 2)
    p = sample_problem("0", "1", [[1.0], [-1.0]])
    _, arg = bellman_apply(NodalField(mesh, np.zeros(4)), p, 0.1)
    np.testing.assert_array_equal(arg, 0)


@pytest.mark.parametrize("c,h,cells", [(1.0, 0.1, [5]), (-2.5, 0.37, [13]), (4.0, 0.9, [1])])
def test_constant_cost_solution(c, h, cells):
    p = dsl_problem("u1*(1 - y1^2)", str(c))
    mesh = build_uniform_mesh(p.domain, cells)
    v = solve_fixed_point(p, mesh, h, SolveConfig(tolerance=1e-12))
    np.testing.assert_allclose(v.values, c, rtol=0, atol=1e-10)


def test_constant_cost_with_lambda_two():
    p = dsl_problem("u1*(1 - y1^2)", "3", lam=2.0)
    v = solve_fixed_point(p, build_uniform_mesh(p.domain, [4]), 0.2, SolveConfig(tolerance=1e-12))
    np.testing.assert_allclose(v.values, 1.5, atol=1e-10)


@pytest.mark.parametrize("h", [1.0, 0.0, -0.1, 2.0])
def test_invalid_steps(h):
    p = dsl_problem("0", "1")
    with pytest.raises(InvalidStepError, match=r"h must lie in \(0, 1/lambda\)"):
        solve_fixed_point(p, build_uniform_mesh(p.domain, [4]), h)


def test_manufactured_error_decreases_with_joint_refinement():
    mp = manufactured_1d()
    errs = []
    for cells, h in [(10, 0.2), (20, 0.1), (40, 0.05)]:
        mesh = build_uniform_mesh(mp.problem.domain, [cells])
        v = solve_fixed_point(mp.problem, mesh, h)
        errs.append(np.abs(v.values - mp.exact(mesh.vertices)).max())
    assert errs[0] > errs[1] > errs[2] > 0


def test_fixed_point_residual_below_tolerance():
    mp = manufactured_1d()
    mesh = build_uniform_mesh(mp.problem.domain, [20])
    tol = 1e-8
    v = solve_fixed_point(mp.problem, mesh, 0.1, SolveConfig(tolerance=tol))
    out, _ = bellman_apply(v.field, mp.problem, 0.1)
    assert np.abs(out.scalar - v.values).max() <= tol
    # the stopping rule bounds the distance to the true fixed point by tol
    tight = solve_fixed_point(mp.problem, mesh, 0.1, SolveConfig(tolerance=1e-13))
    assert np.abs(tight.values - v.values).max() <= tol


def test_iteration_count_follows_contraction_factor():
    p = dsl_problem("0", "1")
    mesh = build_uniform_mesh(p.domain, [3])
    h, tol = 0.1, 1e-10
    v = solve_fixed_point(p, mesh, h, SolveConfig(tolerance=tol))
    delta = 1 - h
    # from v = 0 the update after sweep j is h delta^(j-1)
    expected = int(np.ceil(np.log(tol * (1 - delta) / delta / h) / np.log(delta))) + 1
    assert abs(v.iterations - expected) <= 1


def test_non_convergence_raises():
    p = dsl_problem("0", "1")
    with pytest.raises(ConvergenceError) as info:
        solve_fixed_point(p, build_uniform_mesh(p.domain, [3]), 0.01, SolveConfig(max_iterations=5))
    assert info.value.iterations == 5 and info.value.residual > 0


def test_reject_policy_names_vertex_and_control():
    p = dsl_problem("1", "1", lower=0.0, upper=1.0)
    mesh = build_uniform_mesh(p.domain, [4])
    with pytest.raises(OutOfDomainError, match="vertex 4"):
        BellmanOperator(p, mesh, 0.1, "reject")
    op = BellmanOperator(p, mesh, 0.1, "clamp")
    assert op.clamp_events == len(p.controls)


def _random_pairs(seed, nv, count):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        scale = rng.uniform(0.1, 10)
        yield rng.normal(0, scale, nv), rng.normal(0, scale, nv)


@pytest.mark.parametrize("mp", [manufactured_1d(), manufactured_2d(5)], ids=["1d", "2d"])
def test_contraction_and_monotonicity(mp):
    mesh = build_uniform_mesh(mp.problem.domain, [12] * mp.problem.n)
    h = 0.15
    op = BellmanOperator(mp.problem, mesh, h)
    for v, w in _random_pairs(0, mesh.n_vertices, 100):
        tv, _ = op.apply(v)
        tw, _ = op.apply(w)
        assert np.abs(tv - tw).max() <= op.delta * np.abs(v - w).max() + 1e-12
    rng = np.random.default_rng(1)
    for v, _ in _random_pairs(2, mesh.n_vertices, 100):
        w = v + rng.uniform(0, 3, mesh.n_vertices)
        assert np.all(op.apply(v)[0] <= op.apply(w)[0] + 1e-12)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_workers_do_not_change_any_bit(workers, seed):
    mp = manufactured_2d(5)
    mesh = build_uniform_mesh(mp.problem.domain, [9, 7])
    op = BellmanOperator(mp.problem, mesh, 0.1)
    v = np.random.default_rng(seed).normal(size=mesh.n_vertices)
    a, ia = op.apply(v, 1)
    b, ib = op.apply(v, workers)
    assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(ia, ib)


def test_full_solve_is_bit_identical_across_workers():
    mp = manufactured_2d(5)
    mesh = build_uniform_mesh(mp.problem.domain, [10, 10])
    a = solve_fixed_point(mp.problem, mesh, 0.1, workers=1)
    b = solve_fixed_point(mp.problem, mesh, 0.1, workers=4)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.iterations == b.iterations


def test_initial_guess_does_not_change_the_limit():
    mp = manufactured_1d()
    mesh = build_uniform_mesh(mp.problem.domain, [10])
    a = solve_fixed_point(mp.problem, mesh, 0.1, SolveConfig(tolerance=1e-12))
    b = solve_fixed_point(mp.problem, mesh, 0.1, SolveConfig(tolerance=1e-12, initial_guess=5.0))
    np.testing.assert_allclose(a.values, b.values, atol=2e-12)


def test_lipschitz_estimates():
    p = dsl_problem("0", "1")
    mesh = build_uniform_mesh(p.domain, [6])
    assert lipschitz_estimate(NodalField(mesh, np.full(7, 3.0))) == 0.0
    assert lipschitz_estimate(sample_function(mesh, lambda Y: Y[:, 0])) == pytest.approx(1.0)


def test_lipschitz_of_solution_respects_the_growth_bound():
    lam = 3.0
    mp = manufactured_1d(lam=lam)
    mesh = build_uniform_mesh(mp.problem.domain, [40])
    v = solve_fixed_point(mp.problem, mesh, 0.05)
    L_f, L_g = 2.0, 2 * lam + 4  # sup |dg/dy| = 2 lam + 4, at y = u = 1
    assert lipschitz_estimate(v) <= L_g / (lam - L_f) + 0.1


def test_value_function_interpolates():
    mp = manufactured_1d()
    mesh = build_uniform_mesh(mp.problem.domain, [20])
    v = solve_fixed_point(mp.problem, mesh, 0.1)
    assert v(np.array([0.0])) == pytest.approx(v.values[10])
    assert v(np.array([[0.05], [0.1]])).shape == (2,)
