import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import dsl_problem
from slhjb.errors import InvalidArgumentError, StudyAborted
from slhjb.mesh import build_uniform_mesh
from slhjb.problem import manufactured_1d
from slhjb.solver import SolveConfig, solve_fixed_point
from slhjb.study import (
    FineReference,
    RefinementSchedule,
    error_against_reference,
    fit_rate,
    fixed_k_blowup_test,
    run_refinement_study,
)

HK = np.array([0.2, 0.1, 0.05, 0.025])


@pytest.mark.parametrize("order", [1, 2])
def test_exact_power_law_recovers_the_exponent(order):
    fit = fit_rate(HK, 3.7 * HK**order)
    assert abs(fit.slope - order) <= 1e-12
    assert fit.intercept == pytest.approx(math.log(3.7), abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.reliable


@given(st.floats(0.1, 4.0), st.floats(1e-3, 1e3), st.lists(st.floats(1e-4, 1.0), min_size=2, max_size=8, unique=True))
@settings(max_examples=60, deadline=None)
def test_fit_recovers_any_power_law(p, c, xs):
    xs = np.array(xs)
    if np.ptp(np.log(xs)) < 1e-3:
        return
    assert abs(fit_rate(xs, c * xs**p).slope - p) <= 1e-9


def test_noisy_fit_is_flagged_unreliable():
    fit = fit_rate(HK, [1.0, 0.01, 1.0, 0.01])
    assert not fit.reliable


def test_fit_rejects_nonpositive_errors():
    with pytest.raises(InvalidArgumentError):
        fit_rate(HK, [0.1, 0.0, 0.1, 0.1])


def test_error_against_reference_examples():
    mp = manufactured_1d()
    mesh = build_uniform_mesh(mp.problem.domain, [10])
    v = solve_fixed_point(mp.problem, mesh, 0.1)
    vals = v.values.copy()
    assert error_against_reference(v, lambda Y: vals) == 0.0
    assert error_against_reference(v, lambda Y: vals + 0.5) == pytest.approx(0.5, abs=1e-15)
    assert error_against_reference(v, mp.exact) > 0


def test_joint_schedule_on_the_benchmark():
    mp = manufactured_1d()
    schedule = RefinementSchedule.joint([0.1, 0.05, 0.025, 0.0125], mp.problem.domain)
    assert [c for _, c in schedule.entries] == [(20,), (40,), (80,), (160,)]
    run = run_refinement_study(mp, schedule, SolveConfig(tolerance=1e-10))
    errs = [r.sup_error for r in run.records]
    for a, b in zip(errs, errs[1:]):
        assert b <= 1.05 * a
    assert 0.8 <= run.slope <= 1.2 and run.r2 >= 0.98
    assert not run.warnings
    assert all(r.h == pytest.approx(r.k) for r in run.records)


def test_records_are_sorted_coarse_to_fine():
    mp = manufactured_1d(5)
    schedule = RefinementSchedule(((0.05, (40,)), (0.2, (10,)), (0.1, (20,))))
    run = run_refinement_study(mp, schedule)
    assert [r.h for r in run.records] == [0.2, 0.1, 0.05]


def test_fine_reference_warning():
    mp = manufactured_1d(5)
    schedule = RefinementSchedule(((0.2, (10,)), (0.1, (20,))), FineReference(0.05, (40,)))
    with pytest.warns(UserWarning, match="quarter"):
        run = run_refinement_study(mp, schedule)
    assert run.warnings
    schedule = RefinementSchedule(((0.2, (10,)), (0.1, (20,))), FineReference(0.02, (100,)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run = run_refinement_study(mp, schedule)
    assert len(run.records) == 2


def test_exact_reference_needs_manufactured_problem():
    p = dsl_problem("0", "1")
    with pytest.raises(InvalidArgumentError):
        run_refinement_study(p, RefinementSchedule(((0.1, (4,)),)))


def test_empty_schedule():
    with pytest.raises(InvalidArgumentError):
        RefinementSchedule(())


def test_failed_solve_aborts_with_partial_results():
    mp = manufactured_1d(5)
    schedule = RefinementSchedule(((0.2, (10,)), (0.01, (10,))))
    with pytest.raises(StudyAborted) as info:
        run_refinement_study(mp, schedule, SolveConfig(max_iterations=300))
    assert len(info.value.partial.records) == 1


def test_study_csv_layout(tmp_path):
    mp = manufactured_1d(5)
    run = run_refinement_study(mp, RefinementSchedule(((0.2, (10,)), (0.1, (20,)))))
    path = tmp_path / "study.csv"
    run.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "h,k,sup_error,iterations,clamp_events,wall_seconds"
    rows = list(csv.reader(lines[1:3]))
    assert float(rows[0][2]) == run.records[0].sup_error  # 17 digits round-trip
    summary = dict(line[2:].split(",", 1) for line in lines[3:])
    assert set(summary) >= {"slope", "intercept", "r2"}
    assert float(summary["slope"]) == run.slope


def test_fixed_k_single_entry_has_no_ratios():
    table = fixed_k_blowup_test(manufactured_1d(5), 0.5, [0.1])
    assert len(table.records) == 1 and table.ratios == [] and table.max_ratio is None


def test_fixed_k_requires_decreasing_steps():
    with pytest.raises(InvalidArgumentError):
        fixed_k_blowup_test(manufactured_1d(5), 0.5, [0.1, 0.2])


def test_coarse_fixed_mesh_shows_no_inverse_h_growth():
    # on the 4-cell mesh the benchmark's value is reproduced to solver tolerance, so the floor is flat
    table = fixed_k_blowup_test(manufactured_1d(), 0.5, [0.05, 0.025, 0.0125, 0.00625], SolveConfig(tolerance=1e-10))
    assert table.records[0].k == pytest.approx(0.5)
    assert max(r.sup_error for r in table.records) < 1e-9
    assert all(r < 2.0 for r in table.ratios)


def test_fixed_k_csv_has_max_ratio(tmp_path):
    table = fixed_k_blowup_test(manufactured_1d(5), None, [0.2, 0.1], cells_per_dim=[10])
    table.write_csv(tmp_path / "fixed_k.csv")
    summary = dict(line[2:].split(",", 1) for line in (tmp_path / "fixed_k.csv").read_text().splitlines() if line[0] == "#")
    assert float(summary["max_ratio"]) == table.max_ratio
