"""Command-line driver: ``slhjb {solve,study,oracle,rollout,validate} --config run.json``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .cost import brute_force_value, nodal_cost_bound, tail_bound
from .errors import (
    ConvergenceError,
    EnumerationLimitError,
    InvalidArgumentError,
    NonFiniteValueError,
    OutOfDomainError,
    SlhjbError,
    StudyAborted,
)
from .mesh import build_uniform_mesh
from .policy import synthesize_trajectory
from .problem import ManufacturedProblem, Problem, validate_problem
from .solver import SolveConfig, solve_fixed_point
from .study import FineReference, RefinementSchedule, fixed_k_blowup_test, run_refinement_study

logger = logging.getLogger("slhjb")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
COMMANDS = ("solve", "study", "oracle", "rollout", "validate")


def _g17(x) -> str:
    return format(float(x), ".17g")


def _split(built) -> tuple[Problem, ManufacturedProblem | None]:
    if isinstance(built, ManufacturedProblem):
        return built.problem, built
    return built, None


def _solve_config(cfg: RunConfig) -> SolveConfig:
    s = cfg.solver
    return SolveConfig(tolerance=s["tolerance"], max_iterations=s["max_iterations"], out_of_domain=s["out_of_domain"])


def _write_summary(out: Path, name: str, summary: dict) -> None:
    with open(out / name, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    for key, value in summary.items():
        print(f"{key}: {_g17(value) if isinstance(value, float) else value}")


def _solve(cfg: RunConfig, workers: int):
    problem, manufactured = _split(cfg.build_problem())
    mesh = build_uniform_mesh(problem.domain, cfg.cells_per_dim)
    v = solve_fixed_point(problem, mesh, cfg.h, _solve_config(cfg), workers)
    return problem, manufactured, mesh, v


def cmd_solve(cfg: RunConfig, out: Path, workers: int) -> int:
    problem, manufactured, mesh, v = _solve(cfg, workers)
    with open(out / "value.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{i + 1}" for i in range(problem.n)] + ["value"])
        for y, val in zip(mesh.vertices, v.values):
            w.writerow([_g17(c) for c in y] + [_g17(val)])
    summary = {
        "iterations": v.iterations,
        "residual": v.residual,
        "clamp_events": v.clamp_events,
        "h": v.h,
        "k": mesh.k,
        "vertices": mesh.n_vertices,
    }
    if manufactured is not None:
        summary["sup_error_vs_exact"] = float(np.max(np.abs(v.values - manufactured.exact(mesh.vertices))))
    _write_summary(out, "summary.json", summary)
    return EXIT_OK


def cmd_study(cfg: RunConfig, out: Path, workers: int) -> int:
    built = cfg.build_problem()
    problem, _ = _split(built)
    st = cfg.study
    ref = st.reference if st.reference == "exact" else FineReference(st.reference["h"], tuple(st.reference["cells"]))
    solve_cfg = _solve_config(cfg)
    # constants needed to check the rate hypotheses by hand; lambda > L_f is not enforced
    summary: dict = {"n": problem.n, "lambda": problem.lam}
    if problem.bounds.L_f is not None:
        summary["L_f"] = problem.bounds.L_f
    if st.schedule:
        schedule = RefinementSchedule(tuple((h, tuple(c)) for h, c in st.schedule), ref)
        run = run_refinement_study(built, schedule, solve_cfg, workers)
        run.write_csv(out / "study.csv")
        for r in run.records:
            print(f"h={_g17(r.h)} k={_g17(r.k)} sup_error={_g17(r.sup_error)} iterations={r.iterations}")
        summary.update({"slope": run.slope, "intercept": run.intercept, "r2": run.r2})
        for note in run.warnings:
            print(f"warning: {note}", file=sys.stderr)
    if st.fixed_k is not None:
        fk = st.fixed_k
        table = fixed_k_blowup_test(
            built, fk.get("k"), fk["h_list"], solve_cfg, ref, cells_per_dim=fk.get("cells"), workers=workers
        )
        table.write_csv(out / "fixed_k.csv")
        for r, ratio in zip(table.records, [None] + table.ratios):
            tail = "" if ratio is None else f" ratio={_g17(ratio)}"
            print(f"h={_g17(r.h)} k={_g17(r.k)} sup_error={_g17(r.sup_error)}{tail}")
        if table.max_ratio is not None:
            summary["max_fixed_k_ratio"] = table.max_ratio
    _write_summary(out, "study_summary.json", summary)
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, out: Path, workers: int) -> int:
    problem, _ = _split(cfg.build_problem())
    mesh = build_uniform_mesh(problem.domain, cfg.cells_per_dim)
    o = cfg.oracle
    N, budget_tail = o["N"], o["tail_tol"]
    count = len(problem.controls) ** N
    if count > 10**7:
        raise EnumerationLimitError(count, 10**7)
    M_g = problem.bounds.M_g if problem.bounds.M_g is not None else nodal_cost_bound(problem, mesh)
    tail = tail_bound(M_g, problem.lam, cfg.h, N)
    if tail > budget_tail:
        raise ConfigError("oracle.N", f"N={N} leaves a tail bound {tail:.3e} above tail_tol={budget_tail:.3e}; increase N")
    solve_cfg = _solve_config(cfg)
    v = solve_fixed_point(problem, mesh, cfg.h, solve_cfg, workers)
    bf = brute_force_value(problem, mesh, cfg.h, o["y0"], N, limit=10**7)
    value = float(v(np.asarray(o["y0"])))
    gap = abs(value - bf.value)
    budget = bf.tail_bound + solve_cfg.tolerance
    summary = {
        "value": value,
        "brute_force_value": bf.value,
        "gap": gap,
        "budget": budget,
        "tail_bound": bf.tail_bound,
        "sequences_checked": bf.sequences_checked,
        "within_budget": bool(gap <= budget),
    }
    _write_summary(out, "oracle.json", summary)
    return EXIT_OK if gap <= budget else EXIT_NUMERIC


def cmd_rollout(cfg: RunConfig, out: Path, workers: int) -> int:
    problem, _, mesh, v = _solve(cfg, workers)
    r = cfg.rollout
    run = synthesize_trajectory(v, problem, mesh, r["y0"], r["steps"])
    n, m = problem.n, problem.m
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"y{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)] + ["stage_cost"])
        states = run.trajectory.states
        for i in range(len(states)):
            if i < r["steps"]:
                ctrl = [_g17(c) for c in run.controls[i]]
                stage = _g17(run.trajectory.stage_costs[i])
            else:
                ctrl, stage = [""] * m, ""
            w.writerow([i] + [_g17(c) for c in states[i]] + ctrl + [stage])
    summary = {
        "realized_cost": run.realized_cost,
        "tail_bound": run.tail_bound,
        "value_at_y0": float(v(np.asarray(r["y0"]))),
        "clamp_events": run.trajectory.clamp_events,
    }
    _write_summary(out, "rollout.json", summary)
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path, workers: int) -> int:
    problem, _ = _split(cfg.build_problem())
    mesh = build_uniform_mesh(problem.domain, cfg.cells_per_dim)
    report = validate_problem(problem, cfg.h, mesh, seed=cfg.seed)
    text = report.format()
    print(text)
    (out / "validate.txt").write_text(text + "\n")
    return EXIT_OK


HANDLERS = {"solve": cmd_solve, "study": cmd_study, "oracle": cmd_oracle, "rollout": cmd_rollout, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slhjb", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default="slhjb-out", help="output directory (created if missing)")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker threads for the solver")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed for property sampling; overrides the config")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers", f"must be >= 1, got {args.workers}")
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "effective_config.json", "w") as fh:
            json.dump(cfg.effective(), fh, indent=2)
            fh.write("\n")
    except (ConfigError, InvalidArgumentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return HANDLERS[args.command](cfg, out, args.workers)
    except (ConfigError, InvalidArgumentError, EnumerationLimitError, OutOfDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StudyAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConvergenceError, NonFiniteValueError, SlhjbError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
