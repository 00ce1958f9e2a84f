"""Refinement studies: errors against a reference solution and log-log rate fits."""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .errors import InvalidArgumentError, SlhjbError, StudyAborted
from .interp import interpolate_many
from .mesh import build_uniform_mesh, cells_for_diameter
from .problem import ManufacturedProblem, Problem
from .solver import SolveConfig, ValueFunction, check_step, solve_fixed_point

logger = logging.getLogger(__name__)

Reference = Callable[[np.ndarray], np.ndarray]
RELIABLE_R2 = 0.98


@dataclass(frozen=True)
class FineReference:
    h: float
    cells_per_dim: tuple[int, ...]


@dataclass(frozen=True)
class RefinementSchedule:
    entries: tuple[tuple[float, tuple[int, ...]], ...]
    reference: Union[str, FineReference] = "exact"

    def __post_init__(self) -> None:
        entries = tuple((float(h), tuple(int(c) for c in np.atleast_1d(cells))) for h, cells in self.entries)
        if not entries:
            raise InvalidArgumentError("refinement schedule is empty")
        if not (self.reference == "exact" or isinstance(self.reference, FineReference)):
            raise InvalidArgumentError("reference must be 'exact' or a FineReference")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def joint(cls, hs: Sequence[float], domain, reference: Union[str, FineReference] = "exact") -> "RefinementSchedule":
        """Pairs each h with the coarsest uniform mesh whose diameter k is at most h."""
        return cls(tuple((h, cells_for_diameter(domain, h)) for h in hs), reference)


@dataclass(frozen=True)
class RunRecord:
    h: float
    k: float
    sup_error: float
    iterations: int
    clamp_events: int
    wall_seconds: float
    l2_error: float = math.nan
    index: int = 0


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float

    @property
    def reliable(self) -> bool:
        return self.r2 >= RELIABLE_R2


def fit_rate(x: Sequence[float], errors: Sequence[float]) -> RateFit:
    """Least-squares line through ``(log x, log error)``."""
    lx = np.log(np.asarray(x, dtype=float))
    e = np.asarray(errors, dtype=float)
    if lx.size < 2:
        return RateFit(math.nan, math.nan, math.nan)
    if np.any(e <= 0):
        raise InvalidArgumentError("rate fits need strictly positive errors")
    ly = np.log(e)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)


@dataclass
class ConvergenceRun:
    records: list[RunRecord]
    fit: RateFit | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def slope(self) -> float:
        return self.fit.slope if self.fit else math.nan

    @property
    def intercept(self) -> float:
        return self.fit.intercept if self.fit else math.nan

    @property
    def r2(self) -> float:
        return self.fit.r2 if self.fit else math.nan

    def summary(self) -> dict[str, float | str]:
        out: dict[str, float | str] = {"slope": self.slope, "intercept": self.intercept, "r2": self.r2}
        if self.fit is not None and not self.fit.reliable:
            out["note"] = f"R^2 below {RELIABLE_R2}: rate fit unreliable"
        return out

    def write_csv(self, path: str | Path, extra_summary: dict | None = None) -> None:
        summary = {**self.summary(), **(extra_summary or {})}
        _write_records(path, self.records, summary)


CSV_COLUMNS = ("h", "k", "sup_error", "iterations", "clamp_events", "wall_seconds")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def _write_records(path: str | Path, records: Sequence[RunRecord], summary: dict) -> None:
    """Records as CSV rows, then the summary as ``# key,value`` comment lines."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        for key, value in summary.items():
            fh.write(f"# {key},{_fmt(value)}\n")


def error_against_reference(v: ValueFunction, reference: Reference) -> float:
    """Sup over mesh vertices of ``|v - reference|``."""
    ref = np.asarray(reference(v.mesh.vertices), dtype=float).reshape(-1)
    return float(np.max(np.abs(v.values - ref)))


def vertex_l2_error(v: ValueFunction, reference: Reference) -> float:
    ref = np.asarray(reference(v.mesh.vertices), dtype=float).reshape(-1)
    return float(np.sqrt(np.mean((v.values - ref) ** 2)))


def _base(problem: Problem | ManufacturedProblem) -> Problem:
    return problem.problem if isinstance(problem, ManufacturedProblem) else problem


def make_reference(
    problem: Problem | ManufacturedProblem,
    reference: Union[str, FineReference],
    config: SolveConfig,
    workers: int = 1,
) -> Reference:
    if reference == "exact":
        if not isinstance(problem, ManufacturedProblem):
            raise InvalidArgumentError("an exact reference needs a manufactured problem")
        return problem.exact
    base = _base(problem)
    mesh = build_uniform_mesh(base.domain, reference.cells_per_dim)
    fine = solve_fixed_point(base, mesh, reference.h, config, workers)

    def ref(points: np.ndarray) -> np.ndarray:
        return interpolate_many(fine.field, points)[:, 0]

    return ref


def _solve_entry(base: Problem, h: float, cells, config: SolveConfig, reference: Reference, workers: int, index: int):
    mesh = build_uniform_mesh(base.domain, cells)
    t0 = time.perf_counter()
    v = solve_fixed_point(base, mesh, h, config, workers)
    wall = time.perf_counter() - t0
    rec = RunRecord(
        h=h,
        k=mesh.k,
        sup_error=error_against_reference(v, reference),
        iterations=v.iterations,
        clamp_events=v.clamp_events,
        wall_seconds=wall,
        l2_error=vertex_l2_error(v, reference),
        index=index,
    )
    logger.info("h=%.6g k=%.6g sup error %.6e (%d sweeps)", h, mesh.k, rec.sup_error, rec.iterations)
    return rec


def run_refinement_study(
    problem: Problem | ManufacturedProblem,
    schedule: RefinementSchedule,
    config: SolveConfig | None = None,
    workers: int = 1,
) -> ConvergenceRun:
    """One solve per schedule entry, sup errors against the reference, fit on log(h + k)."""
    config = config or SolveConfig()
    base = _base(problem)
    for h, _ in schedule.entries:
        check_step(h, base.lam)
    notes: list[str] = []
    if isinstance(schedule.reference, FineReference):
        fine = schedule.reference
        check_step(fine.h, base.lam)
        k_ref = build_uniform_mesh(base.domain, fine.cells_per_dim).k
        coarsest = min(h + build_uniform_mesh(base.domain, c).k for h, c in schedule.entries)
        if fine.h + k_ref > 0.25 * coarsest:
            msg = (
                f"fine reference h+k = {fine.h + k_ref:.4g} exceeds a quarter of the smallest "
                f"schedule h+k = {coarsest:.4g}; measured rates may be biased"
            )
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
    reference = make_reference(problem, schedule.reference, config, workers)

    records: list[RunRecord] = []
    for i, (h, cells) in enumerate(schedule.entries):
        try:
            records.append(_solve_entry(base, h, cells, config, reference, workers, i))
        except SlhjbError as exc:
            partial = ConvergenceRun(sorted(records, key=lambda r: -(r.h + r.k)), None, notes)
            raise StudyAborted(f"solve for schedule entry {i} (h={h}, cells={list(cells)}) failed: {exc}", partial) from exc
    records.sort(key=lambda r: (-(r.h + r.k), r.index))
    fit = fit_rate([r.h + r.k for r in records], [r.sup_error for r in records]) if len(records) > 1 else None
    if fit is not None and not fit.reliable:
        notes.append(f"R^2 = {fit.r2:.4f} below {RELIABLE_R2}: rate fit unreliable")
    return ConvergenceRun(records, fit, notes)


@dataclass
class FixedKTable:
    records: list[RunRecord]
    ratios: list[float]
    fit: RateFit | None

    @property
    def max_ratio(self) -> float | None:
        return max(self.ratios) if self.ratios else None

    def write_csv(self, path: str | Path) -> None:
        summary: dict = {}
        if self.max_ratio is not None:
            summary["max_ratio"] = self.max_ratio
        if self.fit is not None:
            summary.update({"slope_vs_h": self.fit.slope, "intercept": self.fit.intercept, "r2": self.fit.r2})
        _write_records(path, self.records, summary)


def fixed_k_blowup_test(
    problem: Problem | ManufacturedProblem,
    k_fixed: float | None,
    h_list: Sequence[float],
    config: SolveConfig | None = None,
    reference: Union[str, FineReference] = "exact",
    cells_per_dim: Sequence[int] | None = None,
    workers: int = 1,
) -> FixedKTable:
    """Errors on one mesh for decreasing h, with successive ratios ``e(h_{i+1}) / e(h_i)``.

    Under an O(k/h) error law the ratios would approach 2 per halving of h.
    The mesh is the coarsest uniform one with diameter <= ``k_fixed`` unless
    ``cells_per_dim`` is given.
    """
    config = config or SolveConfig()
    base = _base(problem)
    hs = [float(h) for h in h_list]
    if not hs:
        raise InvalidArgumentError("h_list is empty")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise InvalidArgumentError("h_list must be strictly decreasing")
    for h in hs:
        check_step(h, base.lam)
    if cells_per_dim is None:
        if k_fixed is None:
            raise InvalidArgumentError("give k_fixed or cells_per_dim")
        cells = cells_for_diameter(base.domain, k_fixed)
    else:
        cells = tuple(int(c) for c in cells_per_dim)
    ref = make_reference(problem, reference, config, workers)
    records = []
    for i, h in enumerate(hs):
        try:
            records.append(_solve_entry(base, h, cells, config, ref, workers, i))
        except SlhjbError as exc:
            partial = FixedKTable(records, _ratios(records), None)
            raise StudyAborted(f"solve for h={h} failed: {exc}", partial) from exc
    fit = None
    if len(records) > 1 and all(r.sup_error > 0 for r in records):
        fit = fit_rate([r.h for r in records], [r.sup_error for r in records])
    return FixedKTable(records, _ratios(records), fit)


def _ratios(records: Sequence[RunRecord]) -> list[float]:
    out = []
    for a, b in zip(records, records[1:]):
        out.append(b.sup_error / a.sup_error if a.sup_error > 0 else math.inf)
    return out
