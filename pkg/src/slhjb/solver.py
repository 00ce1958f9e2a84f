"""Fully discrete semi-Lagrangian Bellman operator and its fixed point."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError, InvalidStepError, NonFiniteValueError, OutOfDomainError
from .interp import NodalField, combine, interpolate_many
from .mesh import SimplicialMesh
from .problem import Problem

logger = logging.getLogger(__name__)

OutOfDomainPolicy = Literal["clamp", "reject"]


def check_step(h: float, lam: float) -> None:
    if not (isinstance(h, (int, float)) and math.isfinite(h) and 0.0 < h < 1.0 / lam):
        raise InvalidStepError(f"h must lie in (0, 1/lambda) = (0, {1.0 / lam:.17g}); got h={h}")


class BellmanOperator:
    """The map ``v -> min_u (1 - lam h) I_k v(y_i + h f(y_i, u)) + h g(y_i, u)``.

    Foot points depend only on (problem, mesh, h), so their simplex vertices
    and barycentric weights are computed once and reused by every sweep.
    """

    def __init__(
        self,
        problem: Problem,
        mesh: SimplicialMesh,
        h: float,
        out_of_domain: OutOfDomainPolicy = "clamp",
    ) -> None:
        check_step(h, problem.lam)
        if mesh.domain != problem.domain:
            raise InvalidArgumentError("mesh and problem are defined on different domains")
        if out_of_domain not in ("clamp", "reject"):
            raise InvalidArgumentError(f"out_of_domain must be 'clamp' or 'reject', got {out_of_domain!r}")
        self.problem = problem
        self.mesh = mesh
        self.h = float(h)
        self.delta = 1.0 - problem.lam * self.h
        self.out_of_domain = out_of_domain

        Y = mesh.vertices
        U = problem.controls.samples
        nv, nc, n = Y.shape[0], U.shape[0], mesh.n
        Yr = np.repeat(Y, nc, axis=0)
        Ur = np.tile(U, (nv, 1))
        F = problem.f(Yr, Ur)
        G = problem.g(Yr, Ur)
        finite = np.all(np.isfinite(F), axis=1) & np.isfinite(G)
        if not np.all(finite):
            bad = int(np.flatnonzero(~finite)[0])
            raise NonFiniteValueError(
                f"problem data not finite at vertex {bad // nc} {Y[bad // nc].tolist()}, control {U[bad % nc].tolist()}"
            )
        feet = Yr + self.h * F
        outside = ~mesh.domain.contains(feet)
        self.clamp_events = int(np.count_nonzero(outside))
        if self.clamp_events:
            if out_of_domain == "reject":
                bad = int(np.flatnonzero(outside)[0])
                raise OutOfDomainError(
                    f"foot point {feet[bad].tolist()} of vertex {bad // nc} {Y[bad // nc].tolist()} "
                    f"under control {bad % nc} {U[bad % nc].tolist()} leaves the domain"
                )
            feet = np.clip(feet, mesh.domain.lower, mesh.domain.upper)
        _, vidx, weights = mesh.locate_many(feet)
        self.vidx = vidx.reshape(nv, nc, n + 1)
        self.weights = weights.reshape(nv, nc, n + 1)
        self.stage = (self.h * G).reshape(nv, nc)

    @property
    def n_vertices(self) -> int:
        return self.stage.shape[0]

    def candidates(self, values: np.ndarray, rows: slice = slice(None)) -> np.ndarray:
        """Per-(vertex, control) values of the bracket being minimized, ``(rows, n_controls)``."""
        return self.delta * combine(values, self.vidx[rows], self.weights[rows]) + self.stage[rows]

    def apply(self, values: np.ndarray, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """One sweep. Returns new nodal values and the argmin control index per vertex.

        Vertex rows are independent, so splitting them over threads does not
        change any result bit.
        """
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_vertices,):
            raise InvalidArgumentError(f"expected {self.n_vertices} nodal values, got shape {values.shape}")
        out = np.empty(self.n_vertices)
        arg = np.empty(self.n_vertices, dtype=np.int64)

        def run(rows: slice) -> None:
            cand = self.candidates(values, rows)
            best = np.argmin(cand, axis=1)  # first minimum: lowest control index wins ties
            arg[rows] = best
            out[rows] = np.take_along_axis(cand, best[:, None], axis=1)[:, 0]

        chunks = _chunks(self.n_vertices, workers)
        if len(chunks) == 1:
            run(chunks[0])
        else:
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                list(pool.map(run, chunks))
        return out, arg


def _chunks(size: int, workers: int) -> list[slice]:
    workers = max(1, min(int(workers), size))
    bounds = np.linspace(0, size, workers + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def bellman_apply(
    v: NodalField,
    problem: Problem,
    h: float,
    out_of_domain: OutOfDomainPolicy = "clamp",
    workers: int = 1,
) -> tuple[NodalField, np.ndarray]:
    op = BellmanOperator(problem, v.mesh, h, out_of_domain)
    values, arg = op.apply(v.scalar, workers)
    return NodalField(v.mesh, values), arg


@dataclass(frozen=True)
class SolveConfig:
    tolerance: float = 1e-10
    max_iterations: int = 100_000
    out_of_domain: OutOfDomainPolicy = "clamp"
    initial_guess: Union[None, float, np.ndarray, NodalField] = None

    def __post_init__(self) -> None:
        if not (self.tolerance > 0 and math.isfinite(self.tolerance)):
            raise InvalidArgumentError(f"tolerance must be positive, got {self.tolerance}")
        if int(self.max_iterations) < 1:
            raise InvalidArgumentError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.out_of_domain not in ("clamp", "reject"):
            raise InvalidArgumentError(f"out_of_domain must be 'clamp' or 'reject', got {self.out_of_domain!r}")


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Solved nodal value function for one time step ``h``."""

    field: NodalField
    h: float
    lam: float
    residual: float
    iterations: int
    clamp_events: int = 0
    policy: np.ndarray | None = None
    tolerance: float | None = None

    def __post_init__(self) -> None:
        if not (0.0 < self.h < 1.0 / self.lam):
            raise InvalidStepError("h must lie in (0, 1/lambda)")
        if self.residual < 0:
            raise InvalidArgumentError("residual must be nonnegative")

    @property
    def mesh(self) -> SimplicialMesh:
        return self.field.mesh

    @property
    def values(self) -> np.ndarray:
        return self.field.scalar

    @property
    def delta(self) -> float:
        return 1.0 - self.lam * self.h

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1 and pts.size == self.mesh.n
        out = interpolate_many(self.field, pts[None, :] if single else pts)[:, 0]
        return out[0] if single else out


def _initial_values(guess, mesh: SimplicialMesh) -> np.ndarray:
    if guess is None:
        return np.zeros(mesh.n_vertices)
    if isinstance(guess, NodalField):
        if guess.mesh is not mesh and guess.mesh.n_vertices != mesh.n_vertices:
            raise InvalidArgumentError("initial guess lives on a different mesh")
        return guess.scalar.copy()
    arr = np.asarray(guess, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.n_vertices, float(arr))
    if arr.shape != (mesh.n_vertices,):
        raise InvalidArgumentError(f"initial guess needs {mesh.n_vertices} values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("initial guess must be finite")
    return arr.copy()


def solve_fixed_point(
    problem: Problem,
    mesh: SimplicialMesh,
    h: float,
    config: SolveConfig | None = None,
    workers: int = 1,
    operator: BellmanOperator | None = None,
) -> ValueFunction:
    """Value iteration to the unique nodal fixed point.

    Stops once the sup-norm update is at most ``tol (1 - delta) / delta``,
    which bounds the distance to the exact fixed point by ``tol``.
    """
    config = config or SolveConfig()
    op = operator or BellmanOperator(problem, mesh, h, config.out_of_domain)
    delta = op.delta
    threshold = config.tolerance * (1.0 - delta) / delta
    v = _initial_values(config.initial_guess, mesh)
    residual = math.inf
    arg = None
    for it in range(1, int(config.max_iterations) + 1):
        new, arg = op.apply(v, workers)
        residual = float(np.max(np.abs(new - v)))
        v = new
        if residual <= threshold:
            logger.debug("converged after %d sweeps, residual %.3e", it, residual)
            return ValueFunction(
                field=NodalField(mesh, v),
                h=float(h),
                lam=problem.lam,
                residual=residual,
                iterations=it,
                clamp_events=op.clamp_events,
                policy=arg,
                tolerance=config.tolerance,
            )
    raise ConvergenceError("value iteration did not converge", residual, int(config.max_iterations))


def lipschitz_estimate(v: ValueFunction | NodalField) -> float:
    """Largest slope ``|dv| / |dy|`` over mesh edges."""
    field = v.field if isinstance(v, ValueFunction) else v
    mesh = field.mesh
    edges = mesh.edges()
    dv = np.abs(field.values[edges[:, 0], 0] - field.values[edges[:, 1], 0])
    dy = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    return float((dv / dy).max()) if len(edges) else 0.0
