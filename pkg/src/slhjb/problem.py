"""Control problem definitions, manufactured solutions and sanity checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .errors import InvalidArgumentError, NonFiniteValueError
from .mesh import BoxDomain, SimplicialMesh

Dynamics = Callable[[np.ndarray, np.ndarray], np.ndarray]
RunningCost = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ControlSet:
    samples: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    counts: tuple[int, ...]

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]


def sample_control_set(box_bounds, counts) -> ControlSet:
    """Tensor grid over the control box, endpoints included.

    ``box_bounds`` is ``(lower, upper)``; a count of 1 selects the midpoint.
    """
    lower, upper = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box_bounds)
    cnt = tuple(int(c) for c in np.atleast_1d(counts))
    if lower.shape != upper.shape or lower.ndim != 1 or lower.size == 0:
        raise InvalidArgumentError("control bounds must be nonempty vectors of equal length")
    if len(cnt) != lower.size:
        raise InvalidArgumentError(f"need {lower.size} control counts, got {len(cnt)}")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise InvalidArgumentError("control bounds must be finite")
    if np.any(lower > upper):
        raise InvalidArgumentError("control bounds require lower <= upper")
    if any(c < 1 for c in cnt):
        raise InvalidArgumentError("control counts must be >= 1")
    axes = [np.linspace(lo, hi, c) if c > 1 else np.array([0.5 * (lo + hi)]) for lo, hi, c in zip(lower, upper, cnt)]
    grid = np.meshgrid(*axes, indexing="ij")
    samples = np.stack([g.ravel() for g in grid], axis=1)
    samples.flags.writeable = False
    return ControlSet(samples=samples, lower=lower, upper=upper, counts=cnt)


def control_set_from_samples(samples) -> ControlSet:
    """Wrap an explicit list of controls; the declared box is their bounding box."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidArgumentError("control samples must be a nonempty (count, m) array")
    arr = arr.copy()
    arr.flags.writeable = False
    return ControlSet(samples=arr, lower=arr.min(0), upper=arr.max(0), counts=(arr.shape[0],))


@dataclass(frozen=True)
class ProblemBounds:
    """Optional Lipschitz and sup-norm constants of the problem data."""

    L_f: float | None = None
    L_g: float | None = None
    M_f: float | None = None
    M_g: float | None = None
    L_u: float | None = None


@dataclass(frozen=True, eq=False)
class Problem:
    n: int
    m: int
    dynamics: Dynamics
    running_cost: RunningCost
    lam: float
    domain: BoxDomain
    controls: ControlSet
    bounds: ProblemBounds = field(default_factory=ProblemBounds)
    name: str = "custom"
    dynamics_exprs: tuple[ex.Expression, ...] | None = None
    cost_expr: ex.Expression | None = None

    def __post_init__(self) -> None:
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise InvalidArgumentError(f"lambda must be a positive finite number, got {self.lam}")
        if self.domain.n != self.n:
            raise InvalidArgumentError(f"domain dimension {self.domain.n} does not match n={self.n}")
        if self.controls.m != self.m:
            raise InvalidArgumentError(f"control dimension {self.controls.m} does not match m={self.m}")

    def f(self, Y: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Dynamics on row-stacked states/controls; returns ``(P, n)``."""
        Y = _rows(Y, self.n)
        U = _match(_rows(U, self.m), Y.shape[0])
        return np.asarray(self.dynamics(Y, U), dtype=float).reshape(Y.shape[0], self.n)

    def g(self, Y: np.ndarray, U: np.ndarray) -> np.ndarray:
        Y = _rows(Y, self.n)
        U = _match(_rows(U, self.m), Y.shape[0])
        return np.asarray(self.running_cost(Y, U), dtype=float).reshape(Y.shape[0])

    def with_bounds(self, **kwargs) -> "Problem":
        return replace(self, bounds=replace(self.bounds, **kwargs))

    def with_controls(self, controls: ControlSet) -> "Problem":
        return replace(self, controls=controls)


def _rows(a, width: int) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, width) if arr.size == width else arr.reshape(-1, width)
    return arr


def _match(U: np.ndarray, count: int) -> np.ndarray:
    if U.shape[0] == count:
        return U
    if U.shape[0] == 1:
        return np.repeat(U, count, axis=0)
    raise InvalidArgumentError(f"got {U.shape[0]} controls for {count} states")


def problem_from_expressions(
    dynamics: Sequence[str | ex.Expression],
    running_cost: str | ex.Expression,
    lam: float,
    domain: BoxDomain,
    controls: ControlSet,
    bounds: ProblemBounds | None = None,
    name: str = "custom",
) -> Problem:
    n, m = domain.n, controls.m
    f_exprs = tuple(ex.parse_expression(s) if isinstance(s, str) else s for s in dynamics)
    if len(f_exprs) != n:
        raise InvalidArgumentError(f"dynamics needs {n} component(s), got {len(f_exprs)}")
    g_expr = ex.parse_expression(running_cost) if isinstance(running_cost, str) else running_cost
    f_funcs = [ex.compile_expression(e, n, m) for e in f_exprs]
    g_func = ex.compile_expression(g_expr, n, m)

    def dyn(Y: np.ndarray, U: np.ndarray) -> np.ndarray:
        out = np.empty((Y.shape[0], n))
        for j, fj in enumerate(f_funcs):
            out[:, j] = fj(Y, U)
        return out

    return Problem(
        n=n,
        m=m,
        dynamics=dyn,
        running_cost=g_func,
        lam=float(lam),
        domain=domain,
        controls=controls,
        bounds=bounds or ProblemBounds(),
        name=name,
        dynamics_exprs=f_exprs,
        cost_expr=g_expr,
    )


# --- manufactured solutions -------------------------------------------------

@dataclass(frozen=True, eq=False)
class ManufacturedProblem:
    """A problem whose running cost makes ``vstar`` the exact value function.

    With ``g = lam*v* - f . grad v*`` the supremand of the HJB equation equals
    ``-lam*v*`` for every control, so ``v*`` solves it classically.
    """

    problem: Problem
    vstar: ex.Expression
    grad_vstar: tuple[ex.Expression, ...]

    def exact(self, Y: np.ndarray) -> np.ndarray:
        Y = _rows(Y, self.problem.n)
        fn = ex.compile_expression(self.vstar, self.problem.n, 0)
        return np.asarray(fn(Y, np.zeros((Y.shape[0], 0))), dtype=float)

    def hjb_residual(self, Y: np.ndarray, U: np.ndarray) -> np.ndarray:
        """``lam*v* + (-f . grad v* - g)`` at each (y, u) row; zero up to rounding."""
        p = self.problem
        Y, U = _rows(Y, p.n), _match(_rows(U, p.m), _rows(Y, p.n).shape[0])
        grads = np.stack([ex.compile_expression(gj, p.n, 0)(Y, np.zeros((Y.shape[0], 0))) for gj in self.grad_vstar], 1)
        return p.lam * self.exact(Y) + (-(p.f(Y, U) * grads).sum(axis=1) - p.g(Y, U))


def make_manufactured(
    vstar: str | ex.Expression,
    dynamics: Sequence[str | ex.Expression],
    lam: float,
    domain: BoxDomain,
    controls: ControlSet,
    bounds: ProblemBounds | None = None,
    name: str = "manufactured",
) -> ManufacturedProblem:
    v_expr = ex.parse_expression(vstar) if isinstance(vstar, str) else vstar
    if any(name_.startswith("u") for name_ in ex.variables(v_expr)):
        raise InvalidArgumentError("the exact value function may depend on state variables only")
    f_exprs = [ex.parse_expression(s) if isinstance(s, str) else s for s in dynamics]
    n = domain.n
    grad = ex.gradient(v_expr, n)
    g_expr: ex.Expression = ex._mul(ex.const(float(lam)), v_expr)
    for fj, dj in zip(f_exprs, grad):
        g_expr = ex._sub(g_expr, ex._mul(fj, dj))
    problem = problem_from_expressions(f_exprs, g_expr, lam, domain, controls, bounds, name)
    return ManufacturedProblem(problem=problem, vstar=v_expr, grad_vstar=tuple(grad))


# --- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    h: float
    max_f_inf: float
    max_abs_g: float
    invariance_violations: int
    worst_violation: float
    worst_vertex: int | None
    worst_control: int | None
    lipschitz_f_state: float
    lipschitz_f_control: float
    lipschitz_g_state: float
    lipschitz_g_control: float
    pairs_checked: int

    @property
    def L_f(self) -> float:
        return max(self.lipschitz_f_state, self.lipschitz_f_control)

    @property
    def L_g(self) -> float:
        return max(self.lipschitz_g_state, self.lipschitz_g_control)

    def as_bounds(self) -> ProblemBounds:
        return ProblemBounds(L_f=self.L_f, L_g=self.L_g, M_f=self.max_f_inf, M_g=self.max_abs_g)

    def format(self) -> str:
        lines = [
            f"h                        {self.h:.17g}",
            f"max |f|_inf (M_f)        {self.max_f_inf:.17g}",
            f"max |g| (M_g)            {self.max_abs_g:.17g}",
            f"invariance violations    {self.invariance_violations}",
            f"worst violation          {self.worst_violation:.17g}",
            f"Lipschitz f in y (est.)  {self.lipschitz_f_state:.17g}",
            f"Lipschitz f in u (est.)  {self.lipschitz_f_control:.17g}",
            f"Lipschitz g in y (est.)  {self.lipschitz_g_state:.17g}",
            f"Lipschitz g in u (est.)  {self.lipschitz_g_control:.17g}",
        ]
        if self.worst_vertex is not None:
            lines.append(f"worst (vertex, control)  ({self.worst_vertex}, {self.worst_control})")
        return "\n".join(lines)


def validate_problem(
    problem: Problem,
    h: float,
    mesh: SimplicialMesh,
    pairs: int = 2000,
    seed: int = 0,
) -> ValidationReport:
    """Report bounds and invariance of ``y + h f(y, u)`` over all (vertex, control) pairs.

    Lipschitz constants are estimated from ``pairs`` random point pairs (a
    lower estimate of the true constants).
    """
    Y = mesh.vertices
    U = problem.controls.samples
    nv, nc = Y.shape[0], U.shape[0]
    Yr = np.repeat(Y, nc, axis=0)
    Ur = np.tile(U, (nv, 1))
    F = problem.f(Yr, Ur)
    G = problem.g(Yr, Ur)
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(G))):
        bad = int(np.flatnonzero(~(np.all(np.isfinite(F), 1) & np.isfinite(G)))[0])
        raise NonFiniteValueError(
            f"problem data not finite at vertex {bad // nc} {Y[bad // nc].tolist()}, control {U[bad % nc].tolist()}"
        )
    feet = Yr + h * F
    dom = problem.domain
    excess = np.maximum(np.maximum(dom.lower - feet, feet - dom.upper), 0.0).max(axis=1)
    violations = int(np.count_nonzero(excess > 0))
    worst = int(np.argmax(excess)) if violations else None

    rng = np.random.default_rng(seed)
    lo_u, hi_u = problem.controls.lower, problem.controls.upper
    ya = rng.uniform(dom.lower, dom.upper, (pairs, problem.n))
    yb = rng.uniform(dom.lower, dom.upper, (pairs, problem.n))
    ua = rng.uniform(lo_u, hi_u, (pairs, problem.m))
    ub = rng.uniform(lo_u, hi_u, (pairs, problem.m))

    def ratio(num: np.ndarray, den: np.ndarray) -> float:
        ok = den > 1e-12
        return float((num[ok] / den[ok]).max()) if np.any(ok) else 0.0

    dy = np.linalg.norm(ya - yb, axis=1)
    du = np.linalg.norm(ua - ub, axis=1)
    lf_y = ratio(np.linalg.norm(problem.f(ya, ua) - problem.f(yb, ua), axis=1), dy)
    lf_u = ratio(np.linalg.norm(problem.f(ya, ua) - problem.f(ya, ub), axis=1), du)
    lg_y = ratio(np.abs(problem.g(ya, ua) - problem.g(yb, ua)), dy)
    lg_u = ratio(np.abs(problem.g(ya, ua) - problem.g(ya, ub)), du)

    return ValidationReport(
        h=float(h),
        max_f_inf=float(np.abs(F).max()),
        max_abs_g=float(np.abs(G).max()),
        invariance_violations=violations,
        worst_violation=float(excess.max()) if violations else 0.0,
        worst_vertex=None if worst is None else worst // nc,
        worst_control=None if worst is None else worst % nc,
        lipschitz_f_state=lf_y,
        lipschitz_f_control=lf_u,
        lipschitz_g_state=lg_y,
        lipschitz_g_control=lg_u,
        pairs_checked=pairs,
    )


# --- benchmark registry -----------------------------------------------------

# max over [-1,1]^2 of |y^2 - 2 u y (1 - y^2)|, attained at u = sign(-y), y = (1 + sqrt 13)/6
_Y_STAR = (1.0 + math.sqrt(13.0)) / 6.0
_M_G_1D = _Y_STAR**2 + 2.0 * _Y_STAR * (1.0 - _Y_STAR**2)


def _manufactured_1d(lam: float, domain: BoxDomain, controls: ControlSet) -> ManufacturedProblem:
    bounds = ProblemBounds(L_f=2.0, L_g=6.0, M_f=1.0, M_g=_M_G_1D)
    return make_manufactured("y1^2", ["u1*(1 - y1^2)"], lam, domain, controls, bounds, "manufactured-1d")


def _manufactured_2d(lam: float, domain: BoxDomain, controls: ControlSet) -> ManufacturedProblem:
    bounds = ProblemBounds(L_f=2.0, L_g=6.0 * math.sqrt(2.0), M_f=1.0, M_g=2.0 * _M_G_1D)
    return make_manufactured(
        "y1^2 + y2^2",
        ["u1*(1 - y1^2)", "u2*(1 - y2^2)"],
        lam,
        domain,
        controls,
        bounds,
        "manufactured-2d",
    )


REGISTRY: dict[str, tuple[int, int, Callable[[float, BoxDomain, ControlSet], ManufacturedProblem]]] = {
    "manufactured-1d": (1, 1, _manufactured_1d),
    "manufactured-2d": (2, 2, _manufactured_2d),
}
"""name -> (state dim, control dim, builder). The bounds are exact on [-1,1]^n x [-1,1]^m."""


def benchmark(name: str, lam: float, domain: BoxDomain, controls: ControlSet) -> ManufacturedProblem:
    try:
        n, m, builder = REGISTRY[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
    if domain.n != n or controls.m != m:
        raise InvalidArgumentError(f"problem {name!r} needs a {n}-D domain and {m}-D controls")
    return builder(lam, domain, controls)


def manufactured_1d(n_controls: int = 21, lam: float = 1.0) -> ManufacturedProblem:
    """The 1-D benchmark on [-1, 1] with v* = y^2 and f = u (1 - y^2)."""
    return _manufactured_1d(lam, BoxDomain([-1.0], [1.0]), sample_control_set(([-1.0], [1.0]), [n_controls]))


def manufactured_2d(n_controls: int = 11, lam: float = 1.0) -> ManufacturedProblem:
    dom = BoxDomain([-1.0, -1.0], [1.0, 1.0])
    return _manufactured_2d(lam, dom, sample_control_set(([-1.0, -1.0], [1.0, 1.0]), [n_controls, n_controls]))
