"""
Discounted cost functionals along open-loop control sequences.

``discrete_cost`` evaluates ``h * sum_n delta^n I_k g(y_n, u_n)`` along the
Euler recursion ``y_{n+1} = y_n + h I_k f(y_n, u_n)`` (interpolated data, not
the exact ``f`` and ``g``), truncated after N terms with the geometric tail
bound ``M_g delta^N / lam``. ``continuous_cost_oracle`` is the independent
reference for the undiscretized functional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EnumerationLimitError, InvalidArgumentError, MissingBoundError, OutOfDomainError
from .interp import combine
from .mesh import SimplicialMesh
from .problem import Problem
from .solver import check_step

ENUMERATION_LIMIT = 10**7


@dataclass(frozen=True)
class ControlSequence:
    controls: np.ndarray
    h: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.controls, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise InvalidArgumentError("a control sequence needs at least one control")
        object.__setattr__(self, "controls", arr)

    def __len__(self) -> int:
        return self.controls.shape[0]

    def extended(self, N: int) -> np.ndarray:
        """First N controls, repeating the last one if the sequence is shorter."""
        if N <= len(self):
            return self.controls[:N]
        pad = np.repeat(self.controls[-1:], N - len(self), axis=0)
        return np.concatenate([self.controls, pad])

    @classmethod
    def sampled(cls, control_fn: Callable[[float], np.ndarray], h: float, N: int) -> "ControlSequence":
        """``u_i = u(i h)`` for i < N."""
        return cls(np.array([np.atleast_1d(control_fn(i * h)) for i in range(N)], dtype=float), h)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    clamp_events: int = 0
    stage_costs: np.ndarray | None = None
    """``I_k g(y_n, u_n)`` for each step, when computed."""


@dataclass(frozen=True)
class CostValue:
    value: float
    tail_bound: float
    n_terms: int
    trajectory: Trajectory | None = None


def tail_bound(M_g: float, lam: float, h: float, N: int) -> float:
    return M_g * (1.0 - lam * h) ** N / lam


def tail_length(M_g: float, lam: float, h: float, tail_tol: float) -> int:
    """Smallest N >= 1 with ``M_g delta^N / lam <= tail_tol``."""
    check_step(h, lam)
    if not tail_tol > 0:
        raise InvalidArgumentError("tail_tol must be positive")
    if M_g <= 0 or M_g / lam <= tail_tol:
        return 1
    N = math.ceil(math.log(tail_tol * lam / M_g) / math.log(1.0 - lam * h))
    # guard against log rounding on either side of an integer
    while N > 1 and tail_bound(M_g, lam, h, N - 1) <= tail_tol:
        N -= 1
    while tail_bound(M_g, lam, h, N) > tail_tol:
        N += 1
    return max(N, 1)


def _check_controls(problem: Problem, controls: np.ndarray) -> None:
    if controls.shape[1] != problem.m:
        raise InvalidArgumentError(f"controls must have {problem.m} components")
    slack = 1e-12 * (1.0 + np.abs(problem.controls.upper - problem.controls.lower))
    if np.any(controls < problem.controls.lower - slack) or np.any(controls > problem.controls.upper + slack):
        raise InvalidArgumentError("control sequence leaves the admissible control box")


def _check_start(problem: Problem, mesh: SimplicialMesh, y0) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y0, dtype=float))
    if y.shape != (problem.n,):
        raise InvalidArgumentError(f"initial state must have {problem.n} components")
    if mesh.domain != problem.domain:
        raise InvalidArgumentError("mesh and problem are defined on different domains")
    if not problem.domain.contains(y)[0]:
        raise OutOfDomainError(f"initial state {y.tolist()} lies outside the domain")
    return y


def _interpolated_rollout(problem: Problem, mesh: SimplicialMesh, y0: np.ndarray, controls: np.ndarray, h: float):
    N = controls.shape[0]
    n = problem.n
    states = np.empty((N + 1, n))
    stage = np.empty(N)
    states[0] = y0
    clamps = 0
    corners = np.arange(n + 1)[None, :]
    lower, upper = mesh.domain.lower, mesh.domain.upper
    for i in range(N):
        y = states[i]
        _, vidx, w = mesh.locate_many(y[None, :])
        Yv = mesh.vertices[vidx[0]]
        u = controls[i]
        Fv = problem.f(Yv, u)
        Gv = problem.g(Yv, u)
        stage[i] = combine(Gv, corners, w)[0]
        nxt = y + h * combine(Fv, corners, w)[0]
        if np.any(nxt < lower) or np.any(nxt > upper):
            clamps += 1
            nxt = np.clip(nxt, lower, upper)
        states[i + 1] = nxt
    return states, stage, clamps


def euler_rollout(problem: Problem, mesh: SimplicialMesh, y0, seq: ControlSequence) -> Trajectory:
    """States of the interpolated Euler recursion; out-of-domain steps are clamped and counted."""
    y = _check_start(problem, mesh, y0)
    check_step(seq.h, problem.lam)
    _check_controls(problem, seq.controls)
    states, stage, clamps = _interpolated_rollout(problem, mesh, y, seq.controls, seq.h)
    return Trajectory(states=states, clamp_events=clamps, stage_costs=stage)


def discounted_sum(stage_costs: np.ndarray, h: float, lam: float) -> float:
    delta = 1.0 - lam * h
    total = 0.0
    for i, c in enumerate(stage_costs):
        total += h * delta**i * float(c)
    return total


def discrete_cost(
    problem: Problem,
    mesh: SimplicialMesh,
    y0,
    seq: ControlSequence,
    tail_tol: float | None = None,
) -> CostValue:
    """Truncated fully discrete cost along ``seq``.

    With ``tail_tol`` the number of terms is raised until the geometric tail
    ``M_g delta^N / lam`` is below it (``M_g`` from ``problem.bounds``); the
    sequence is padded with its last control.
    """
    h = seq.h
    check_step(h, problem.lam)
    y = _check_start(problem, mesh, y0)
    _check_controls(problem, seq.controls)
    M_g = problem.bounds.M_g
    if tail_tol is not None:
        if M_g is None:
            raise MissingBoundError(
                "a tail tolerance needs the bound M_g; set problem bounds or run validate_problem to estimate it"
            )
        N = max(tail_length(M_g, problem.lam, h, tail_tol), len(seq))
    else:
        N = len(seq)
    controls = seq.extended(N)
    states, stage, clamps = _interpolated_rollout(problem, mesh, y, controls, h)
    tail = tail_bound(M_g, problem.lam, h, N) if M_g is not None else math.inf
    traj = Trajectory(states=states, clamp_events=clamps, stage_costs=stage)
    return CostValue(value=discounted_sum(stage, h, problem.lam), tail_bound=tail, n_terms=N, trajectory=traj)


def rk4_trajectory(
    problem: Problem,
    y0,
    control_fn: Callable[[float], np.ndarray],
    T: float,
    dt: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 with the exact dynamics on a uniform grid covering [0, T].

    Returns ``(times, states)``; the step is shrunk so that T is a whole
    number of steps.
    """
    if not (T > 0 and dt > 0):
        raise InvalidArgumentError("T and dt must be positive")
    K = max(1, math.ceil(T / dt - 1e-9))
    dt = T / K
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    n = y.size
    states = np.empty((K + 1, n))
    states[0] = y
    f = problem.dynamics
    m = problem.m

    def rhs(t: float, state: np.ndarray) -> np.ndarray:
        u = np.asarray(control_fn(t), dtype=float).reshape(1, m)
        return np.asarray(f(state.reshape(1, n), u), dtype=float).reshape(n)

    for i in range(K):
        t = i * dt
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[i + 1] = y
    return np.arange(K + 1) * dt, states


def continuous_cost_oracle(
    problem: Problem,
    y0,
    control_fn: Callable[[float], np.ndarray],
    T: float,
    dt: float,
) -> CostValue:
    """Reference value of ``int_0^T g(y, u) e^{-lam t} dt`` with the exact dynamics.

    RK4 states, trapezoid rule on the same grid. The returned tail bound
    ``M_g e^{-lam T} / lam`` covers the neglected part of the infinite horizon
    (infinite if ``M_g`` is unknown).
    """
    y = np.atleast_1d(np.asarray(y0, dtype=float))
    if y.shape != (problem.n,):
        raise InvalidArgumentError(f"initial state must have {problem.n} components")
    if not problem.domain.contains(y)[0]:
        raise OutOfDomainError(f"initial state {y.tolist()} lies outside the domain")
    times, states = rk4_trajectory(problem, y, control_fn, T, dt)
    U = np.array([np.atleast_1d(control_fn(t)) for t in times], dtype=float).reshape(len(times), problem.m)
    integrand = problem.g(states, U) * np.exp(-problem.lam * times)
    step = times[1] - times[0]
    value = float(step * (integrand.sum() - 0.5 * (integrand[0] + integrand[-1])))
    M_g = problem.bounds.M_g
    tail = M_g * math.exp(-problem.lam * T) / problem.lam if M_g is not None else math.inf
    return CostValue(value=value, tail_bound=tail, n_terms=len(times))


@dataclass(frozen=True)
class BruteForceResult:
    value: float
    tail_bound: float
    sequence: np.ndarray
    """Indices into the control samples of a minimizing sequence."""
    sequences_checked: int
    clamp_events: int


def nodal_cost_bound(problem: Problem, mesh: SimplicialMesh) -> float:
    """``max |g|`` over vertices x sampled controls, a bound for ``|I_k g|`` on those controls."""
    Y = mesh.vertices
    U = problem.controls.samples
    G = problem.g(np.repeat(Y, len(U), axis=0), np.tile(U, (len(Y), 1)))
    return float(np.abs(G).max())


def brute_force_value(
    problem: Problem,
    mesh: SimplicialMesh,
    h: float,
    y0,
    N: int,
    tail_tol: float | None = None,
    limit: int = ENUMERATION_LIMIT,
) -> BruteForceResult:
    """Minimum of the N-term discrete cost over every sequence of sampled controls.

    The result is within ``tail_bound`` of the infimum over infinite sequences
    of the sampled controls. Ties go to the lexicographically first sequence.
    """
    check_step(h, problem.lam)
    y = _check_start(problem, mesh, y0)
    N = int(N)
    if N < 1:
        raise InvalidArgumentError("N must be >= 1")
    nc = len(problem.controls)
    count = nc**N
    if count > limit:
        raise EnumerationLimitError(count, limit)
    M_g = problem.bounds.M_g if problem.bounds.M_g is not None else nodal_cost_bound(problem, mesh)
    tail = tail_bound(M_g, problem.lam, h, N)
    if tail_tol is not None and tail > tail_tol:
        raise InvalidArgumentError(f"N={N} leaves a tail bound {tail:.3e} above the budget {tail_tol:.3e}; increase N")

    n = problem.n
    Y = mesh.vertices
    U = problem.controls.samples
    nv = Y.shape[0]
    Yr = np.repeat(Y, nc, axis=0)
    Ur = np.tile(U, (nv, 1))
    F_nodal = problem.f(Yr, Ur).reshape(nv, nc, n)
    G_nodal = problem.g(Yr, Ur).reshape(nv, nc)
    delta = 1.0 - problem.lam * h
    lower, upper = mesh.domain.lower, mesh.domain.upper

    states = y[None, :]
    costs = np.zeros(1)
    clamps = 0
    for level in range(N):
        _, vidx, w = mesh.locate_many(states)
        g_int = combine(G_nodal, vidx, w)  # (P, nc)
        costs = (costs[:, None] + h * delta**level * g_int).reshape(-1)
        if level == N - 1:
            break
        f_int = combine(F_nodal, vidx, w)  # (P, nc, n)
        states = (states[:, None, :] + h * f_int).reshape(-1, n)
        out = np.any((states < lower) | (states > upper), axis=1)
        if np.any(out):
            clamps += int(np.count_nonzero(out))
            states = np.clip(states, lower, upper)
    best = int(np.argmin(costs))
    digits = np.empty(N, dtype=np.int64)
    code = best
    for i in range(N - 1, -1, -1):
        digits[i] = code % nc
        code //= nc
    return BruteForceResult(
        value=float(costs[best]),
        tail_bound=tail,
        sequence=digits,
        sequences_checked=count,
        clamp_events=clamps,
    )
