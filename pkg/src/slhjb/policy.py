"""Greedy feedback from a solved value function and closed-loop rollouts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import Trajectory, discounted_sum, nodal_cost_bound, tail_bound
from .errors import InvalidArgumentError, OutOfDomainError
from .interp import combine, interpolate_many
from .mesh import SimplicialMesh
from .problem import Problem
from .solver import ValueFunction


@dataclass(frozen=True)
class ClosedLoopRun:
    trajectory: Trajectory
    controls: np.ndarray
    control_indices: np.ndarray
    realized_cost: float
    tail_bound: float


def greedy_index(v: ValueFunction, problem: Problem, y) -> int:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (problem.n,):
        raise InvalidArgumentError(f"state must have {problem.n} components")
    if not problem.domain.contains(y)[0]:
        raise OutOfDomainError(f"state {y.tolist()} lies outside the domain")
    U = problem.controls.samples
    Yr = np.repeat(y[None, :], len(U), axis=0)
    feet = np.clip(Yr + v.h * problem.f(Yr, U), problem.domain.lower, problem.domain.upper)
    cand = v.delta * interpolate_many(v.field, feet)[:, 0] + v.h * problem.g(Yr, U)
    return int(np.argmin(cand))


def greedy_control(v: ValueFunction, problem: Problem, y) -> np.ndarray:
    """Sampled control minimizing ``(1 - lam h) I_k v(y + h f(y, u)) + h g(y, u)``; ties go to the lowest index."""
    return problem.controls.samples[greedy_index(v, problem, y)].copy()


def synthesize_trajectory(
    v: ValueFunction,
    problem: Problem,
    mesh: SimplicialMesh,
    y0,
    steps: int,
) -> ClosedLoopRun:
    """Closed-loop rollout: greedy control each step, interpolated Euler update.

    ``realized_cost`` is the truncated discounted sum of ``I_k g``; the tail
    bound uses ``M_g`` from the problem bounds, or the nodal maximum of
    ``|g|`` over the sampled controls when no bound is set.
    """
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    y = np.atleast_1d(np.asarray(y0, dtype=float))
    if not problem.domain.contains(y)[0]:
        raise OutOfDomainError(f"initial state {y.tolist()} lies outside the domain")
    n = problem.n
    h = v.h
    states = np.empty((steps + 1, n))
    states[0] = y
    idx = np.empty(steps, dtype=np.int64)
    stage = np.empty(steps)
    clamps = 0
    corners = np.arange(n + 1)[None, :]
    lower, upper = mesh.domain.lower, mesh.domain.upper
    U = problem.controls.samples
    for i in range(steps):
        cur = states[i]
        idx[i] = greedy_index(v, problem, cur)
        u = U[idx[i]]
        _, vidx, w = mesh.locate_many(cur[None, :])
        Yv = mesh.vertices[vidx[0]]
        stage[i] = combine(problem.g(Yv, u), corners, w)[0]
        nxt = cur + h * combine(problem.f(Yv, u), corners, w)[0]
        if np.any(nxt < lower) or np.any(nxt > upper):
            clamps += 1
            nxt = np.clip(nxt, lower, upper)
        states[i + 1] = nxt
    M_g = problem.bounds.M_g if problem.bounds.M_g is not None else nodal_cost_bound(problem, mesh)
    return ClosedLoopRun(
        trajectory=Trajectory(states=states, clamp_events=clamps, stage_costs=stage),
        controls=U[idx].copy(),
        control_indices=idx,
        realized_cost=discounted_sum(stage, h, problem.lam),
        tail_bound=tail_bound(M_g, problem.lam, h, steps),
    )
