"""Piecewise affine (P1) interpolation of nodal data on a SimplicialMesh."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, NonFiniteValueError
from .mesh import SimplicialMesh


@dataclass(frozen=True, eq=False)
class NodalField:
    """Values at mesh vertices, shape ``(n_vertices, width)``."""

    mesh: SimplicialMesh
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.mesh.n_vertices:
            raise InvalidArgumentError(
                f"nodal values need one row per vertex ({self.mesh.n_vertices}), got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(vals), axis=1))[0])
            raise NonFiniteValueError(f"non-finite nodal value at vertex {bad} {self.mesh.vertices[bad].tolist()}")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def scalar(self) -> np.ndarray:
        """1-D view of a width-1 field."""
        if self.width != 1:
            raise InvalidArgumentError("field is vector-valued")
        return self.values[:, 0]


def combine(values: np.ndarray, vidx: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted nodal sum with a fixed accumulation order.

    ``values`` has vertices on axis 0; the result has the leading shape of
    ``vidx`` without its last axis, followed by ``values.shape[1:]``.
    """
    extra = (None,) * (values.ndim - 1)
    out = weights[..., 0][(...,) + extra] * values[vidx[..., 0]]
    for j in range(1, vidx.shape[-1]):
        out = out + weights[..., j][(...,) + extra] * values[vidx[..., j]]
    return out


def interpolate_many(field: NodalField, points: np.ndarray) -> np.ndarray:
    _, vidx, weights = field.mesh.locate_many(points)
    return combine(field.values, vidx, weights)


def interpolate(field: NodalField, point) -> np.ndarray:
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    return interpolate_many(field, pt[None, :])[0]


def sample_function(mesh: SimplicialMesh, fn: Callable[[np.ndarray], np.ndarray]) -> NodalField:
    """Tabulate ``fn`` at every vertex.

    ``fn`` receives the ``(n_vertices, n)`` vertex array and must return one
    value (or row) per vertex.
    """
    vals = np.asarray(fn(mesh.vertices), dtype=float)
    if vals.ndim == 0:
        vals = np.full(mesh.n_vertices, float(vals))
    if vals.shape[0] != mesh.n_vertices:
        raise InvalidArgumentError(f"function returned {vals.shape[0]} rows for {mesh.n_vertices} vertices")
    flat = vals.reshape(mesh.n_vertices, -1)
    finite = np.all(np.isfinite(flat), axis=1)
    if not np.all(finite):
        bad = int(np.flatnonzero(~finite)[0])
        raise NonFiniteValueError(
            f"function is not finite at vertex {bad} {mesh.vertices[bad].tolist()}: {flat[bad].tolist()}"
        )
    return NodalField(mesh, flat)
