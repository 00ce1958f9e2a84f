"""
Regular simplicial triangulation of an axis-aligned box.

Each grid cell is split into n! Kuhn (Freudenthal) simplices. A simplex in a
cell with base vertex ``b`` is identified by a permutation ``p`` of the axes;
its vertices are ``b, b + e[p0], b + e[p0] + e[p1], ...``. A point with
fractional cell coordinates ``r`` lies in the simplex whose permutation sorts
``r`` in decreasing order, and its barycentric weights are the successive
differences of the sorted coordinates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, OutOfDomainError


@dataclass(frozen=True)
class BoxDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise InvalidArgumentError("domain bounds must be nonempty vectors of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidArgumentError("domain bounds must be finite")
        if np.any(lower >= upper):
            raise InvalidArgumentError("domain requires lower[i] < upper[i] for every i")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n(self) -> int:
        return self.lower.size

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BoxDomain):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self) -> int:
        return hash((self.lower.tobytes(), self.upper.tobytes()))


@dataclass(frozen=True)
class BarycentricLocation:
    simplex_index: int
    coords: np.ndarray


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    domain: BoxDomain
    cells_per_dim: tuple[int, ...]
    vertices: np.ndarray
    simplices: np.ndarray
    k: float
    spacing: np.ndarray = field(repr=False)
    strides: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_simplices(self) -> int:
        return self.simplices.shape[0]

    def locate_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized point location.

        Returns ``(simplex_index, vertex_index, weights)`` with shapes
        ``(P,)``, ``(P, n+1)`` and ``(P, n+1)``. Raises OutOfDomainError if any
        point lies outside the closed box.
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1) if self.n > 1 or pts.size == 1 else pts.reshape(-1, 1)
        if pts.shape[-1] != self.n:
            raise InvalidArgumentError(f"points must have {self.n} coordinates, got {pts.shape[-1]}")
        inside = self.domain.contains(pts)
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise OutOfDomainError(f"point {pts[bad].tolist()} lies outside the domain")
        return _locate_unchecked(self, pts)

    def edges(self) -> np.ndarray:
        """Unique vertex-index pairs joined by a simplex edge, shape ``(E, 2)``."""
        n1 = self.n + 1
        pairs = [(a, b) for a in range(n1) for b in range(a + 1, n1)]
        e = np.concatenate([self.simplices[:, [a, b]] for a, b in pairs])
        e.sort(axis=1)
        return np.unique(e, axis=0)


def _locate_unchecked(mesh: SimplicialMesh, pts: np.ndarray):
    n = mesh.n
    cells = np.asarray(mesh.cells_per_dim)
    scaled = (pts - mesh.domain.lower) / mesh.spacing
    cell = np.clip(np.floor(scaled).astype(np.int64), 0, cells - 1)
    frac = np.clip(scaled - cell, 0.0, 1.0)
    # stable sort on -frac: equal fractions keep axis order, so face points are deterministic
    perm = np.argsort(-frac, axis=1, kind="stable")
    sorted_frac = np.take_along_axis(frac, perm, axis=1)

    weights = np.empty((pts.shape[0], n + 1))
    weights[:, 0] = 1.0 - sorted_frac[:, 0]
    if n > 1:
        weights[:, 1:n] = sorted_frac[:, :-1] - sorted_frac[:, 1:]
    weights[:, n] = sorted_frac[:, -1]

    vstrides = mesh.strides
    base = cell @ vstrides
    steps = vstrides[perm]
    vidx = np.empty((pts.shape[0], n + 1), dtype=np.int64)
    vidx[:, 0] = base
    vidx[:, 1:] = base[:, None] + np.cumsum(steps, axis=1)

    cell_lin = np.ravel_multi_index(tuple(cell.T), tuple(cells)) if n > 1 else cell[:, 0]
    simplex = cell_lin * math.factorial(n) + _perm_rank(perm)
    return simplex, vidx, weights


def _perm_rank(perm: np.ndarray) -> np.ndarray:
    """Lexicographic rank of each row permutation (matches itertools.permutations order)."""
    n = perm.shape[1]
    if n == 1:
        return np.zeros(perm.shape[0], dtype=np.int64)
    smaller_after = (perm[:, None, :] < perm[:, :, None]) & np.triu(np.ones((n, n), dtype=bool), 1)
    lehmer = smaller_after.sum(axis=2)
    fact = np.array([math.factorial(n - 1 - i) for i in range(n)], dtype=np.int64)
    return lehmer @ fact


def build_uniform_mesh(domain: BoxDomain, cells_per_dim) -> SimplicialMesh:
    cells = tuple(int(c) for c in np.atleast_1d(cells_per_dim))
    if len(cells) != domain.n:
        raise InvalidArgumentError(f"cells_per_dim needs {domain.n} entries, got {len(cells)}")
    if any(c < 1 for c in cells):
        raise InvalidArgumentError(f"cells_per_dim entries must be >= 1, got {list(cells)}")
    n = domain.n
    spacing = (domain.upper - domain.lower) / np.asarray(cells, dtype=float)

    axes = [np.linspace(lo, hi, c + 1) for lo, hi, c in zip(domain.lower, domain.upper, cells)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel() for g in grid], axis=1)
    # C-order flattening of the (c0+1, ..., c_{n-1}+1) vertex lattice
    shape = np.asarray(cells) + 1
    strides = np.array([int(np.prod(shape[i + 1 :])) for i in range(n)], dtype=np.int64)

    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    offsets = np.zeros((len(perms), n + 1), dtype=np.int64)
    offsets[:, 1:] = np.cumsum(strides[perms], axis=1)
    cell_index = np.stack(np.meshgrid(*[np.arange(c) for c in cells], indexing="ij"), axis=-1).reshape(-1, n)
    bases = cell_index @ strides
    simplices = (bases[:, None, None] + offsets[None, :, :]).reshape(-1, n + 1)

    # all cells are translates, so the diameter of one cell's simplices is k
    corner = np.zeros((len(perms), n + 1, n))
    for j in range(1, n + 1):
        corner[:, j] = corner[:, j - 1]
        corner[np.arange(len(perms)), j, perms[:, j - 1]] = 1.0
    corner *= spacing
    diffs = corner[:, :, None, :] - corner[:, None, :, :]
    k = float(np.sqrt((diffs**2).sum(-1)).max())

    vertices.flags.writeable = False
    simplices.flags.writeable = False
    return SimplicialMesh(
        domain=domain,
        cells_per_dim=cells,
        vertices=vertices,
        simplices=simplices,
        k=k,
        spacing=spacing,
        strides=strides,
    )


def locate(mesh: SimplicialMesh, point) -> BarycentricLocation:
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    if pt.shape != (mesh.n,):
        raise InvalidArgumentError(f"point must have {mesh.n} coordinates")
    simplex, _, weights = mesh.locate_many(pt[None, :])
    return BarycentricLocation(simplex_index=int(simplex[0]), coords=weights[0])


def clamp_to_domain(domain: BoxDomain, point) -> np.ndarray:
    return np.clip(np.asarray(point, dtype=float), domain.lower, domain.upper)


def cells_for_diameter(domain: BoxDomain, k: float) -> tuple[int, ...]:
    """Smallest uniform cell counts whose Kuhn simplices have diameter <= k."""
    if not k > 0:
        raise InvalidArgumentError("target diameter must be positive")
    widths = domain.upper - domain.lower
    raw = widths * math.sqrt(domain.n) / k
    return tuple(max(1, int(math.ceil(x - 1e-9))) for x in raw)
