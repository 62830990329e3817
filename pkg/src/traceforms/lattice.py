"""Lattice chains discretizing Brownian plus stable-jump dynamics on a box.

Nearest-neighbour rates reproduce the standard half-Laplacian stencil; the
long-range rates follow the stable jump kernel with its dimensional constant,
truncated at a cutoff radius.  The resulting chain satisfies every symmetric
chain invariant exactly, which makes the box-with-ball-and-shell geometry an
exact test instance for the whole identity suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .chain import SubsetSpec, SymmetricChain, validate_chain
from .errors import DegenerateGrid, EmptyTraceSet
from .sphere import stable_constant


@dataclass(frozen=True)
class BoxGrid:
    """Regular lattice: ``shape[i]`` sites per axis, spacing ``h``, corner at
    ``origin``.  Site k has coordinates origin + h * multi_index(k)."""

    shape: tuple[int, ...]
    h: float
    origin: tuple[float, ...]

    def __post_init__(self):
        if self.h <= 0:
            raise DegenerateGrid("spacing must be positive")
        if len(self.shape) < 1 or any(s < 2 for s in self.shape):
            raise DegenerateGrid(f"each axis needs at least 2 sites, got {self.shape}")
        if len(self.origin) != len(self.shape):
            raise DegenerateGrid("origin dimension mismatch")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    def sites(self) -> np.ndarray:
        """(n_sites, dim) coordinates in C order of the multi-index."""
        axes = [self.origin[d] + self.h * np.arange(self.shape[d]) for d in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)


def lattice_chain_from_kernel(grid: BoxGrid, kernel, F_predicate):
    """Build the lattice chain for a jump kernel and mark the trace set.

    ``kernel`` is one of
        ("laplacian",)
        ("stable", alpha, cutoff)
        ("mixed", alpha, cutoff)
    Laplacian rates are 1/(2 h^2) per axis neighbour; stable rates between
    distinct sites x, y within the cutoff are A(n, -alpha) h^n / |x-y|^(n+a).
    Site mass is h^n.  ``F_predicate`` maps a coordinate row to bool.

    Returns (chain, SubsetSpec, sites).
    """
    kind = kernel[0]
    if kind not in ("laplacian", "stable", "mixed"):
        raise ValueError(f"unknown kernel {kind!r}")
    pts = grid.sites()
    n = grid.n_sites
    h = grid.h
    dim = grid.dim
    Q = np.zeros((n, n))

    if kind in ("laplacian", "mixed"):
        rate = 1.0 / (2.0 * h * h)
        strides = np.cumprod((1,) + grid.shape[::-1][:-1])[::-1]
        idx = np.arange(n)
        multi = np.stack(np.unravel_index(idx, grid.shape), axis=1)
        for d in range(dim):
            ok = multi[:, d] + 1 < grid.shape[d]
            a = idx[ok]
            b = a + strides[d]
            Q[a, b] += rate
            Q[b, a] += rate

    if kind in ("stable", "mixed"):
        alpha, cutoff = float(kernel[1]), float(kernel[2])
        if cutoff < h:
            raise ValueError("stable cutoff must be at least the lattice spacing")
        const = stable_constant(dim, alpha)
        dist = cdist(pts, pts)
        np.fill_diagonal(dist, np.inf)
        mask = dist <= cutoff
        Q[mask] += const * h**dim / dist[mask] ** (dim + alpha)

    np.fill_diagonal(Q, 0.0)
    Q[np.diag_indices(n)] = -Q.sum(axis=1)
    m = np.full(n, h**dim)
    chain = validate_chain(Q, m)

    in_F = np.array([bool(F_predicate(p)) for p in pts])
    if not in_F.any():
        raise EmptyTraceSet("trace-set predicate selected no lattice site")
    if in_F.all():
        raise EmptyTraceSet("trace-set predicate selected every lattice site")
    sub = SubsetSpec.of(chain, np.nonzero(in_F)[0])
    return chain, sub, pts


def ball_and_shell_predicate(ball_radius: float, shell_center, shell_radii):
    """Marks the prototype trace set: a solid ball at the origin together
    with a hollow shell around ``shell_center`` with radii [lo, hi]."""
    center = np.asarray(shell_center, dtype=float)
    lo, hi = shell_radii

    def predicate(p):
        if np.linalg.norm(p) <= ball_radius:
            return True
        d = np.linalg.norm(p - center)
        return lo <= d <= hi

    return predicate
