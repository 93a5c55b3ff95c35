"""Time discretisation of [0, T]: uniform and graded node sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

__all__ = ["Grid", "make_grid", "refine", "default_grading"]


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered nodes ``0 = t_0 < ... < t_N = T``.

    ``kind`` is ``"uniform"`` or ``"graded"``; graded grids place
    ``t_i = T (i/N)**p``.  Cell ``j`` is ``[t_j, t_{j+1}]``.
    """

    T: float
    nodes: np.ndarray
    kind: str = "uniform"
    p: float = 1.0
    widths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        w = np.diff(nodes)
        w.setflags(write=False)
        object.__setattr__(self, "widths", w)

    @property
    def N(self) -> int:
        return len(self.nodes) - 1

    @property
    def is_uniform(self) -> bool:
        return self.kind == "uniform" or (self.kind == "graded" and self.p == 1.0)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (self.kind == other.kind and self.p == other.p and self.T == other.T
                and np.array_equal(self.nodes, other.nodes))

    def __hash__(self):
        return hash((self.kind, self.p, self.T, self.N))

    def describe(self) -> str:
        if self.kind == "graded":
            return f"graded(T={self.T!r}, N={self.N}, p={self.p!r})"
        return f"uniform(T={self.T!r}, N={self.N})"


def make_grid(T: float, N: int, kind: str = "uniform", p: float = 1.0) -> Grid:
    """Build a uniform or graded grid on ``[0, T]`` with ``N`` cells."""
    if not np.isfinite(T) or T <= 0:
        raise ConfigurationError(f"horizon T must be positive, got {T!r}")
    if int(N) != N or N < 1:
        raise ConfigurationError(f"cell count N must be a positive integer, got {N!r}")
    N = int(N)
    i = np.arange(N + 1)
    if kind == "uniform":
        nodes = T * (i / N)
        p = 1.0
    elif kind == "graded":
        if not p >= 1:
            raise ConfigurationError(f"grading exponent must be >= 1, got {p!r}")
        nodes = T * (i / N) ** p
    else:
        raise ConfigurationError(f"unknown grid kind {kind!r}")
    nodes[0] = 0.0
    nodes[-1] = T
    return Grid(T=float(T), nodes=nodes, kind=kind, p=float(p))


def refine(grid: Grid, factor: int) -> Grid:
    """Subdivide every cell of ``grid`` ``factor`` times, keeping the grid kind."""
    if int(factor) != factor or factor < 2:
        raise ConfigurationError(f"refinement factor must be an integer >= 2, got {factor!r}")
    return make_grid(grid.T, grid.N * int(factor), grid.kind, grid.p)


def default_grading(beta: float) -> float:
    """Grading exponent ``1/(1 - beta)`` for an ``s**-beta`` singularity at the origin."""
    if not 0 <= beta < 1:
        raise ConfigurationError(f"singularity exponent must lie in [0, 1), got {beta!r}")
    return 1.0 / (1.0 - beta)
