"""Driving noise: Wiener increment ensembles and fBm via its Volterra kernel.

Randomness is organised in blocks of :data:`BLOCK` paths, each drawn from
its own ``SeedSequence`` child, so the increments of path ``p`` depend
only on ``(seed, p, grid size, m)``: growing ``P`` or changing the worker
count never alters existing paths.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels as kmod
from .errors import ConfigurationError
from .timegrid import Grid, make_grid, refine

__all__ = ["NoiseEnsemble", "CovarianceEstimate", "sample_wiener", "fbm_from_wiener",
           "empirical_covariance", "refine_noise", "BLOCK"]

BLOCK = 256


@dataclass(frozen=True, eq=False)
class NoiseEnsemble:
    """Increments ``dW[p, j, k]`` over cell ``j`` for path ``p`` and component ``k``.

    ``kind`` is ``"wiener"`` or ``"fbm"``.  An fBm ensemble keeps the Wiener
    ensemble it was built from in ``base`` so both can drive one experiment.
    """

    grid: Grid
    increments: np.ndarray
    seed: Optional[int]
    kind: str = "wiener"
    H: Optional[float] = None
    base: Optional["NoiseEnsemble"] = None

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 3 or inc.shape[1] != self.grid.N:
            raise ConfigurationError(f"increments must have shape (P, {self.grid.N}, m)")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def P(self) -> int:
        return self.increments.shape[0]

    @property
    def m(self) -> int:
        return self.increments.shape[2]

    def paths(self) -> np.ndarray:
        """Path values at the nodes, shape ``(P, N + 1, m)``, starting from 0."""
        out = np.zeros((self.P, self.grid.N + 1, self.m))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def subset(self, paths: slice) -> "NoiseEnsemble":
        base = self.base.subset(paths) if self.base is not None else None
        return NoiseEnsemble(self.grid, self.increments[paths], self.seed, self.kind, self.H, base)

    def to_csv(self, path) -> None:
        """Write ``path, node, dim, value`` rows; ``value`` is the increment over
        the cell ending at ``node``."""
        with open(path, "w", newline="") as fh:
            fh.write(f"# noise kind={self.kind} H={self.H} seed={self.seed} "
                     f"grid={self.grid.describe()}\n")
            w = csv.writer(fh)
            w.writerow(["path", "node", "dim", "value"])
            P, N, m = self.increments.shape
            for p in range(P):
                for j in range(N):
                    for k in range(m):
                        w.writerow([p, j + 1, k, repr(float(self.increments[p, j, k]))])

    @classmethod
    def from_csv(cls, path, grid: Grid, kind: str = "wiener", H=None) -> "NoiseEnsemble":
        rows = []
        with open(path) as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                rows.append((int(row["path"]), int(row["node"]), int(row["dim"]),
                             float(row["value"])))
        if not rows:
            raise ConfigurationError(f"no increments in {path}")
        arr = np.array(rows)
        P, m = int(arr[:, 0].max()) + 1, int(arr[:, 2].max()) + 1
        if int(arr[:, 1].max()) != grid.N or int(arr[:, 1].min()) < 1:
            raise ConfigurationError("increment file does not match the grid")
        inc = np.zeros((P, grid.N, m))
        inc[arr[:, 0].astype(int), arr[:, 1].astype(int) - 1, arr[:, 2].astype(int)] = arr[:, 3]
        return cls(grid, inc, None, kind, H)


def _block_normals(seed: int, block: int, rows: int, N: int, m: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    z = np.random.default_rng(ss).standard_normal((BLOCK, N, m))
    return z[:rows]


def sample_wiener(grid: Grid, m: int, P: int, seed: int, workers: int = 1) -> NoiseEnsemble:
    """Independent ``N(0, width)`` increments, reproducible from ``seed``."""
    if int(m) != m or m < 1 or int(P) != P or P < 1:
        raise ConfigurationError("need integer m >= 1 and P >= 1")
    if seed is None:
        raise ConfigurationError("a seed is required")
    m, P, N = int(m), int(P), grid.N
    nblocks = -(-P // BLOCK)
    sizes = [min(BLOCK, P - b * BLOCK) for b in range(nblocks)]
    jobs = [(int(seed), b, sizes[b], N, m) for b in range(nblocks)]
    if workers > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as ex:
            blocks = list(ex.map(lambda a: _block_normals(*a), jobs))
    else:
        blocks = [_block_normals(*a) for a in jobs]
    z = np.concatenate(blocks, axis=0)
    inc = z * np.sqrt(grid.widths)[None, :, None]
    return NoiseEnsemble(grid, inc, int(seed))


def fbm_weights(H: float, grid: Grid) -> np.ndarray:
    """Cell-averaged fBm kernel ``Kbar[i, j] = int_{cell j} K_H(t_i, s) ds / width_j``."""
    W = kmod.weight_matrix(kmod.fbm_kernel(H), grid)
    return W / grid.widths


def fbm_from_wiener(e: NoiseEnsemble, H: float) -> NoiseEnsemble:
    """``W_H(t_i) = sum_{j<i} Kbar[i, j] dW_j`` on the ensemble's own increments."""
    if e.kind != "wiener":
        raise ConfigurationError("fbm_from_wiener needs a wiener ensemble")
    if not 0 < H < 1:
        raise ConfigurationError(f"Hurst index must lie in (0, 1), got {H!r}")
    if H == 0.5:
        return NoiseEnsemble(e.grid, e.increments, e.seed, "fbm", 0.5, e)
    Kbar = fbm_weights(H, e.grid)
    # (P, N, m) x (N+1, N) -> path values (P, N+1, m)
    vals = np.einsum("ij,pjk->pik", Kbar, e.increments)
    inc = np.diff(vals, axis=1)
    return NoiseEnsemble(e.grid, inc, e.seed, "fbm", float(H), e)


@dataclass(frozen=True)
class CovarianceEstimate:
    """Sample covariance of path values at selected nodes with standard errors."""

    nodes: np.ndarray
    times: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    P: int

    def within(self, reference: np.ndarray, n_se: float = 3.0) -> np.ndarray:
        return np.abs(self.cov - reference) <= n_se * self.se


def empirical_covariance(e: NoiseEnsemble, nodes: Sequence[int], dim: int = 0,
                         paths: Optional[np.ndarray] = None) -> CovarianceEstimate:
    """Covariance of ``X(t_a), X(t_b)`` over paths, standard errors by the delta method.

    ``paths`` defaults to the ensemble's own path values; pass solution
    paths of shape ``(P, N + 1)`` to analyse those instead.
    """
    X = e.paths()[:, :, dim] if paths is None else np.asarray(paths, dtype=float)
    P = X.shape[0]
    if P < 100:
        raise ConfigurationError(f"empirical covariance needs at least 100 paths, got {P}")
    nodes = np.asarray(nodes, dtype=int)
    Y = X[:, nodes]
    Yc = Y - Y.mean(axis=0)
    prod = Yc[:, :, None] * Yc[:, None, :]
    cov = prod.sum(axis=0) / (P - 1)
    se = prod.std(axis=0, ddof=1) / np.sqrt(P)
    return CovarianceEstimate(nodes, e.grid.nodes[nodes], cov, se, P)


def refine_noise(e: NoiseEnsemble, factor: int, seed: int) -> NoiseEnsemble:
    """Brownian-bridge refinement of a Wiener ensemble.

    Each cell is split into ``factor`` sub-cells whose increments sum to the
    coarse increment; the bridge randomness comes from ``seed`` with the
    same block layout as :func:`sample_wiener`.
    """
    if e.kind != "wiener":
        raise ConfigurationError("only wiener ensembles can be refined")
    fine = refine(e.grid, factor)
    f = int(factor)
    P, N, m = e.increments.shape
    z = sample_wiener(fine, m, P, seed).increments / np.sqrt(fine.widths)[None, :, None]
    z = z.reshape(P, N, f, m)
    dsub = fine.widths.reshape(N, f)
    delta = e.grid.widths
    sq = np.sqrt(dsub)[None, :, :, None]
    frac = (dsub / delta[:, None])[None, :, :, None]
    zsum = (sq * z).sum(axis=2, keepdims=True)
    inc = frac * e.increments[:, :, None, :] + sq * z - frac * zsum
    return NoiseEnsemble(fine, inc.reshape(P, N * f, m), e.seed)
