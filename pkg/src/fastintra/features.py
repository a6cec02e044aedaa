"""Texture features (DCT of residuals, selective max pooling, PCA) and neighbour-mode features."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .intra import DC, HOR, PLANAR, VER, GroundTruth, Residual, _planar, dct_matrix, predict_modes
from .media import LumaBlock, ReferenceSamples

FEATURE_MODES = (PLANAR, HOR, VER)
POOLED_LEN = 15
CONCAT_LEN = 3 * POOLED_LEN
X1_LEN = 15
X2_LEN = 4

# Inclusive (row0, col0, row1, col1) pooling regions on an 8x8 coefficient grid.
POOL_REGIONS_8 = (
    (0, 0, 0, 0),
    (0, 1, 0, 3),
    (0, 4, 1, 5),
    (0, 6, 1, 7),
    (0, 4, 1, 7),
    (1, 1, 2, 2),
    (1, 1, 3, 3),
    (1, 0, 3, 0),
    (4, 0, 5, 1),
    (6, 0, 7, 1),
    (4, 0, 7, 1),
    (2, 4, 3, 7),
    (4, 2, 7, 3),
    (4, 4, 5, 5),
    (4, 4, 7, 7),
)

UNAVAILABLE_CODE = -1.0
PLANAR_CODE = 1.25
DC_CODE = 1.5


@dataclass(frozen=True)
class DctCoefficients:
    mode: int
    values: np.ndarray


@dataclass(frozen=True)
class PooledFeatures:
    mode: int
    values: np.ndarray


# ------------------------------------------------------------------- DCT


def dct2(x: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the last two axes."""
    d = dct_matrix(x.shape[-1])
    return d @ x @ d.T


def idct2(c: np.ndarray) -> np.ndarray:
    d = dct_matrix(c.shape[-1])
    return d.T @ c @ d


def dct2d(res: Residual) -> DctCoefficients:
    v = np.asarray(res.values, dtype=np.float64)
    n = v.shape[-1]
    if v.shape != (n, n) or n & (n - 1):
        raise ValueError("residual must be square with power-of-two size")
    return DctCoefficients(res.mode, dct2(v))


# --------------------------------------------------------------- pooling


@lru_cache(maxsize=None)
def pool_regions(size: int) -> tuple[tuple[int, int, int, int], ...]:
    """Pooling regions scaled from the 8x8 layout to ``size`` (inclusive bounds)."""
    out = []
    for r0, c0, r1, c1 in POOL_REGIONS_8:
        def lo(v):
            return (v * size) // 8

        def hi(v, start):
            return max(math.ceil((v + 1) * size / 8) - 1, start)

        ra, ca = lo(r0), lo(c0)
        out.append((ra, ca, hi(r1, ra), hi(c1, ca)))
    return tuple(out)


@lru_cache(maxsize=None)
def _region_index(size: int) -> tuple[np.ndarray, ...]:
    """Flat indices of each region on the pooling grid (side min(size, 8))."""
    g = min(size, 8)
    scale = size // g
    return tuple(np.ravel_multi_index(np.mgrid[r0 // scale:r1 // scale + 1,
                                               c0 // scale:c1 // scale + 1].reshape(2, -1), (g, g))
                 for r0, c0, r1, c1 in pool_regions(size))


def _cell_max(a: np.ndarray) -> np.ndarray:
    """Halve |C| (..., n, n) down to the pooling grid of (n/8)^2-sized cell maxima."""
    while a.shape[-1] > 8:
        a = np.maximum(a[..., 0::2, :], a[..., 1::2, :])
        a = np.maximum(a[..., 0::2], a[..., 1::2])
    return a


def _pool_cells(cells: np.ndarray, size: int) -> np.ndarray:
    lead = cells.shape[:-2]
    flat = cells.reshape(-1, cells.shape[-1] ** 2)
    out = np.stack([flat[:, i].max(axis=1) for i in _region_index(size)], axis=-1)
    return out.reshape(*lead, POOLED_LEN)


def pool_array(coeffs: np.ndarray) -> np.ndarray:
    """Selective max pooling of |C| over the last two axes -> (..., 15).

    For sizes above 8 every region is a union of (size/8)^2 cells, so |C| is
    first halved down to an 8x8 grid of cell maxima.
    """
    return _pool_cells(_cell_max(np.abs(coeffs)), coeffs.shape[-1])


def selective_max_pool(coeffs: DctCoefficients) -> PooledFeatures:
    return PooledFeatures(coeffs.mode, pool_array(coeffs.values))


def concat_modes(m0: PooledFeatures, m18: PooledFeatures, m50: PooledFeatures) -> np.ndarray:
    if (m0.mode, m18.mode, m50.mode) != FEATURE_MODES:
        raise ValueError(f"expected pooled features for modes {FEATURE_MODES}")
    return np.concatenate([m0.values, m18.values, m50.values])


# ------------------------------------------------------------------- PCA


class NotFittedError(RuntimeError):
    pass


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray
    keep: int = X1_LEN

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "basis": self.basis.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "keep": self.keep,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        mean = np.asarray(d["mean"], dtype=np.float64)
        basis = np.asarray(d["basis"], dtype=np.float64)
        var = np.asarray(d["explained_variance"], dtype=np.float64)
        dim = mean.shape[0]
        if basis.shape != (dim, dim) or var.shape != (dim,):
            raise ValueError("inconsistent PCA model shapes")
        return cls(mean, basis, var, int(d.get("keep", X1_LEN)))


def pca_fit(samples, keep: int = X1_LEN) -> PcaModel:
    """Principal components of mean-centred samples, by descending variance.

    Each basis column is signed so that its largest-magnitude entry is positive.
    """
    x = np.asarray(samples, dtype=np.float64)
    n, dim = x.shape
    if n <= dim:
        raise ValueError(f"PCA needs more samples than dimensions ({n} <= {dim})")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    if not np.any(cov):
        return PcaModel(mean, np.eye(dim), np.zeros(dim), keep)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(dim)])
    vecs = vecs * signs
    return PcaModel(mean, vecs, vals, keep)


def pca_transform(m: np.ndarray, model: PcaModel | None, keep: int | None = None) -> np.ndarray:
    if model is None:
        raise NotFittedError("PCA model is not fitted")
    k = model.keep if keep is None else keep
    return (np.asarray(m, dtype=np.float64) - model.mean) @ model.basis[:, :k]


def pca_apply(m: np.ndarray, model: PcaModel | None) -> np.ndarray:
    """x1 = first ``keep`` coordinates of W^T (m - mean)."""
    return pca_transform(m, model)


def pca_inverse(z: np.ndarray, model: PcaModel) -> np.ndarray:
    k = z.shape[-1]
    return z @ model.basis[:, :k].T + model.mean


# -------------------------------------------------------- end-to-end x1


def concat_features(block: LumaBlock, refs: ReferenceSamples) -> np.ndarray:
    """45 pooled features m0 || m18 || m50 of one block."""
    preds = predict_modes(refs, FEATURE_MODES)
    res = (preds - block.samples.astype(np.int64)).astype(np.float64)
    return pool_array(dct2(res)).reshape(-1)


# blocks per batch step, sized so the intermediate spectra stay cache-resident
_CHUNK_SAMPLES = 1 << 15


def concat_features_batch(blocks: Sequence[LumaBlock], refs: Sequence[ReferenceSamples]) -> np.ndarray:
    """Batched ``concat_features`` for same-size blocks -> (len(blocks), 45).

    The pure horizontal and vertical predictions repeat one reference column
    or row, so their spectra are a single scaled DCT column or row. Only the
    block itself and its Planar prediction need a full 2-D transform.
    """
    if not blocks:
        return np.zeros((0, CONCAT_LEN))
    n = blocks[0].size
    step = max(1, _CHUNK_SAMPLES // (n * n))
    out = np.empty((len(blocks), CONCAT_LEN))
    for i in range(0, len(blocks), step):
        out[i:i + step] = _concat_chunk(n, blocks[i:i + step], refs[i:i + step])
    return out


def _concat_chunk(n: int, blocks, refs) -> np.ndarray:
    b = len(blocks)
    u = np.stack([r.unified() for r in refs])
    spatial = np.empty((b, 2, n, n))
    spatial[:, 0] = _planar(n, u)
    spatial[:, 1] = np.stack([blk.samples for blk in blocks])
    spectra = dct2(spatial)
    c_orig = spectra[:, 1]
    d = dct_matrix(n) * math.sqrt(n)
    col18 = np.abs(u[:, 2 * n + 1:3 * n + 1] @ d.T - c_orig[:, :, 0])    # left column, mode 18
    row50 = np.abs(u[:, 1:n + 1] @ d.T - c_orig[:, 0, :])                 # top row, mode 50

    # The mode-18 and mode-50 spectra equal -c_orig outside column 0 / row 0,
    # so their cell maxima are those of |c_orig| patched along that edge.
    g = min(n, 8)
    s = n // g
    a_orig = np.abs(c_orig)
    cells = np.empty((b, 3, g, g))
    cells[:, 0] = _cell_max(np.abs(spectra[:, 0] - c_orig))
    cells[:, 1] = cells[:, 2] = _cell_max(a_orig)
    edge18 = col18.reshape(b, g, s).max(axis=2)
    edge50 = row50.reshape(b, g, s).max(axis=2)
    if s > 1:
        edge18 = np.maximum(edge18, a_orig[:, :, 1:s].reshape(b, g, s * (s - 1)).max(axis=2))
        edge50 = np.maximum(edge50, a_orig[:, 1:s, :].reshape(b, s - 1, g, s).max(axis=(1, 3)))
    cells[:, 1, :, 0] = edge18
    cells[:, 2, 0, :] = edge50
    return _pool_cells(cells, n).reshape(b, CONCAT_LEN)


def extract_x1(block: LumaBlock, refs: ReferenceSamples, model: PcaModel) -> np.ndarray:
    return pca_apply(concat_features(block, refs), model)


# ----------------------------------------------------------- neighbours


def neighbor_code(gt: GroundTruth | int | None) -> float:
    """Scalar code of a neighbour's best mode: class/8, Planar 1.25, DC 1.5, missing -1."""
    if gt is None:
        return UNAVAILABLE_CODE
    mode = gt.best_mode if isinstance(gt, GroundTruth) else int(gt)
    if mode == PLANAR:
        return PLANAR_CODE
    if mode == DC:
        return DC_CODE
    return GroundTruth.from_mode(mode).best_class / 8.0


# Every possible neighbour code, indexed 0 (unavailable), 1..9 (class 0..8),
# 10 (Planar), 11 (DC).
CODE_VALUES = np.array([UNAVAILABLE_CODE] + [c / 8.0 for c in range(9)] + [PLANAR_CODE, DC_CODE])
CODE_VALUES.setflags(write=False)


def neighbor_code_index(mode: int | None) -> int:
    """Position of a neighbour's code in ``CODE_VALUES``."""
    if mode is None:
        return 0
    if mode == PLANAR:
        return 10
    if mode == DC:
        return 11
    return 1 + GroundTruth.from_mode(mode).best_class


def extract_x2(left=None, upper_left=None, top=None, upper_right=None) -> np.ndarray:
    """Neighbour feature vector in (L, UL, U, UR) order."""
    return np.array([neighbor_code(g) for g in (left, upper_left, top, upper_right)])


def causal_neighbors(grid: np.ndarray, row: int, col: int):
    """(L, UL, U, UR) best modes from a grid of decided modes (-1 = undecided)."""
    rows, cols = grid.shape

    def at(r, c):
        if 0 <= r < rows and 0 <= c < cols and grid[r, c] >= 0:
            return int(grid[r, c])
        return None

    return at(row, col - 1), at(row - 1, col - 1), at(row - 1, col), at(row - 1, col + 1)
