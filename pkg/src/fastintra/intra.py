"""Intra prediction, residuals, RMD/RDO costs and the ground-truth labeler.

Prediction follows the VVC layout of 67 modes: 0 is Planar, 1 is DC and
2..66 are angular, 18 pure horizontal and 50 pure vertical. Angular samples
are projected onto the reference line with 1/32-pel linear interpolation.
Reference smoothing, PDPC and wide-angle remapping are not applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .media import LumaBlock, ReferenceSamples

NUM_MODES = 67
PLANAR, DC = 0, 1
HOR, VER = 18, 50
NUM_CLASSES = 9
NUM_ANGULAR = 65
ANGULAR_MODES = tuple(range(2, NUM_MODES))
MODE_SIGNAL_BITS = 6

# intraPredAngle for modes 2..18; the rest follows by mirroring
_ANGLES_2_TO_18 = [32, 29, 26, 23, 20, 18, 16, 14, 12, 10, 8, 6, 4, 3, 2, 1, 0]


def _build_angle_table() -> dict[int, int]:
    table = {m: a for m, a in zip(range(2, 19), _ANGLES_2_TO_18)}
    for m in range(19, 35):
        table[m] = -table[36 - m]
    for m in range(35, 67):
        table[m] = table[68 - m]
    return table


INTRA_PRED_ANGLE = _build_angle_table()


def _check_mode(mode: int) -> int:
    mode = int(mode)
    if not 0 <= mode < NUM_MODES:
        raise ValueError(f"intra mode must be in [0, 66], got {mode}")
    return mode


def is_angular(mode: int) -> bool:
    return _check_mode(mode) >= 2


# ------------------------------------------------------------ mode classes


def mode_to_class(mode: int) -> int:
    """Angular mode -> one of 9 contiguous classes."""
    mode = _check_mode(mode)
    if mode < 2:
        raise ValueError(f"mode {mode} is not angular")
    return (NUM_CLASSES * (mode - 2)) // NUM_ANGULAR


def class_modes(cls: int) -> list[int]:
    if not 0 <= cls < NUM_CLASSES:
        raise ValueError(f"class must be in [0, 8], got {cls}")
    return _CLASS_MODES[cls]


_CLASS_MODES = [[m for m in ANGULAR_MODES if (NUM_CLASSES * (m - 2)) // NUM_ANGULAR == c]
                for c in range(NUM_CLASSES)]


# ------------------------------------------------------------- prediction


@dataclass(frozen=True)
class Prediction:
    mode: int
    samples: np.ndarray


@dataclass(frozen=True)
class Residual:
    mode: int
    values: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    best_mode: int
    best_class: int | None

    @property
    def one_hot(self) -> np.ndarray | None:
        if self.best_class is None:
            return None
        v = np.zeros(NUM_CLASSES)
        v[self.best_class] = 1.0
        return v

    @classmethod
    def from_mode(cls, mode: int) -> "GroundTruth":
        return cls(int(mode), mode_to_class(mode) if mode >= 2 else None)


def _ref_index(n: int, k: int, vertical: bool, inv_angle: int) -> int:
    """Position in the unified reference vector of main-reference index ``k``.

    Unified layout: [corner, top 1..2N, left 0..2N-1].
    """
    def top(i):
        return min(max(i, 0), 2 * n)

    def side(j):
        j = min(max(j, 0), 2 * n)
        return 0 if j == 0 else 2 * n + j

    if k >= 0:
        return top(k) if vertical else side(k)
    proj = (k * inv_angle + 256) >> 9
    return side(proj) if vertical else top(proj)


@lru_cache(maxsize=None)
def _angular_tables(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gather indices and weights for all 65 angular modes at block size n.

    Returns (idx0, idx1, frac), each shaped (65, n, n), so that
    pred = ((32 - frac) * u[idx0] + frac * u[idx1] + 16) >> 5.
    """
    idx0 = np.zeros((NUM_ANGULAR, n, n), dtype=np.intp)
    idx1 = np.zeros_like(idx0)
    frac = np.zeros((NUM_ANGULAR, n, n), dtype=np.int64)
    for mi, mode in enumerate(ANGULAR_MODES):
        angle = INTRA_PRED_ANGLE[mode]
        vertical = mode >= 34
        inv_angle = round(512 * 32 / angle) if angle else 0
        for a in range(n):          # a: row for vertical modes, column otherwise
            pos = (a + 1) * angle
            i_idx, i_fact = pos >> 5, pos & 31
            for b in range(n):
                k0 = b + i_idx + 1
                u0 = _ref_index(n, k0, vertical, inv_angle)
                u1 = _ref_index(n, k0 + 1, vertical, inv_angle) if i_fact else u0
                if vertical:
                    y, x = a, b
                else:
                    y, x = b, a
                idx0[mi, y, x] = u0
                idx1[mi, y, x] = u1
                frac[mi, y, x] = i_fact
    for arr in (idx0, idx1, frac):
        arr.setflags(write=False)
    return idx0, idx1, frac


@lru_cache(maxsize=None)
def _planar_weights(n: int) -> np.ndarray:
    """(4n+1, n*n) integer weights so that u @ W is the unrounded Planar sum."""
    w = np.zeros((4 * n + 1, n, n))
    ys = np.arange(n)[:, None]
    xs = np.arange(n)[None, :]
    for x in range(n):
        w[1 + x, :, x] += (n - 1 - ys[:, 0])           # top
    for y in range(n):
        w[2 * n + 1 + y, y, :] += (n - 1 - xs[0])       # left
    w[n + 1] += xs + 1 + 0 * ys                         # top-right
    w[3 * n + 1] += ys + 1 + 0 * xs                     # bottom-left
    w = w.reshape(4 * n + 1, n * n)
    w.setflags(write=False)
    return w


def _planar(n: int, u: np.ndarray) -> np.ndarray:
    """Planar prediction for unified reference rows ``u`` of shape (B, 4n+1)."""
    # integer sums stay far below 2**53, so the float product and the
    # power-of-two scaling are exact
    acc = u.astype(np.float64) @ _planar_weights(n) + n
    return np.floor(acc * 2.0 ** -n.bit_length()).astype(np.int64).reshape(len(u), n, n)


def _dc(n: int, u: np.ndarray) -> np.ndarray:
    total = u[:, 1:n + 1].sum(axis=1) + u[:, 2 * n + 1:3 * n + 1].sum(axis=1)
    dc = (total + n) >> n.bit_length()
    return np.broadcast_to(dc[:, None, None], (len(u), n, n))


def predict_batch(units: np.ndarray, modes) -> np.ndarray:
    """Predictions of several modes for several blocks.

    ``units`` holds unified reference vectors, shape (B, 4n+1); the result is
    (B, len(modes), n, n) int64. Every predictor is a rounded convex
    combination of reference samples, so results stay within [0, 255]
    without clipping.
    """
    u = np.asarray(units, dtype=np.int64)
    n = (u.shape[1] - 1) // 4
    modes = [_check_mode(m) for m in modes]
    out = np.empty((len(u), len(modes), n, n), dtype=np.int64)
    copy = [i for i, m in enumerate(modes) if m >= 2 and INTRA_PRED_ANGLE[m] % 32 == 0]
    interp = [i for i, m in enumerate(modes) if m >= 2 and INTRA_PRED_ANGLE[m] % 32]
    if copy or interp:
        idx0, idx1, frac = _angular_tables(n)
    if copy:
        # whole-sample displacement: no interpolation needed
        out[:, copy] = u[:, idx0[[modes[i] - 2 for i in copy]]]
    if interp:
        sel = np.array([modes[i] - 2 for i in interp])
        f = frac[sel]
        out[:, interp] = ((32 - f) * u[:, idx0[sel]] + f * u[:, idx1[sel]] + 16) >> 5
    for i, m in enumerate(modes):
        if m == PLANAR:
            out[:, i] = _planar(n, u)
        elif m == DC:
            out[:, i] = _dc(n, u)
    return out


def predict_modes(refs: ReferenceSamples, modes) -> np.ndarray:
    """Predictions for several modes of one block, shape (len(modes), n, n), int64."""
    return predict_batch(refs.unified()[None], modes)[0]


def predict(size: int, refs: ReferenceSamples, mode: int) -> Prediction:
    if refs.size != size:
        raise ValueError("reference samples do not match block size")
    return Prediction(_check_mode(mode), predict_modes(refs, [mode])[0])


def residual(pred: Prediction, block: LumaBlock) -> Residual:
    """Res = Pred - B."""
    if pred.samples.shape != block.samples.shape:
        raise ValueError("prediction and block sizes differ")
    return Residual(pred.mode, pred.samples.astype(np.int64) - block.samples.astype(np.int64))


# ------------------------------------------------------------------ costs


def hadamard_matrix(n: int) -> np.ndarray:
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


_H4 = hadamard_matrix(4)
_H8 = hadamard_matrix(8)


def lagrange_multiplier(qp: int) -> float:
    return 0.57 * 2.0 ** ((qp - 12) / 3.0)


def quant_step(qp: int) -> float:
    return 2.0 ** ((qp - 4) / 6.0)


def satd_values(res: np.ndarray) -> np.ndarray:
    """Hadamard SATD of one or more residual blocks (..., n, n)."""
    res = np.asarray(res, dtype=np.int64)
    n = res.shape[-1]
    if n == 4:
        t = _H4 @ res @ _H4
        return np.abs(t).sum(axis=(-2, -1))
    lead = res.shape[:-2]
    tiles = res.reshape(*lead, n // 8, 8, n // 8, 8).swapaxes(-3, -2)
    t = _H8 @ tiles @ _H8
    return np.abs(t).sum(axis=(-4, -3, -2, -1))


def satd_cost(res: Residual, mode: int, qp: int = 32) -> float:
    """Hadamard cost plus sqrt(lambda) * mode bits, the usual RMD form."""
    _check_mode(mode)
    return float(satd_values(res.values)) + np.sqrt(lagrange_multiplier(qp)) * MODE_SIGNAL_BITS


@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows are frequencies."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def rdo_costs(block: LumaBlock, refs: ReferenceSamples, modes, qp: int) -> np.ndarray:
    """RDO-proxy cost D + lambda * nnz for each mode.

    Reconstruction is floating-point and unclipped, so the pixel-domain SSE
    equals the coefficient-domain quantization error of the orthonormal DCT.
    """
    if not 0 <= qp <= 51:
        raise ValueError("qp must be in [0, 51]")
    preds = predict_modes(refs, modes)
    res = (preds - block.samples.astype(np.int64)).astype(np.float64)
    d = dct_matrix(block.size)
    coeffs = d @ res @ d.T
    step = quant_step(qp)
    levels = np.round(coeffs / step)
    dist = ((coeffs - levels * step) ** 2).sum(axis=(-2, -1))
    nnz = np.count_nonzero(levels, axis=(-2, -1))
    return dist + lagrange_multiplier(qp) * nnz


def rdo_proxy_cost(block: LumaBlock, refs: ReferenceSamples, mode: int, qp: int) -> float:
    return float(rdo_costs(block, refs, [mode], qp)[0])


def label_block(block: LumaBlock, refs: ReferenceSamples, qp: int) -> GroundTruth:
    """Exhaustive 67-mode RDO-proxy search; ties go to the lowest mode index."""
    costs = rdo_costs(block, refs, range(NUM_MODES), qp)
    return GroundTruth.from_mode(int(np.argmin(costs)))
