"""Scene-level encoding replay with learned candidate lists, plus dataset and report tooling.

Per block the fast path is: score -> candidate list -> RMD on Planar, DC and
the even angular candidates -> RMD on the best angular mode +/- 1 -> RDO on the
R cheapest RMD modes -> pick the lowest RDO cost. The exhaustive baseline runs
RDO on all 67 modes and doubles as the ground-truth oracle.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import (CODE_VALUES, X2_LEN, causal_neighbors, concat_features_batch, extract_x2,
                       neighbor_code_index, pca_apply)
from .intra import (DC, MODE_SIGNAL_BITS, NUM_ANGULAR, NUM_CLASSES, NUM_MODES, PLANAR, label_block,
                    lagrange_multiplier, mode_to_class, predict_modes, rdo_costs, satd_values)
from .media import LumaBlock, LumaFrame, ReferenceSamples, gather_reference_samples, partition_grid
from .mlp import TrainConfig, forward_batch, softmax
from .strategy import (ONLINE_EPOCHS, MissingModelError, StrategyBundle, StrategyKind, candidate_list, train_mixed,
                       train_online)

TRAINING_QPS = (15, 25, 35, 45)
CSV_COLUMNS = ("scene", "strategy", "block_size", "qp", "tau", "k", "r", "blocks", "accuracy_pct",
               "mode_reduction_pct", "train_ms", "infer_ms", "search_ms", "overhead_pct")


@dataclass(frozen=True)
class EncodeParams:
    strategy: StrategyKind = StrategyKind.OFFLINE
    tau: float = 0.7
    k: int = 2
    r: int = 2
    qp: int = 32
    block_size: int = 16

    def __post_init__(self):
        object.__setattr__(self, "strategy", StrategyKind(self.strategy))
        if not 0 < self.tau < 1:
            raise ValueError("tau must be in (0, 1)")
        if not 1 <= self.k <= 9:
            raise ValueError("k must be in [1, 9]")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if not 0 <= self.qp <= 51:
            raise ValueError("qp must be in [0, 51]")


@dataclass
class BlockDecision:
    frame: int
    row: int
    col: int
    mode_classes: tuple[int, ...]
    rmd_modes: tuple[int, ...]
    rdo_modes: tuple[int, ...]
    chosen: int
    oracle: int
    hit: bool
    baseline: bool = False

    @property
    def angular_evaluated(self) -> int:
        return sum(1 for m in self.rmd_modes if m >= 2)


def _reduction(decisions) -> float:
    if not decisions:
        return 0.0
    return 100.0 * float(np.mean([1.0 - d.angular_evaluated / NUM_ANGULAR for d in decisions]))


def _accuracy(decisions) -> float:
    if not decisions:
        return 0.0
    return 100.0 * sum(d.hit for d in decisions) / len(decisions)


@dataclass
class SceneReport:
    scene: str
    strategy: str
    params: EncodeParams
    decisions: list[BlockDecision] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def blocks(self) -> int:
        return len(self.decisions)

    @property
    def accuracy_pct(self) -> float:
        return _accuracy(self.decisions)

    @property
    def mode_reduction_pct(self) -> float:
        return _reduction(self.decisions)

    def metrics(self, min_frame: int = 0) -> dict[str, float]:
        """Accuracy / mode reduction restricted to frames >= ``min_frame``."""
        sel = [d for d in self.decisions if d.frame >= min_frame]
        return {"blocks": len(sel), "accuracy_pct": _accuracy(sel), "mode_reduction_pct": _reduction(sel)}

    @property
    def overhead_pct(self) -> float:
        t = self.timings
        total = t.get("total_ms", 0.0)
        if not total:
            return 0.0
        return 100.0 * (t.get("train_ms", 0.0) + t.get("infer_ms", 0.0) + t.get("feature_ms", 0.0)) / total


# ------------------------------------------------------------- scene prep


@dataclass
class PreparedFrame:
    index: int
    rows: int
    cols: int
    blocks: list[LumaBlock]
    refs: list[ReferenceSamples]


def prepare_frames(frames: Sequence[LumaFrame], block_size: int) -> list[PreparedFrame]:
    out = []
    for i, f in enumerate(frames):
        blocks = partition_grid(f, block_size)
        refs = [gather_reference_samples(f, b) for b in blocks]
        out.append(PreparedFrame(i, f.height // block_size, f.width // block_size, blocks, refs))
    return out


def label_frames(prepared: Sequence[PreparedFrame], qp: int) -> list[np.ndarray]:
    """Oracle best mode of every block, as one (rows, cols) grid per frame."""
    grids = []
    for pf in prepared:
        modes = [label_block(b, r, qp).best_mode for b, r in zip(pf.blocks, pf.refs)]
        grids.append(np.array(modes, dtype=np.int64).reshape(pf.rows, pf.cols))
    return grids


def x2_grid(grid: np.ndarray) -> np.ndarray:
    """x2 of every block given fully decided neighbour modes -> (rows, cols, 4)."""
    rows, cols = grid.shape
    out = np.empty((rows, cols, X2_LEN))
    for r in range(rows):
        for c in range(cols):
            out[r, c] = extract_x2(*causal_neighbors(grid, r, c))
    return out


# ----------------------------------------------------------------- search


def search_block(block: LumaBlock, refs: ReferenceSamples, candidates: Iterable[int], r: int, qp: int
                 ) -> tuple[tuple[int, ...], tuple[int, ...], int]:
    """RMD over Planar/DC/even angular candidates plus +/-1 refinement, then RDO on the R best.

    Returns (RMD-evaluated modes, RDO modes, chosen mode).
    """
    orig = block.samples.astype(np.int64)
    bits_term = np.sqrt(lagrange_multiplier(qp)) * MODE_SIGNAL_BITS
    first = sorted({PLANAR, DC} | {m for m in candidates if m >= 2 and m % 2 == 0})
    costs = dict(zip(first, satd_values(predict_modes(refs, first) - orig) + bits_term))
    angular = [m for m in first if m >= 2]
    if angular:
        best = min(angular, key=lambda m: (costs[m], m))
        extra = [m for m in (best - 1, best + 1) if 2 <= m < NUM_MODES and m not in costs]
        if extra:
            costs.update(zip(extra, satd_values(predict_modes(refs, extra) - orig) + bits_term))
    ranked = sorted(costs, key=lambda m: (costs[m], m))
    rdo = tuple(sorted(ranked[:min(r, len(ranked))]))
    rd = rdo_costs(block, refs, rdo, qp)
    chosen = min(zip(rd, rdo))[1]
    return tuple(sorted(costs)), rdo, int(chosen)


# ------------------------------------------------------------------ scene


class _Timer:
    def __init__(self):
        self.acc: dict[str, float] = {}

    def add(self, key: str, start: float) -> float:
        now = time.perf_counter()
        self.acc[key] = self.acc.get(key, 0.0) + (now - start) * 1e3
        return now


@dataclass
class SceneState:
    """Scene after the Algorithm-1 preamble: trained bundle and first-frame baseline."""

    prepared: list[PreparedFrame]
    oracle: list[np.ndarray]
    bundle: StrategyBundle
    baseline_frames: int
    baseline_decisions: list[BlockDecision]
    timings: dict[str, float]


def _baseline_decisions(pf: PreparedFrame, grid: np.ndarray) -> list[BlockDecision]:
    all_modes = tuple(range(NUM_MODES))
    out = []
    for i, m in enumerate(grid.ravel()):
        r, c = divmod(i, pf.cols)
        out.append(BlockDecision(pf.index, r, c, (), all_modes, all_modes, int(m), int(m), True, True))
    return out


def _x1_frame(pf: PreparedFrame, bundle: StrategyBundle, size: int) -> np.ndarray:
    return pca_apply(concat_features_batch(pf.blocks, pf.refs), bundle.pca[size])


def prepare_scene(frames: Sequence[LumaFrame], bundle: StrategyBundle, params: EncodeParams,
                  oracle: list[np.ndarray] | None = None, seed: int = 0,
                  hidden: dict | None = None) -> SceneState:
    """Frame preparation and, for online/mixed, baseline coding plus training on frame 0."""
    if not frames:
        raise ValueError("empty scene")
    if bundle.kind is not params.strategy:
        bundle = bundle.with_kind(params.strategy)
    size = params.block_size
    if bundle.needs_x1 and (size not in bundle.offline or size not in bundle.pca):
        raise MissingModelError(f"no offline model/PCA for block size {size}")
    if not bundle.needs_x2:
        bundle.check_ready(size)
    timer = _Timer()
    t = time.perf_counter()
    prepared = prepare_frames(frames, size)
    t = timer.add("search_ms", t)
    if oracle is None:
        oracle = label_frames(prepared, params.qp)
        t = time.perf_counter()   # oracle labelling is measurement, not encoding

    baseline_decisions: list[BlockDecision] = []
    baseline_frames = 0
    if bundle.needs_x2:
        pf0 = prepared[0]
        grid0 = label_frames([pf0], params.qp)[0]
        baseline_decisions = _baseline_decisions(pf0, grid0)
        baseline_frames = 1
        t = timer.add("baseline_ms", t)
        x2 = x2_grid(grid0).reshape(-1, X2_LEN)
        modes = grid0.ravel()
        keep = modes >= 2
        labels = np.array([mode_to_class(m) for m in modes[keep]], dtype=np.intp)
        t = timer.add("feature_ms", t)
        bundle = bundle.with_kind(params.strategy)
        cfg = TrainConfig(max_epochs=ONLINE_EPOCHS, rng_seed=seed)
        hidden = hidden or {}
        if len(labels) >= 2:
            kw = {"hidden_width": hidden[StrategyKind.ONLINE]} if StrategyKind.ONLINE in hidden else {}
            bundle.online[size], _ = train_online(x2[keep], labels, cfg, **kw)
            t = timer.add("train_ms", t)
            if bundle.kind is StrategyKind.MIXED:
                x1 = _x1_frame(pf0, bundle, size)[keep]
                t = timer.add("feature_ms", t)
                kw = {"hidden_width": hidden[StrategyKind.MIXED]} if StrategyKind.MIXED in hidden else {}
                bundle.mixed[size], _ = train_mixed(bundle.offline[size], bundle.online[size], x1, x2[keep],
                                                    labels, cfg, **kw)
                t = timer.add("train_ms", t)
        else:
            bundle.online.pop(size, None)
            bundle.mixed.pop(size, None)
        bundle.check_ready(size)
    return SceneState(prepared, oracle, bundle, baseline_frames, baseline_decisions, dict(timer.acc))


def wavefronts(rows: int, cols: int) -> list[list[int]]:
    """Raster block indices grouped by ``col + 2 * row``.

    The L, UL, U and UR neighbours of a block all lie on earlier fronts, so
    the blocks of one front can be scored together.
    """
    fronts: list[list[int]] = [[] for _ in range(cols + 2 * (rows - 1))] if rows and cols else []
    for i in range(rows * cols):
        r, c = divmod(i, cols)
        fronts[c + 2 * r].append(i)
    return fronts


def _online_table(model) -> np.ndarray:
    """Online scores for every (L, UL, U, UR) code combination, row = base-12 code index."""
    k = len(CODE_VALUES)
    idx = np.indices((k,) * X2_LEN).reshape(X2_LEN, -1).T
    return forward_batch(model, CODE_VALUES[idx])


def run_scene(state: SceneState, params: EncodeParams, scene_name: str = "scene") -> SceneReport:
    """Fast-path coding of every frame not covered by the baseline preamble."""
    bundle, size = state.bundle, params.block_size
    timer = _Timer()
    timer.acc.update(state.timings)
    decisions = list(state.baseline_decisions)
    kind = bundle.kind
    online = bundle.online.get(size)
    mixed = bundle.mixed.get(size)
    offline = bundle.offline.get(size)
    fused = kind is StrategyKind.MIXED and mixed is not None and online is not None
    use_online = kind is StrategyKind.ONLINE and online is not None
    needs_x1 = kind is StrategyKind.OFFLINE or not (use_online or fused)

    per_block = use_online or fused
    if per_block:
        # the neighbour codes take 12 values, so the online model is tabulated once
        t = time.perf_counter()
        online_table = _online_table(online)
        if fused:
            # first mixed layer split into its offline and online halves
            w1, b1 = mixed.hidden_weights, mixed.hidden_biases
            w1_off, w1_on = w1[:, :NUM_CLASSES], w1[:, NUM_CLASSES:]
            online_part = online_table @ w1_on.T
            w2t = np.ascontiguousarray(mixed.output_weights.T)
            b2 = mixed.output_biases
            # tanh keeps every logit within this bound; below it exp() cannot
            # overflow or underflow, so the max shift of softmax can be skipped
            bounded = float((np.abs(w2t).sum(axis=0) + np.abs(b2)).max()) < 700.0
        timer.add("infer_ms", t)

    for pf, oracle in zip(state.prepared[state.baseline_frames:], state.oracle[state.baseline_frames:]):
        t = time.perf_counter()
        yhat1 = None
        if needs_x1 or fused:
            x1 = _x1_frame(pf, bundle, size)
            t = timer.add("feature_ms", t)
            yhat1 = forward_batch(offline, x1)
            if fused:
                pre1 = yhat1 @ w1_off.T + b1
            t = timer.add("infer_ms", t)
        # neighbour code indices with a one-block unavailable border (left, top, right)
        codes = [[0] * (pf.cols + 2) for _ in range(pf.rows + 1)]
        frame_decisions: list[BlockDecision | None] = [None] * len(pf.blocks)
        for wave in wavefronts(pf.rows, pf.cols):
            if per_block:
                keys = []
                for i in wave:
                    row, col = divmod(i, pf.cols)
                    above = codes[row]
                    keys.append(((codes[row + 1][col] * 12 + above[col]) * 12 + above[col + 1]) * 12
                                + above[col + 2])
                t = timer.add("feature_ms", t)
                if fused:
                    hidden = pre1[wave]
                    hidden += online_part[keys]
                    np.tanh(hidden, out=hidden)
                    if bounded:
                        scores = hidden @ w2t
                        scores += b2
                        np.exp(scores, out=scores)
                        scores /= scores.sum(axis=1, keepdims=True)
                    else:
                        scores = softmax(hidden @ w2t + b2)
                else:
                    scores = online_table[keys]
                t = timer.add("infer_ms", t)
            else:
                scores = yhat1[wave]
            for i, yhat in zip(wave, scores):
                row, col = divmod(i, pf.cols)
                cand = candidate_list(yhat, params.tau, params.k)
                rmd, rdo, chosen = search_block(pf.blocks[i], pf.refs[i], cand.modes, params.r, params.qp)
                codes[row + 1][col + 1] = neighbor_code_index(chosen)
                best = int(oracle[row, col])
                frame_decisions[i] = BlockDecision(pf.index, row, col, cand.mode_classes, rmd, rdo, chosen, best,
                                                   best in rmd)
            t = timer.add("search_ms", t)
        decisions.extend(frame_decisions)

    timings = dict(timer.acc)
    timings["total_ms"] = sum(v for k, v in timings.items() if k.endswith("_ms"))
    return SceneReport(scene_name, kind.value, params, decisions, timings)


def encode_scene(frames: Sequence[LumaFrame], bundle: StrategyBundle, params: EncodeParams,
                 oracle: list[np.ndarray] | None = None, scene_name: str = "scene", seed: int = 0) -> SceneReport:
    """Replay the fast intra coding loop over one scene."""
    state = prepare_scene(frames, bundle, params, oracle, seed)
    return run_scene(state, params, scene_name)


def baseline_encode(frames: Sequence[LumaFrame], qp: int, block_size: int, scene_name: str = "scene") -> SceneReport:
    """Exhaustive 67-mode RDO-proxy coding of every block."""
    params = EncodeParams(StrategyKind.OFFLINE, qp=qp, block_size=block_size)
    t = time.perf_counter()
    prepared = prepare_frames(frames, block_size)
    grids = label_frames(prepared, qp)
    decisions = [d for pf, g in zip(prepared, grids) for d in _baseline_decisions(pf, g)]
    ms = (time.perf_counter() - t) * 1e3
    return SceneReport(scene_name, "baseline", params, decisions, {"search_ms": ms, "total_ms": ms})


def sweep(frames: Sequence[LumaFrame], bundle: StrategyBundle, taus: Iterable[float], ks: Iterable[int],
          rs: Iterable[int] = (2,), strategy=None, qp: int = 32, block_size: int = 16,
          oracle: list[np.ndarray] | None = None, scene_name: str = "scene", seed: int = 0) -> list[SceneReport]:
    """One report per (tau, k, r); scene-trained models are shared across the grid."""
    taus, ks, rs = list(taus), list(ks), list(rs)
    if not (taus and ks and rs):
        raise ValueError("sweep grids must be non-empty")
    kind = StrategyKind(strategy or bundle.kind)
    base = EncodeParams(kind, taus[0], ks[0], rs[0], qp, block_size)
    state = prepare_scene(frames, bundle, base, oracle, seed)
    reports = []
    for tau in taus:
        for k in ks:
            for r in rs:
                reports.append(run_scene(state, EncodeParams(kind, tau, k, r, qp, block_size), scene_name))
    return reports


# ---------------------------------------------------------------- dataset


@dataclass
class Dataset:
    """Angular-labelled samples: 45 pooled features, x2 codes, class labels."""

    block_size: int
    concat: np.ndarray
    x2: np.ndarray
    labels: np.ndarray
    modes: np.ndarray
    qps: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def one_hot(self) -> np.ndarray:
        return np.eye(9)[self.labels]

    @classmethod
    def merge(cls, parts: Sequence["Dataset"]) -> "Dataset":
        sizes = {p.block_size for p in parts}
        if len(sizes) != 1:
            raise ValueError("cannot merge datasets of different block sizes")
        return cls(sizes.pop(), *(np.concatenate([getattr(p, f) for p in parts])
                                  for f in ("concat", "x2", "labels", "modes", "qps")))

    def to_dict(self) -> dict:
        return {"format_version": 1, "block_size": self.block_size, "concat": self.concat.tolist(),
                "x2": self.x2.tolist(), "labels": self.labels.tolist(), "modes": self.modes.tolist(),
                "qps": self.qps.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        if d.get("format_version") != 1:
            raise ValueError("unsupported dataset format version")
        return cls(int(d["block_size"]), np.asarray(d["concat"], dtype=np.float64).reshape(-1, 45),
                   np.asarray(d["x2"], dtype=np.float64).reshape(-1, X2_LEN),
                   np.asarray(d["labels"], dtype=np.intp), np.asarray(d["modes"], dtype=np.int64),
                   np.asarray(d["qps"], dtype=np.int64))


def extract_dataset(frames: Sequence[LumaFrame], qps: Iterable[int] = TRAINING_QPS, block_size: int = 16,
                    prepared: list[PreparedFrame] | None = None) -> Dataset:
    """One sample per (block, qp) whose oracle mode is angular."""
    prepared = prepared or prepare_frames(frames, block_size)
    concat = [concat_features_batch(pf.blocks, pf.refs) for pf in prepared]
    cols = {k: [] for k in ("concat", "x2", "labels", "modes", "qps")}
    for qp in qps:
        for pf, feats, grid in zip(prepared, concat, label_frames(prepared, qp)):
            modes = grid.ravel()
            keep = modes >= 2
            cols["concat"].append(feats[keep])
            cols["x2"].append(x2_grid(grid).reshape(-1, X2_LEN)[keep])
            cols["labels"].append(np.array([mode_to_class(m) for m in modes[keep]], dtype=np.intp))
            cols["modes"].append(modes[keep])
            cols["qps"].append(np.full(int(keep.sum()), qp, dtype=np.int64))
    if not cols["concat"]:
        return Dataset(block_size, np.zeros((0, 45)), np.zeros((0, X2_LEN)), np.zeros(0, np.intp),
                       np.zeros(0, np.int64), np.zeros(0, np.int64))
    return Dataset(block_size, *(np.concatenate(cols[k]) for k in ("concat", "x2", "labels", "modes", "qps")))


# ---------------------------------------------------------------- reports


def _row(rep: SceneReport, timings: bool) -> dict:
    p, t = rep.params, rep.timings
    row = {"scene": rep.scene, "strategy": rep.strategy, "block_size": p.block_size, "qp": p.qp,
           "tau": p.tau, "k": p.k, "r": p.r, "blocks": rep.blocks,
           "accuracy_pct": round(rep.accuracy_pct, 6), "mode_reduction_pct": round(rep.mode_reduction_pct, 6)}
    if timings:
        row.update(train_ms=round(t.get("train_ms", 0.0), 3), infer_ms=round(t.get("infer_ms", 0.0), 3),
                   search_ms=round(t.get("search_ms", 0.0), 3), overhead_pct=round(rep.overhead_pct, 6))
    else:
        row.update(train_ms=None, infer_ms=None, search_ms=None, overhead_pct=None)
    return row


def reports_to_csv(reports: Sequence[SceneReport], timings: bool = True) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        w.writerow(_row(rep, timings))
    return buf.getvalue()


def reports_to_json(reports: Sequence[SceneReport], timings: bool = True, per_block: bool = False) -> str:
    out = []
    for rep in reports:
        row = _row(rep, timings)
        if timings:
            row["timings_ms"] = {k: round(v, 3) for k, v in sorted(rep.timings.items())}
        if per_block:
            row["decisions"] = [asdict(d) for d in rep.decisions]
        out.append(row)
    return json.dumps(out, indent=1) + "\n"


def report_write(reports: Sequence[SceneReport], path, format: str = "csv", timings: bool = True,
                 per_block: bool = False) -> Path:
    path = Path(path)
    if format == "csv":
        text = reports_to_csv(reports, timings)
    elif format == "json":
        text = reports_to_json(reports, timings, per_block)
    else:
        raise ValueError(f"unknown report format {format!r}")
    path.write_text(text)
    return path
