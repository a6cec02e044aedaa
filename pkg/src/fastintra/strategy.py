"""Offline, online and mixed (late-fusion) mode-class models and the candidate-list rule."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import PcaModel
from .intra import DC, NUM_CLASSES, PLANAR, class_modes
from .mlp import (FORMAT_VERSION, MlpModel, ModelFormatError, TrainConfig, TrainHistory, VersionMismatchError,
                  forward_batch, model_from_dict, model_to_dict, train_classifier)

log = logging.getLogger(__name__)


class StrategyKind(str, enum.Enum):
    OFFLINE = "offline"
    ONLINE = "online"
    MIXED = "mixed"


DEFAULT_HIDDEN = {StrategyKind.OFFLINE: 4, StrategyKind.ONLINE: 2, StrategyKind.MIXED: 2}
OFFLINE_EPOCHS = 1000
ONLINE_EPOCHS = 100


class MissingModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class CandidateList:
    mode_classes: tuple[int, ...]
    modes: tuple[int, ...]

    @property
    def angular(self) -> tuple[int, ...]:
        return tuple(m for m in self.modes if m >= 2)


def ranked_classes(yhat) -> list[int]:
    """Classes by descending score, ties to the lower index."""
    y = np.asarray(yhat, dtype=np.float64)
    return sorted(range(NUM_CLASSES), key=lambda c: (-y[c], c))


def candidate_list(yhat, tau: float, k: int) -> CandidateList:
    """Single best class when its score reaches ``tau``, else the ``k`` best; Planar and DC always."""
    if not 0 < tau < 1:
        raise ValueError("tau must be in (0, 1)")
    if not 1 <= k <= NUM_CLASSES:
        raise ValueError("k must be in [1, 9]")
    order = ranked_classes(yhat)
    best = order[0]
    chosen = [best] if float(np.asarray(yhat)[best]) >= tau else order[:k]
    classes = tuple(sorted(chosen))
    modes = sorted({PLANAR, DC}.union(*(class_modes(c) for c in classes)))
    return CandidateList(classes, tuple(modes))


# ---------------------------------------------------------------- bundle


@dataclass
class StrategyBundle:
    """Per-block-size models. ``offline`` and ``pca`` come from offline training,
    ``online`` and ``mixed`` from the first frame of a scene."""

    kind: StrategyKind
    offline: dict[int, MlpModel] = field(default_factory=dict)
    pca: dict[int, PcaModel] = field(default_factory=dict)
    online: dict[int, MlpModel] = field(default_factory=dict)
    mixed: dict[int, MlpModel] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = StrategyKind(self.kind)

    @property
    def needs_x1(self) -> bool:
        return self.kind in (StrategyKind.OFFLINE, StrategyKind.MIXED)

    @property
    def needs_x2(self) -> bool:
        return self.kind in (StrategyKind.ONLINE, StrategyKind.MIXED)

    def check_ready(self, block_size: int) -> None:
        if self.needs_x1 and (block_size not in self.offline or block_size not in self.pca):
            raise MissingModelError(f"no offline model/PCA for block size {block_size}")
        if self.kind is StrategyKind.ONLINE and block_size not in self.online and block_size not in self.offline:
            raise MissingModelError(f"no online model for block size {block_size}")
        if self.kind is StrategyKind.MIXED and block_size not in self.mixed:
            log.debug("no mixed model for size %d, falling back to offline", block_size)

    def with_kind(self, kind) -> "StrategyBundle":
        return StrategyBundle(kind, dict(self.offline), dict(self.pca), dict(self.online), dict(self.mixed))


def score(bundle: StrategyBundle, block_size: int, x1=None, x2=None, yhat1=None) -> np.ndarray:
    """Class scores of one block (or a batch) under the bundle's strategy.

    ``yhat1`` may carry precomputed offline scores to skip the offline forward.
    Sizes without a scene-trained model fall back to the offline model.
    """
    kind = bundle.kind

    def offline_scores():
        if yhat1 is not None:
            return np.asarray(yhat1)
        if block_size not in bundle.offline or x1 is None:
            raise MissingModelError(f"offline model or x1 missing for size {block_size}")
        return forward_batch(bundle.offline[block_size], x1)

    if kind is StrategyKind.OFFLINE:
        return offline_scores()
    if kind is StrategyKind.ONLINE:
        if block_size in bundle.online:
            return forward_batch(bundle.online[block_size], x2)
        return offline_scores()
    if block_size not in bundle.mixed or block_size not in bundle.online:
        return offline_scores()
    y1 = offline_scores()
    y2 = forward_batch(bundle.online[block_size], x2)
    return forward_batch(bundle.mixed[block_size], np.concatenate([y1, y2], axis=-1))


# -------------------------------------------------------------- training


def train_offline(dataset: dict[int, tuple[np.ndarray, np.ndarray]], config: TrainConfig | None = None,
                  hidden_width: int = DEFAULT_HIDDEN[StrategyKind.OFFLINE]
                  ) -> tuple[dict[int, MlpModel], dict[int, TrainHistory]]:
    """One x1 -> class model per block size. ``dataset`` maps size -> (x1, class labels)."""
    config = config or TrainConfig(max_epochs=OFFLINE_EPOCHS)
    models, hists = {}, {}
    for size in sorted(dataset):
        x, y = dataset[size]
        if len(y) == 0:
            raise ValueError(f"empty offline dataset for block size {size}")
        models[size], hists[size] = train_classifier(x, y, hidden_width, config)
    return models, hists


def _warn_if_small(n: int, hidden_width: int, input_dim: int, what: str) -> None:
    n_params = hidden_width * (input_dim + 1) + NUM_CLASSES * (hidden_width + 1)
    if n < 10 * n_params:
        log.warning("%s model: %d samples for %d parameters", what, n, n_params)


def train_online(x2: np.ndarray, labels: np.ndarray, config: TrainConfig | None = None,
                 hidden_width: int = DEFAULT_HIDDEN[StrategyKind.ONLINE]) -> tuple[MlpModel, TrainHistory]:
    config = config or TrainConfig(max_epochs=ONLINE_EPOCHS)
    x2 = np.asarray(x2, dtype=np.float64)
    _warn_if_small(len(labels), hidden_width, x2.shape[1], "online")
    return train_classifier(x2, labels, hidden_width, config)


def fusion_inputs(offline: MlpModel, online: MlpModel, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """x3 = yhat1 || yhat2."""
    return np.concatenate([forward_batch(offline, x1), forward_batch(online, x2)], axis=-1)


def train_mixed(offline: MlpModel, online: MlpModel, x1: np.ndarray, x2: np.ndarray, labels: np.ndarray,
                config: TrainConfig | None = None,
                hidden_width: int = DEFAULT_HIDDEN[StrategyKind.MIXED]) -> tuple[MlpModel, TrainHistory]:
    """Late-fusion model over frozen upstream scores."""
    config = config or TrainConfig(max_epochs=ONLINE_EPOCHS)
    x3 = fusion_inputs(offline, online, x1, x2)
    _warn_if_small(len(labels), hidden_width, x3.shape[1], "mixed")
    return train_classifier(x3, labels, hidden_width, config)


# ----------------------------------------------------------- persistence


def save_bundle(bundle: StrategyBundle, path) -> None:
    entries = []
    for kind, models in ((StrategyKind.OFFLINE, bundle.offline), (StrategyKind.ONLINE, bundle.online),
                         (StrategyKind.MIXED, bundle.mixed)):
        for size in sorted(models):
            pca = bundle.pca.get(size) if kind is not StrategyKind.ONLINE else None
            entries.append(model_to_dict(models[size], kind.value, size, pca))
    doc = {"format_version": FORMAT_VERSION, "strategy": bundle.kind.value, "models": entries}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_bundle(path, kind=None) -> StrategyBundle:
    try:
        doc = json.loads(Path(path).read_text())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupted model file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported model format version {doc.get('format_version')!r}")
    entries = doc["models"] if "models" in doc else [doc]
    bundle = StrategyBundle(kind or doc.get("strategy") or StrategyKind.OFFLINE)
    for entry in entries:
        model, meta = model_from_dict(entry)
        size, strat = meta["block_size"], StrategyKind(meta["strategy"] or "offline")
        getattr(bundle, strat.value)[size] = model
        if meta["pca"] is not None:
            bundle.pca[size] = meta["pca"]
    return bundle
