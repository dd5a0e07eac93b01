"""End-to-end orchestration: proposal caching, training loops, evaluation,
part extraction, part-model fine-tuning and probability ensembling.

Because the upstream feature maps are fixed inputs here, every sample's
proposals and pooled RoI features are computed once and reused across
epochs; only the head parameters change during training.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import GapClassifier
from .config import TrainConfig
from .data import Sample
from .dpp import AnchorSpec, proposals_for_map, subsample_anchor_spec
from .errors import ConfigError, UsageError
from .head import (HeadParams, head_backward, head_forward, init_head_params,
                   stack_features)
from .roi import roi_max_pool
from .tensor import SeededRng
from .train import LossConfig, OptimState, SvbConfig, bce_loss, lr_schedule, sgd_step

__all__ = ["CachedSample", "PartExtraction", "TrainResult", "anchor_spec_for",
           "ensemble_predict", "evaluate_image_model", "evaluate_partnet",
           "extract_parts", "fine_tune_part_models", "predict_image_probs",
           "prepare_sample", "prepare_samples", "train_image_model",
           "train_partnet"]


@dataclass
class CachedSample:
    """A sample with its proposals and pooled features frozen."""

    sample: Sample
    proposals: list
    pooled: np.ndarray    # (R, N, m, m) pooled RoI volumes
    features: np.ndarray  # (N*m*m, R) stacked feature columns

    @property
    def label(self) -> int:
        return self.sample.label


def anchor_spec_for(config: TrainConfig) -> AnchorSpec:
    return subsample_anchor_spec(AnchorSpec.default(), config.boxes_per_anchor)


def prepare_sample(sample: Sample, config: TrainConfig,
                   spec: AnchorSpec | None = None,
                   flip: bool = False) -> CachedSample:
    """Run proposals and RoI pooling once for a sample.

    ``flip`` mirrors the map along the width axis first (the horizontal
    flip used for augmentation).
    """
    spec = spec or anchor_spec_for(config)
    data = sample.feature_map.data
    if flip:
        data = np.ascontiguousarray(data[:, ::-1, :])
    proposals = proposals_for_map(data, config.cells, spec)
    pooled = np.stack([
        roi_max_pool(data, prop, config.pool_size).values for prop in proposals
    ])
    features = pooled.reshape(len(proposals), -1).T.copy()
    return CachedSample(sample=sample, proposals=proposals, pooled=pooled,
                        features=features)


def prepare_samples(samples, config: TrainConfig, flip: bool = False):
    spec = anchor_spec_for(config)
    return [prepare_sample(s, config, spec, flip) for s in samples]


@dataclass
class TrainResult:
    params: HeadParams
    log_rows: list = field(default_factory=list)
    final_loss: float = float("nan")

    def log_csv(self) -> str:
        header = "epoch,step,loss,accuracy,lr_backbone,lr_head,svb_applied"
        lines = [header]
        for row in self.log_rows:
            lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row))
        return "\n".join(lines) + "\n"

    def log_checksum(self) -> str:
        return hashlib.sha256(self.log_csv().encode("utf-8")).hexdigest()


def _one_hot(label: int, classes: int) -> np.ndarray:
    target = np.zeros(classes)
    target[label] = 1.0
    return target


def train_partnet(cached, config: TrainConfig,
                  flipped=None) -> TrainResult:
    """Train the scoring head on prepared samples.

    Batch gradients are averaged over the batch. When flip augmentation
    is on, each sample independently uses its mirrored variant with
    probability 1/2 per epoch. SVB projection, when enabled, runs at the
    end of every ``svb_period``-th epoch and is flagged on that epoch's
    last log row.
    """
    if not cached:
        raise UsageError("no training samples")
    if config.flip_augment and (flipped is None or len(flipped) != len(cached)):
        raise UsageError("flip augmentation needs the mirrored sample cache")
    rng = SeededRng(config.seed)
    init_rng = rng.split(1)
    shuffle_rng = rng.split(2)
    flip_rng = rng.split(3)
    feature_dim = cached[0].features.shape[0]
    params = init_head_params(config.classes, config.part_detectors,
                              feature_dim, config.hidden_width, init_rng)
    param_dict = params.as_dict()
    state = OptimState(momentum=config.momentum)
    loss_config = LossConfig(weight_decay=config.weight_decay,
                             clamp_eps=config.clamp_eps)
    svb = SvbConfig(epsilon=config.svb_epsilon,
                    period_epochs=config.svb_period) if config.svb_enabled else None

    rows = []
    step = 0
    last_loss = float("nan")
    for epoch in range(config.epochs):
        lr_backbone, lr_head = lr_schedule(epoch, config.lr_backbone,
                                           config.lr_head, config.lr_drop_epochs)
        order = shuffle_rng.permutation(len(cached))
        use_flip = (flip_rng.uniform(shape=(len(cached),)) < 0.5
                    if config.flip_augment else np.zeros(len(cached), dtype=bool))
        epoch_rows = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grads = {name: np.zeros_like(p) for name, p in param_dict.items()}
            batch_loss = 0.0
            hits = 0
            for idx in batch:
                entry = (flipped[idx] if use_flip[idx] else cached[idx])
                cache = head_forward(entry.features, params,
                                     degenerate=config.degenerate)
                probs = cache.scores.image_probs
                loss, _, d_probs = bce_loss(probs, _one_hot(entry.label,
                                                            config.classes),
                                            param_dict, loss_config)
                batch_loss += loss
                hits += int(np.argmax(probs) == entry.label)
                back = head_backward(d_probs, cache, params)
                for name in grads:
                    grads[name] += back.params[name]
            for name in grads:
                grads[name] /= len(batch)
            sgd_step(param_dict, grads, state, lr_head, config.weight_decay)
            step += 1
            last_loss = batch_loss / len(batch)
            epoch_rows.append([epoch, step, last_loss, hits / len(batch),
                               lr_backbone, lr_head, 0])
        if svb is not None and (epoch + 1) % svb.period_epochs == 0:
            svb.apply(param_dict)
            if epoch_rows:
                epoch_rows[-1][-1] = 1
        rows.extend(epoch_rows)
    return TrainResult(params=params, log_rows=rows, final_loss=last_loss)


def predict_image_probs(params: HeadParams, entry: CachedSample,
                        degenerate: bool = False) -> np.ndarray:
    return head_forward(entry.features, params,
                        degenerate=degenerate).scores.image_probs


def evaluate_partnet(params: HeadParams, cached, classes: int,
                     degenerate: bool = False):
    """Top-1 accuracy and a (true, predicted) confusion matrix."""
    confusion = np.zeros((classes, classes), dtype=np.int64)
    hits = 0
    for entry in cached:
        pred = int(np.argmax(predict_image_probs(params, entry, degenerate)))
        confusion[entry.label, pred] += 1
        hits += int(pred == entry.label)
    return hits / len(cached), confusion


def train_image_model(samples, config: TrainConfig,
                      with_log: bool = False):
    """Train the GAP classifier on whole feature maps.

    Returns the classifier, or (classifier, log_rows) when ``with_log``
    is set; log rows share the head trainer's CSV schema with one row
    per epoch.
    """
    rng = SeededRng(config.seed).split(11)
    clf = GapClassifier.init(config.classes, config.channels, rng.split(1))
    shuffle_rng = rng.split(2)
    state = OptimState(momentum=config.momentum)
    loss_config = LossConfig(weight_decay=config.weight_decay,
                             clamp_eps=config.clamp_eps)
    inputs = [s.feature_map.data for s in samples]
    labels = [s.label for s in samples]
    rows = []
    for epoch in range(config.epochs):
        lr_backbone, lr_head = lr_schedule(epoch, config.lr_backbone,
                                           config.lr_head,
                                           config.lr_drop_epochs)
        order = shuffle_rng.permutation(len(samples))
        loss = clf.train_epoch(inputs, labels, order, config.batch_size,
                               state, lr_head, loss_config)
        if with_log:
            accuracy = evaluate_image_model(clf, samples)
            rows.append([epoch, epoch + 1, loss, accuracy, lr_backbone,
                         lr_head, 0])
    return (clf, rows) if with_log else clf


def evaluate_image_model(clf: GapClassifier, samples) -> float:
    hits = sum(int(np.argmax(clf.predict(s.feature_map.data))) == s.label
               for s in samples)
    return hits / len(samples)


@dataclass
class PartExtraction:
    """Per-detector proposal rankings of one sample.

    ``ranked[p]`` holds (proposal_index, score) pairs sorted by
    descending detector score, ties broken by the lower proposal index.
    """

    proposals: list
    ranked: list
    stride: int
    top_m: int

    def top1_box(self, detector: int):
        return self.proposals[self.ranked[detector][0][0]]

    def records(self):
        """JSON-ready dicts, one per detector."""
        out = []
        for det, entries in enumerate(self.ranked):
            rec = {"detector": det, "top": []}
            for idx, score in entries:
                prop = self.proposals[idx]
                rec["top"].append({
                    "proposal_index": int(idx),
                    "score": float(score),
                    "feature_box": [prop.x0, prop.y0, prop.x1, prop.y1],
                    "image_box": list(prop.image_box(self.stride)),
                })
            out.append(rec)
        return out


def extract_parts(params: HeadParams, entry: CachedSample, top_m: int,
                  degenerate: bool = False) -> PartExtraction:
    """Rank proposals by each reduced detector row; keep the top M."""
    num_r = entry.features.shape[1]
    if top_m > num_r:
        raise ConfigError(f"top_m={top_m} exceeds proposal count {num_r}")
    scores = head_forward(entry.features, params,
                          degenerate=degenerate).scores.reduced_det
    ranked = []
    for det_row in scores:
        order = np.argsort(-det_row, kind="stable")[:top_m]
        ranked.append([(int(i), float(det_row[i])) for i in order])
    return PartExtraction(proposals=entry.proposals, ranked=ranked,
                          stride=entry.sample.feature_map.stride, top_m=top_m)


def fine_tune_part_models(params: HeadParams, image_model: GapClassifier,
                          cached, config: TrainConfig):
    """One fine-tuned classifier copy per part detector.

    Detector p's training set is, for every sample, the pooled volumes of
    its top-M proposals under detector p, labeled with the sample label.
    """
    if not cached:
        raise UsageError("no samples to fine-tune on")
    top_m = min(config.top_m, cached[0].features.shape[1])
    crops_per_detector = [[] for _ in range(config.part_detectors)]
    labels_per_detector = [[] for _ in range(config.part_detectors)]
    for entry in cached:
        extraction = extract_parts(params, entry, top_m,
                                   degenerate=config.degenerate)
        for det in range(config.part_detectors):
            for idx, _ in extraction.ranked[det]:
                crops_per_detector[det].append(entry.pooled[idx])
                labels_per_detector[det].append(entry.label)
    models = []
    loss_config = LossConfig(weight_decay=config.weight_decay,
                             clamp_eps=config.clamp_eps)
    for det in range(config.part_detectors):
        if not crops_per_detector[det]:
            raise UsageError(f"detector {det} extracted no crops")
        model = image_model.copy()
        state = OptimState(momentum=config.momentum)
        shuffle_rng = SeededRng(config.seed).split(100 + det)
        for epoch in range(config.epochs):
            _, lr_head = lr_schedule(epoch, config.lr_backbone, config.lr_head,
                                     config.lr_drop_epochs)
            order = shuffle_rng.permutation(len(crops_per_detector[det]))
            model.train_epoch(crops_per_detector[det], labels_per_detector[det],
                              order, config.batch_size, state, lr_head,
                              loss_config)
        models.append(model)
    return models


def ensemble_predict(prob_vectors) -> np.ndarray:
    """Arithmetic mean of class-probability vectors."""
    if not prob_vectors:
        raise UsageError("nothing to ensemble")
    first = np.asarray(prob_vectors[0], dtype=np.float64)
    out = np.zeros_like(first)
    for vec in prob_vectors:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != first.shape:
            raise UsageError(
                f"ensemble member shape {vec.shape} != {first.shape}"
            )
        out += vec
    return out / len(prob_vectors)
