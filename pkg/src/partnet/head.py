"""Two-stream scoring head: per-proposal classification and part detection.

Both streams are fc -> ReLU -> fc over stacked RoI feature vectors. The
classification stream normalizes each proposal's scores over C+1
categories (the extra row absorbs background); the detection stream
normalizes each proposal over P+1 part detectors and then re-normalizes
every detector row over the R proposals, which bounds the aggregated
scores to [0, 1]. Dropping both background rows, the image prediction is
the detector-count average y = (1/P) * S_cls' @ S_det'^T @ 1.

The backward pass is hand-derived through the whole chain and validated
against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UsageError
from .tensor import SeededRng, fc_forward, fc_grad, relu, relu_grad, softmax_rows, softmax_rows_grad

__all__ = ["HeadParams", "HeadCache", "ScoreMatrices", "head_backward",
           "head_forward", "init_head_params", "stack_features"]


@dataclass
class HeadParams:
    """Weights of the two fc stacks; hidden width is shared per stream."""

    cls_w1: np.ndarray  # (d_h, N*m*m)
    cls_b1: np.ndarray  # (d_h,)
    cls_w2: np.ndarray  # (C+1, d_h)
    cls_b2: np.ndarray  # (C+1,)
    det_w1: np.ndarray  # (d_h, N*m*m)
    det_b1: np.ndarray  # (d_h,)
    det_w2: np.ndarray  # (P+1, d_h)
    det_b2: np.ndarray  # (P+1,)

    def as_dict(self) -> dict:
        """Insertion-ordered name -> array view of all eight parameters."""
        return {
            "cls_w1": self.cls_w1, "cls_b1": self.cls_b1,
            "cls_w2": self.cls_w2, "cls_b2": self.cls_b2,
            "det_w1": self.det_w1, "det_b1": self.det_b1,
            "det_w2": self.det_w2, "det_b2": self.det_b2,
        }

    @property
    def num_categories(self) -> int:
        return self.cls_w2.shape[0] - 1

    @property
    def num_detectors(self) -> int:
        return self.det_w2.shape[0] - 1

    @property
    def feature_dim(self) -> int:
        return self.cls_w1.shape[1]


@dataclass
class ScoreMatrices:
    """All score matrices of one forward pass.

    cat_probs has column sums 1 over C+1 categories; part_probs has
    column sums 1 over P+1 detectors; proposal_weights has row sums 1
    over the R proposals. image_probs is the length-C prediction.
    """

    cat_probs: np.ndarray         # (C+1, R)
    part_probs: np.ndarray        # (P+1, R)
    proposal_weights: np.ndarray  # (P+1, R)
    image_probs: np.ndarray       # (C,)

    @property
    def reduced_cat(self) -> np.ndarray:
        return self.cat_probs[:-1]

    @property
    def reduced_det(self) -> np.ndarray:
        return self.proposal_weights[:-1]


@dataclass
class HeadCache:
    """Forward intermediates needed by head_backward."""

    features: np.ndarray
    cls_pre1: np.ndarray
    cls_act1: np.ndarray
    det_pre1: np.ndarray | None
    det_act1: np.ndarray | None
    scores: ScoreMatrices
    degenerate: bool = False


def init_head_params(num_categories: int, num_detectors: int, feature_dim: int,
                     hidden: int, rng: SeededRng) -> HeadParams:
    """Uniform(-1, 1)/sqrt(fan_in) weights, zero biases, one stream at a time."""

    def layer(rows: int, cols: int):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, (rows, cols)), np.zeros(rows)

    cls_w1, cls_b1 = layer(hidden, feature_dim)
    cls_w2, cls_b2 = layer(num_categories + 1, hidden)
    det_w1, det_b1 = layer(hidden, feature_dim)
    det_w2, det_b2 = layer(num_detectors + 1, hidden)
    return HeadParams(cls_w1, cls_b1, cls_w2, cls_b2,
                      det_w1, det_b1, det_w2, det_b2)


def stack_features(roi_features) -> np.ndarray:
    """Stack per-proposal feature vectors as the columns of a (D, R) matrix."""
    if not roi_features:
        raise UsageError("no RoI features to stack")
    return np.stack([rf.vector() for rf in roi_features], axis=1)


def _softmax_cols(x: np.ndarray) -> np.ndarray:
    return softmax_rows(x.T).T


def _softmax_cols_grad(upstream: np.ndarray, out: np.ndarray) -> np.ndarray:
    return softmax_rows_grad(upstream.T, out.T).T


def head_forward(features: np.ndarray, params: HeadParams,
                 degenerate: bool = False) -> HeadCache:
    """Run both streams on a (D, R) feature matrix and aggregate.

    With ``degenerate=True`` the detection stream is skipped and every
    reduced detector weight is the constant 1/R, which turns the
    aggregation into a plain proposal average of the category scores.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"features must be (D, R), got {features.shape}")
    if features.shape[0] != params.feature_dim:
        raise ShapeError(
            f"feature dim {features.shape[0]} does not match head "
            f"{params.feature_dim}"
        )
    num_r = features.shape[1]
    p = params.num_detectors

    cls_pre1 = fc_forward(features, params.cls_w1, params.cls_b1)
    cls_act1 = relu(cls_pre1)
    cls_logits = fc_forward(cls_act1, params.cls_w2, params.cls_b2)
    cat_probs = _softmax_cols(cls_logits)

    if degenerate:
        part_probs = np.full((p + 1, num_r), 1.0 / (p + 1))
        proposal_weights = np.full((p + 1, num_r), 1.0 / num_r)
        det_pre1 = det_act1 = None
    else:
        det_pre1 = fc_forward(features, params.det_w1, params.det_b1)
        det_act1 = relu(det_pre1)
        det_logits = fc_forward(det_act1, params.det_w2, params.det_b2)
        part_probs = _softmax_cols(det_logits)
        proposal_weights = softmax_rows(part_probs)

    image_probs = (cat_probs[:-1] @ proposal_weights[:-1].T).mean(axis=1)
    scores = ScoreMatrices(cat_probs=cat_probs, part_probs=part_probs,
                           proposal_weights=proposal_weights,
                           image_probs=image_probs)
    return HeadCache(features=features, cls_pre1=cls_pre1, cls_act1=cls_act1,
                     det_pre1=det_pre1, det_act1=det_act1, scores=scores,
                     degenerate=degenerate)


@dataclass
class HeadGradients:
    params: dict = field(default_factory=dict)  # name -> array, shapes mirror HeadParams
    features: np.ndarray | None = None          # (D, R)


def head_backward(d_image_probs: np.ndarray, cache: HeadCache,
                  params: HeadParams) -> HeadGradients:
    """Gradients of a scalar loss wrt all head parameters and the features.

    The two dropped background rows receive zero direct gradient but
    still pick up gradient through their softmax normalizers.
    """
    if cache is None or cache.scores is None:
        raise UsageError("head_backward needs the cache of a forward pass")
    scores = cache.scores
    c_plus_1, num_r = scores.cat_probs.shape
    p = params.num_detectors
    dy = np.asarray(d_image_probs, dtype=np.float64)
    if dy.shape != (c_plus_1 - 1,):
        raise UsageError(
            f"upstream gradient has shape {dy.shape}, expected {(c_plus_1 - 1,)}"
        )

    reduced_det = scores.proposal_weights[:-1]
    reduced_cat = scores.cat_probs[:-1]

    d_cat = np.zeros_like(scores.cat_probs)
    d_cat[:-1] = (1.0 / p) * dy[:, None] * reduced_det.sum(axis=0)[None, :]
    d_cls_logits = _softmax_cols_grad(d_cat, scores.cat_probs)
    d_cls_w2, d_cls_b2, d_cls_act1 = fc_grad(d_cls_logits, cache.cls_act1,
                                             params.cls_w2)
    d_cls_pre1 = relu_grad(d_cls_act1, cache.cls_pre1)
    d_cls_w1, d_cls_b1, d_feat = fc_grad(d_cls_pre1, cache.features,
                                         params.cls_w1)

    grads = {
        "cls_w1": d_cls_w1, "cls_b1": d_cls_b1,
        "cls_w2": d_cls_w2, "cls_b2": d_cls_b2,
    }

    if cache.degenerate:
        grads.update({
            "det_w1": np.zeros_like(params.det_w1),
            "det_b1": np.zeros_like(params.det_b1),
            "det_w2": np.zeros_like(params.det_w2),
            "det_b2": np.zeros_like(params.det_b2),
        })
    else:
        d_weights = np.zeros_like(scores.proposal_weights)
        d_weights[:-1] = np.tile((1.0 / p) * (dy @ reduced_cat), (p, 1))
        d_part = softmax_rows_grad(d_weights, scores.proposal_weights)
        d_det_logits = _softmax_cols_grad(d_part, scores.part_probs)
        d_det_w2, d_det_b2, d_det_act1 = fc_grad(d_det_logits, cache.det_act1,
                                                 params.det_w2)
        d_det_pre1 = relu_grad(d_det_act1, cache.det_pre1)
        d_det_w1, d_det_b1, d_feat_det = fc_grad(d_det_pre1, cache.features,
                                                 params.det_w1)
        d_feat = d_feat + d_feat_det
        grads.update({
            "det_w1": d_det_w1, "det_b1": d_det_b1,
            "det_w2": d_det_w2, "det_b2": d_det_b2,
        })

    return HeadGradients(params=grads, features=d_feat)
