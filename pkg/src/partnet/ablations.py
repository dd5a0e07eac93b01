"""Ablation studies on the synthetic task: detection-stream removal,
part-detector and proposal-count sweeps, singular value bounding, and
planted-patch localization scoring.

Each study regenerates its dataset per seed so results are reproducible
from the config alone.
"""

from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .data import SyntheticTaskSpec, gen_synthetic
from .errors import UsageError
from .pipeline import (evaluate_image_model, evaluate_partnet, extract_parts,
                       prepare_samples, train_image_model, train_partnet)

__all__ = ["ablate_detection_stream", "ablate_k_sweep", "ablate_p_sweep",
           "ablate_svb", "box_iou", "localization_hit_rate", "synthetic_split"]

_TRAIN_SEED_BASE = 1000
_TEST_SEED_BASE = 2000


def _task_spec(config: TrainConfig, per_class: int, seed: int) -> SyntheticTaskSpec:
    return SyntheticTaskSpec(
        classes=config.classes, channels=config.channels, width=config.width,
        height=config.height, patch_size=config.patch_size,
        signal_channels_per_class=config.signal_channels_per_class,
        noise_level=config.noise_level, samples_per_class=per_class,
        stride=config.stride, seed=seed)


def synthetic_split(config: TrainConfig, seed: int):
    """Disjoint train/test sample lists for one study seed."""
    train = gen_synthetic(_task_spec(config, config.train_per_class,
                                     _TRAIN_SEED_BASE + seed))
    test = gen_synthetic(_task_spec(config, config.test_per_class,
                                    _TEST_SEED_BASE + seed))
    return train, test


def _train_and_eval(config: TrainConfig, cached_train, cached_test) -> float:
    result = train_partnet(cached_train, config)
    accuracy, _ = evaluate_partnet(result.params, cached_test, config.classes,
                                   degenerate=config.degenerate)
    return accuracy


def ablate_detection_stream(config: TrainConfig, seeds):
    """Full model vs uniform detector weights vs whole-image classifier."""
    rows = []
    for seed in seeds:
        run = config.with_overrides(seed=seed, degenerate=False)
        train, test = synthetic_split(run, seed)
        cached_train = prepare_samples(train, run)
        cached_test = prepare_samples(test, run)
        acc_full = _train_and_eval(run, cached_train, cached_test)
        acc_degen = _train_and_eval(run.with_overrides(degenerate=True),
                                    cached_train, cached_test)
        image_model = train_image_model(train, run)
        acc_image = evaluate_image_model(image_model, test)
        rows.append({"seed": seed, "partnet": acc_full,
                     "degenerate": acc_degen, "image": acc_image})
    means = {key: float(np.mean([r[key] for r in rows]))
             for key in ("partnet", "degenerate", "image")}
    return {"rows": rows, "means": means}


def ablate_p_sweep(config: TrainConfig, seeds, values=(1, 3, 5, 10)):
    """Accuracy as the number of part detectors varies."""
    accs = {v: [] for v in values}
    for seed in seeds:
        base = config.with_overrides(seed=seed)
        train, test = synthetic_split(base, seed)
        cached_train = prepare_samples(train, base)
        cached_test = prepare_samples(test, base)
        for value in values:
            run = base.with_overrides(part_detectors=value)
            accs[value].append(_train_and_eval(run, cached_train, cached_test))
    means = {v: float(np.mean(a)) for v, a in accs.items()}
    return {"values": list(values), "accuracies": accs, "means": means,
            "spread": max(means.values()) - min(means.values())}


def ablate_k_sweep(config: TrainConfig, seeds, values=(3, 7, 14, 28)):
    """Accuracy as the per-anchor box menu is subsampled."""
    accs = {v: [] for v in values}
    for seed in seeds:
        base = config.with_overrides(seed=seed)
        train, test = synthetic_split(base, seed)
        for value in values:
            run = base.with_overrides(boxes_per_anchor=value)
            cached_train = prepare_samples(train, run)
            cached_test = prepare_samples(test, run)
            accs[value].append(_train_and_eval(run, cached_train, cached_test))
    means = {v: float(np.mean(a)) for v, a in accs.items()}
    return {"values": list(values), "accuracies": accs, "means": means,
            "spread": max(means.values()) - min(means.values())}


def ablate_svb(config: TrainConfig, seeds):
    """Training with vs without the singular value projection."""
    accs = {"on": [], "off": []}
    for seed in seeds:
        base = config.with_overrides(seed=seed)
        train, test = synthetic_split(base, seed)
        cached_train = prepare_samples(train, base)
        cached_test = prepare_samples(test, base)
        accs["on"].append(_train_and_eval(
            base.with_overrides(svb_enabled=True), cached_train, cached_test))
        accs["off"].append(_train_and_eval(
            base.with_overrides(svb_enabled=False), cached_train, cached_test))
    return {"accuracies": accs,
            "means": {k: float(np.mean(v)) for k, v in accs.items()}}


def box_iou(box_a, box_b) -> float:
    """Intersection over union of inclusive-corner boxes (x0, y0, x1, y1)."""
    ax0, ay0, ax1, ay1 = box_a
    bx0, by0, bx1, by1 = box_b
    iw = min(ax1, bx1) - max(ax0, bx0) + 1
    ih = min(ay1, by1) - max(ay0, by0) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = ((ax1 - ax0 + 1) * (ay1 - ay0 + 1)
             + (bx1 - bx0 + 1) * (by1 - by0 + 1) - inter)
    return inter / union


def localization_hit_rate(params, cached_test, part_detectors: int,
                          threshold: float = 0.3) -> float:
    """Fraction of (sample, detector) pairs whose top-1 box overlaps the
    planted patch with IoU above the threshold."""
    hits = 0
    total = 0
    for entry in cached_test:
        if entry.sample.patch_box is None:
            raise UsageError("localization scoring needs planted patch boxes")
        extraction = extract_parts(params, entry, top_m=1)
        for det in range(part_detectors):
            prop = extraction.top1_box(det)
            iou = box_iou((prop.x0, prop.y0, prop.x1, prop.y1),
                          entry.sample.patch_box)
            hits += int(iou > threshold)
            total += 1
    return hits / total
