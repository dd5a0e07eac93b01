"""Command-line entry points for dataset generation, training, evaluation,
ablations, part extraction, ensembling and rendering."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import ablations
from .checkpoint import (load_gap_classifier, load_head, save_gap_classifier,
                         save_head)
from .config import TrainConfig, load_config_file
from .data import SyntheticTaskSpec, gen_synthetic, ingest_features, write_pnfm
from .dpp import write_proposals_jsonl
from .errors import DataError, PartnetError
from .pipeline import (TrainResult, ensemble_predict, evaluate_image_model,
                       evaluate_partnet, extract_parts, fine_tune_part_models,
                       predict_image_probs, prepare_sample, prepare_samples,
                       train_image_model, train_partnet)
from .render import read_ppm, render_boxes


def _load_config(args) -> TrainConfig:
    config = TrainConfig()
    if getattr(args, "config", None):
        config = load_config_file(args.config, config)
    if getattr(args, "seed", None) is not None:
        config = config.with_overrides(seed=args.seed)
    return config


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_samples(path, config: TrainConfig):
    samples = ingest_features(path)
    bad = [s.source for s in samples if s.label >= config.classes]
    if bad:
        raise DataError(
            f"{len(bad)} samples have labels >= {config.classes}, "
            f"first: {bad[0]}"
        )
    return samples


def _write_log(out: Path, rows) -> Path:
    result = TrainResult(params=None, log_rows=rows)
    path = out / "train_log.csv"
    path.write_text(result.log_csv())
    return path


def cmd_gen_synth(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    per_class = args.per_class or config.train_per_class
    spec = SyntheticTaskSpec(
        classes=config.classes, channels=config.channels, width=config.width,
        height=config.height, patch_size=config.patch_size,
        signal_channels_per_class=config.signal_channels_per_class,
        noise_level=config.noise_level, samples_per_class=per_class,
        stride=config.stride, seed=config.seed)
    samples = gen_synthetic(spec)
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as manifest:
        for i, sample in enumerate(samples):
            name = f"sample_{i:05d}.pnfm"
            write_pnfm(sample, out / name)
            manifest.write(json.dumps({
                "file": name, "label": sample.label,
                "patch_box": list(sample.patch_box),
            }) + "\n")
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    samples = _load_samples(args.data, config)
    if args.model == "image":
        model, rows = train_image_model(samples, config, with_log=True)
        save_gap_classifier(out / "checkpoint.pnck", model, config)
        log_path = _write_log(out, rows)
        accuracy = evaluate_image_model(model, samples)
    else:
        cached = prepare_samples(samples, config)
        flipped = (prepare_samples(samples, config, flip=True)
                   if config.flip_augment else None)
        result = train_partnet(cached, config, flipped=flipped)
        save_head(out / "checkpoint.pnck", result.params, config,
                  feature_dim=int(cached[0].features.shape[0]))
        log_path = out / "train_log.csv"
        log_path.write_text(result.log_csv())
        accuracy, _ = evaluate_partnet(result.params, cached, config.classes,
                                       degenerate=config.degenerate)
    print(f"checkpoint: {out / 'checkpoint.pnck'}")
    print(f"log: {log_path}")
    print(f"train accuracy: {accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    params, config, _ = load_head(args.checkpoint)
    samples = _load_samples(args.data, config)
    cached = prepare_samples(samples, config)
    accuracy, confusion = evaluate_partnet(params, cached, config.classes,
                                           degenerate=config.degenerate)
    report = {
        "accuracy": accuracy,
        "samples": len(samples),
        "confusion": confusion.tolist(),
        "per_class_accuracy": [
            (confusion[c, c] / confusion[c].sum()) if confusion[c].sum() else 0.0
            for c in range(config.classes)
        ],
    }
    if args.out_dir:
        out = _out_dir(args)
        (out / "eval_report.json").write_text(json.dumps(report, indent=2))
    print(f"accuracy: {accuracy:.4f} over {len(samples)} samples")
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    seeds = [config.seed + i for i in range(args.seeds)]
    if args.mode == "degenerate":
        result = ablations.ablate_detection_stream(config, seeds)
    elif args.mode == "p-sweep":
        result = ablations.ablate_p_sweep(config, seeds)
    elif args.mode == "k-sweep":
        result = ablations.ablate_k_sweep(config, seeds)
    else:
        result = ablations.ablate_svb(config, seeds)
    path = out / f"ablation_{args.mode}.json"
    path.write_text(json.dumps(result, indent=2, default=str))
    _write_ablation_csv(out / f"ablation_{args.mode}.csv", args.mode, result)
    print(json.dumps(result.get("means", result), indent=2, default=str))
    print(f"report: {path}")
    return 0


def _write_ablation_csv(path: Path, mode: str, result: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if mode == "degenerate":
            writer.writerow(["seed", "partnet", "degenerate", "image"])
            for row in result["rows"]:
                writer.writerow([row["seed"], row["partnet"],
                                 row["degenerate"], row["image"]])
        elif mode in ("p-sweep", "k-sweep"):
            writer.writerow(["value", "mean_accuracy"])
            for value in result["values"]:
                writer.writerow([value, result["means"][value]])
        else:
            writer.writerow(["svb", "mean_accuracy"])
            for key, value in result["means"].items():
                writer.writerow([key, value])


def cmd_extract_parts(args) -> int:
    params, config, _ = load_head(args.checkpoint)
    samples = _load_samples(args.data, config)
    out = _out_dir(args)
    top_m = args.top_m or min(config.top_m, _proposal_count(samples[0], config))
    with open(out / "extractions.jsonl", "w", encoding="utf-8") as fh:
        for i, sample in enumerate(samples):
            entry = prepare_sample(sample, config)
            extraction = extract_parts(params, entry, top_m,
                                       degenerate=config.degenerate)
            fh.write(json.dumps({
                "sample_index": i, "label": sample.label,
                "source": sample.source, "parts": extraction.records(),
            }) + "\n")
            if args.dump_proposals:
                write_proposals_jsonl(entry.proposals,
                                      sample.feature_map.stride,
                                      out / f"proposals_{i:05d}.jsonl")
    print(f"extractions: {out / 'extractions.jsonl'}")
    return 0


def _proposal_count(sample, config: TrainConfig) -> int:
    return config.cells * config.cells * config.boxes_per_anchor


def cmd_finetune_parts(args) -> int:
    params, config, _ = load_head(args.checkpoint)
    image_model, _, _ = load_gap_classifier(args.image_checkpoint)
    samples = _load_samples(args.data, config)
    cached = prepare_samples(samples, config)
    out = _out_dir(args)
    models = fine_tune_part_models(params, image_model, cached, config)
    for det, model in enumerate(models):
        save_gap_classifier(out / f"part_{det}.pnck", model, config,
                            kind="part_classifier", detector=det)
    print(f"wrote {len(models)} part models to {out}")
    return 0


def cmd_ensemble(args) -> int:
    params, config, _ = load_head(args.partnet)
    samples = _load_samples(args.data, config)
    image_model = None
    if args.image:
        image_model, _, _ = load_gap_classifier(args.image)
    part_models = []
    for path in args.parts or []:
        model, _, meta = load_gap_classifier(path)
        part_models.append((int(meta.get("detector", len(part_models))), model))
    hits = {"ensemble": 0}
    for sample in samples:
        entry = prepare_sample(sample, config)
        members = [predict_image_probs(params, entry,
                                       degenerate=config.degenerate)]
        if image_model is not None:
            members.append(image_model.predict(sample.feature_map.data))
        if part_models:
            extraction = extract_parts(params, entry, top_m=1,
                                       degenerate=config.degenerate)
            for det, model in part_models:
                idx = extraction.ranked[det][0][0]
                members.append(model.predict(entry.pooled[idx]))
        combined = ensemble_predict(members)
        hits["ensemble"] += int(np.argmax(combined) == sample.label)
    accuracy = hits["ensemble"] / len(samples)
    report = {"accuracy": accuracy, "samples": len(samples),
              "members": 1 + (image_model is not None) + len(part_models)}
    if args.out_dir:
        out = _out_dir(args)
        (out / "ensemble_report.json").write_text(json.dumps(report, indent=2))
    print(f"ensemble accuracy: {accuracy:.4f}")
    return 0


def cmd_render(args) -> int:
    params, config, _ = load_head(args.checkpoint)
    samples = _load_samples(args.data, config)
    sample = samples[args.index]
    entry = prepare_sample(sample, config)
    top_m = min(config.top_m, entry.features.shape[1])
    extraction = extract_parts(params, entry, top_m,
                               degenerate=config.degenerate)
    source = read_ppm(args.image) if args.image else None
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    width, height = render_boxes(sample, extraction, out_path,
                                 source_image=source)
    print(f"wrote {width}x{height} rendering to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partnet",
        description="Weakly supervised part detection on backbone feature maps")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    p = common(sub.add_parser("gen-synth", help="generate a synthetic dataset"))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--per-class", type=int, help="samples per class")
    p.set_defaults(func=cmd_gen_synth)

    p = common(sub.add_parser("train", help="train a model on PNFM data"))
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model", choices=("partnet", "image"), default="partnet")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("ablate", help="run an ablation study"))
    p.add_argument("--mode", required=True,
                   choices=("degenerate", "p-sweep", "k-sweep", "svb"))
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("extract-parts", help="rank proposals per detector")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--top-m", type=int)
    p.add_argument("--dump-proposals", action="store_true")
    p.set_defaults(func=cmd_extract_parts)

    p = sub.add_parser("finetune-parts", help="fine-tune per-detector models")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image-checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_finetune_parts)

    p = sub.add_parser("ensemble", help="average member model probabilities")
    p.add_argument("--partnet", required=True)
    p.add_argument("--image")
    p.add_argument("--parts", nargs="*")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("render", help="draw detector boxes into a PPM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--image", help="optional source PPM to draw on")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PartnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
