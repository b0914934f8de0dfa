"""Command-line entry point: ``ctxkernel <command> [--config run.json] [--key value ...]``.

Exit codes: 0 success, 1 gram self-check failure, 2 usage/config/data
error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import svm
from .config import SCHEMA, ConfigError, RunConfig
from .ctxlearn import (
    TrainState,
    alternate_optimize,
    load_checkpoint,
    save_checkpoint,
    write_training_log,
)
from .errors import CtxKernelError, DivergenceError, ShapeMismatchError
from .evalmetrics import evaluate, write_report_csv, write_report_json
from .featio import (
    FeatureSet,
    gen_synthetic,
    load_features,
    read_labels,
    stack_cells,
    write_feature_file,
    write_labels,
)
from .kernelcore import ContextStack, context_to_dict, gram_fixed_point, map_layers, pooled_maps

logger = logging.getLogger("ctxkernel")

GRAM_GUARD = 2000
GRAM_RESIDUAL_TOL = 1e-8


class UsageError(Exception):
    pass


def _existing(path: str, what: str) -> Path:
    if not path:
        raise UsageError(f"no {what} given")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["io.output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    return out


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_train(cfg: RunConfig, args) -> int:
    features = _existing(cfg["io.features"], "feature file")
    labels_path = _existing(cfg["io.labels"], "label file")
    spec = cfg.grid_spec()
    images = load_features(features, spec, cfg["map.mode"])
    labels = read_labels(labels_path, [img.image_id for img in images])
    labels.check_trainable()
    learn = cfg.learn_config()
    resume = load_checkpoint(_existing(args.resume, "checkpoint")) if args.resume else None

    out = _output_dir(cfg)
    try:
        state = alternate_optimize(images, labels, spec, learn, resume=resume)
    except DivergenceError as exc:
        if exc.state is not None:
            save_checkpoint(out / "checkpoint.ctxc", exc.state)
            write_training_log(out / "train_log.csv", exc.state.log)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    save_checkpoint(out / "checkpoint.ctxc", state)
    write_training_log(out / "train_log.csv", state.log)
    print(f"trained {labels.n_concepts} concepts on {labels.n_images} images: "
          f"outer_iter={state.outer_iter} E={state.objective_history[-1]:.10g}")
    return 0


def _predict_scores(state: TrainState, features_path: Path):
    ctx = state.ctx
    if ctx.spec is None:
        raise ShapeMismatchError("checkpoint carries no grid geometry")
    if state.model is None:
        raise UsageError("checkpoint has no trained model")
    images = load_features(features_path, ctx.spec)
    if not images:
        return [], np.zeros((0, state.model.n_concepts))
    scores = svm.score(state.model, pooled_maps(stack_cells(images), ctx))
    return [img.image_id for img in images], np.atleast_2d(scores)


def cmd_predict(cfg: RunConfig, args) -> int:
    state = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    ids, scores = _predict_scores(state, _existing(args.features, "feature file"))
    out = _output_dir(cfg)
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "concept", "score", "present"])
        for image_id, row in zip(ids, scores):
            for name, s in zip(state.model.concept_names, row):
                writer.writerow([image_id, name, _fmt(s), int(s > 0)])
    print(f"predicted {len(ids)} images")
    return 0


def read_predictions(path):
    """Parse a predictions CSV into (image ids, concept names, N x K scores)."""
    table, ids, concepts = {}, [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id", "concept", "score", "present"]:
            raise UsageError(f"{path}: expected header image_id,concept,score,present")
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise UsageError(f"{path}: malformed row {row}")
            image_id, concept, s, _ = row
            table[image_id, concept] = float(s)
            if image_id not in ids:
                ids.append(image_id)
            if concept not in concepts:
                concepts.append(concept)
    try:
        scores = np.array([[table[i, c] for c in concepts] for i in ids]).reshape(len(ids), len(concepts))
    except KeyError as exc:
        raise ShapeMismatchError(f"{path}: missing score for {exc.args[0]}") from None
    return ids, concepts, scores


def cmd_eval(cfg: RunConfig, args) -> int:
    ids, concepts, scores = read_predictions(_existing(args.predictions, "predictions file"))
    labels = read_labels(_existing(args.labels, "label file"))
    if set(labels.image_ids) != set(ids) or set(labels.concept_names) != set(concepts):
        raise ShapeMismatchError(
            f"predictions cover {len(ids)} images x {len(concepts)} concepts, labels "
            f"{labels.n_images} x {labels.n_concepts} (or different names)"
        )
    row_of = {i: p for p, i in enumerate(labels.image_ids)}
    col_of = {c: k for k, c in enumerate(labels.concept_names)}
    Y = labels.Y[[row_of[i] for i in ids]][:, [col_of[c] for c in concepts]]
    report = evaluate(scores, Y, concepts)
    out = _output_dir(cfg)
    write_report_csv(out / "report.csv", report)
    write_report_json(out / "report.json", report)
    print(f"MFS/MFC/MAP = {report.mfs:.4f}/{report.mfc:.4f}/{report.map_:.4f}")
    return 0


def cmd_export_context(cfg: RunConfig, args) -> int:
    state = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    out = _output_dir(cfg)
    with open(out / "context.json", "w", encoding="utf-8") as fh:
        json.dump(context_to_dict(state.ctx), fh, indent=1)
        fh.write("\n")
    print(f"exported {state.ctx.depth} layers x {state.ctx.sectors} sectors")
    return 0


def _write_matrix(path, M):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in M:
            writer.writerow([_fmt(v) for v in row])


def cmd_gram(cfg: RunConfig, args) -> int:
    features = _existing(args.features, "feature file")
    if args.checkpoint:
        ctx = load_checkpoint(_existing(args.checkpoint, "checkpoint")).ctx
        spec = ctx.spec
    else:
        spec = cfg.grid_spec()
        ctx = ContextStack.handcrafted(spec, cfg["kernel.depth"], cfg["kernel.gamma"])
    images = load_features(features, spec)
    n_total = len(images) * spec.n_cells
    if n_total > GRAM_GUARD and not args.force:
        raise UsageError(f"{n_total} cells exceed the gram guard of {GRAM_GUARD}; pass --force")
    if not images:
        raise UsageError("feature file holds no images")
    V = stack_cells(images)
    flat = V.reshape(n_total, -1)
    K = gram_fixed_point(flat @ flat.T, ctx, len(images))
    top = map_layers(V, ctx, keep_layers=False)[-1].reshape(n_total, -1)
    R = K - top @ top.T
    scale = float(np.max(np.abs(K))) or 1.0
    residual = float(np.max(np.abs(R))) / scale
    out = _output_dir(cfg)
    _write_matrix(out / "gram.csv", K)
    _write_matrix(out / "gram_residual.csv", R)
    (out / "gram_report.json").write_text(
        json.dumps({"n_cells": n_total, "max_relative_residual": residual}, indent=2) + "\n", encoding="utf-8"
    )
    print(f"max relative residual {residual:.3e}")
    if residual > GRAM_RESIDUAL_TOL:
        print("error: map/gram self-check failed", file=sys.stderr)
        return 1
    return 0


def cmd_gen_synthetic(cfg: RunConfig, args) -> int:
    spec = cfg.grid_spec()
    fs, labels = gen_synthetic(spec, cfg["synthetic.n_images"], cfg["io.seed"], cfg["synthetic.d0"],
                               cfg["synthetic.noise"])
    if cfg["map.mode"] == "hi":
        fs = FeatureSet(fs.image_ids, fs.values, spec, "hi", cfg["map.hi_levels"])
    out = _output_dir(cfg)
    write_feature_file(out / "features.ctxf", fs)
    write_labels(out / "labels.csv", labels)
    print(f"wrote {len(fs)} synthetic images to {out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "export-context": cmd_export_context,
    "gram": cmd_gram,
    "gen-synthetic": cmd_gen_synthetic,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxkernel", description="Context-aware deep kernel maps")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat JSON config with dotted keys")
        group = p.add_argument_group("config overrides")
        for key, (*_, help_text) in SCHEMA.items():
            group.add_argument(f"--{key}", dest=key, default=None, metavar="V", help=help_text)
        return p

    p = add("train", "learn context and SVMs")
    p.add_argument("--resume", help="continue from this checkpoint")
    p = add("predict", "score images with a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("features")
    p = add("eval", "compute MF-S, MF-C and MAP")
    p.add_argument("predictions")
    p.add_argument("labels")
    p = add("export-context", "dump learned adjacency weights as JSON")
    p.add_argument("checkpoint")
    p = add("gram", "debug: gram recursion vs explicit maps")
    p.add_argument("features")
    p.add_argument("--checkpoint", help="use this checkpoint's context instead of the handcrafted one")
    p.add_argument("--force", action="store_true", help="lift the size guard")
    add("gen-synthetic", "write a synthetic two-class context dataset")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {key: getattr(args, key) for key in SCHEMA}
    try:
        cfg = RunConfig.load(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError, CtxKernelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
