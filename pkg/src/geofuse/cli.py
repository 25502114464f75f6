"""Command-line entry point.

Subcommands: ``synth`` (generate datasets from a world spec), ``train``
(fit a model and write a checkpoint plus a loss log), ``eval`` (score one
model), ``sweep`` (prior accuracy across radii), ``compare`` (table across
model kinds). Every command is driven by a JSON config plus a few
overriding flags, and is deterministic given its config: reruns produce
byte-identical outputs.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
Set GEOFUSE_LOG to error/info/debug for verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evalkit, modulation
from .data import read_jsonl, write_jsonl
from .errors import ConfigError, DataError, GeofuseError
from .estimators import (
    FeatureModulationClassifier,
    GeoPriorClassifier,
    ImageOnlyClassifier,
    PostProcessingClassifier,
)
from .micronet import load_checkpoint, network_from_dict, network_to_dict, save_checkpoint
from .synthworld import generate, load_world_spec

log = logging.getLogger("geofuse")

PRIOR_KINDS = ("whitelist", "bayes_prior")
TRAINABLE_KINDS = ("image_only", "postproc")  # plus featmod:<variant>


def _setup_logging() -> None:
    level_name = os.environ.get("GEOFUSE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConfigError(f"GEOFUSE_LOG must be one of {sorted(levels)}, got {level_name!r}")
    logging.basicConfig(level=levels[level_name], format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if "seed" not in cfg:
        raise ConfigError("config must set a seed")
    return cfg


def _parse_model_kind(kind: str) -> tuple[str, str | None]:
    """Split 'featmod:<variant>' into its parts; validate known kinds."""
    if kind == "featmod" or kind.startswith("featmod:"):
        _, _, variant = kind.partition(":")
        if not variant:
            variant = "add_raw_beta"
        if variant not in modulation.VARIANTS:
            raise ConfigError(f"unknown modulation variant {variant!r}")
        return "featmod", variant
    if kind not in TRAINABLE_KINDS + PRIOR_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    return kind, None


def _image_only_from_checkpoint(path) -> ImageOnlyClassifier:
    doc = load_checkpoint(path)
    if doc.get("kind") != "image_only":
        raise DataError(f"{path} is not an image_only checkpoint")
    est = ImageOnlyClassifier(seed=doc.get("seed", 0))
    est.net_ = network_from_dict(doc["network"])
    est.n_labels_ = int(doc["n_labels"])
    est.classes_ = np.arange(est.n_labels_)
    est.n_features_in_ = est.net_.n_in + 2
    return est


def _write_loss_log(path, history) -> None:
    lines = [f"{epoch}\t{loss!r}" for epoch, loss in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_report(out_path, payload: dict, table: str) -> None:
    out_path = Path(out_path)
    out_path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    out_path.with_suffix(".txt").write_text(table, encoding="utf-8")
    log.info("wrote %s and %s", out_path, out_path.with_suffix(".txt"))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = load_world_spec(args.spec)
    if args.seed is not None:
        spec.seed = int(args.seed)
    if args.n_train <= 0 or args.n_eval <= 0:
        raise ConfigError("--n-train and --n-eval must be positive")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train = generate(spec, args.n_train, split="train")
    evald = generate(spec, args.n_eval, split="eval")
    write_jsonl(train, out_dir / "train.jsonl")
    write_jsonl(evald, out_dir / "eval.jsonl")
    log.info("wrote %s observations to %s", args.n_train + args.n_eval, out_dir)
    print(f"synth: wrote {out_dir / 'train.jsonl'} ({args.n_train}) and {out_dir / 'eval.jsonl'} ({args.n_eval})")
    return 0


def _fit_model_for_training(cfg: dict, kind: str, variant: str | None, base_path, train):
    seed = int(cfg["seed"])
    X, y = train.to_X(), train.labels
    if kind == "image_only":
        est = ImageOnlyClassifier(
            hidden_sizes=tuple(cfg.get("hidden_sizes", (32, 32))),
            learning_rate=float(cfg.get("learning_rate", 0.02)),
            epochs=int(cfg.get("epochs", 30)),
            batch_size=int(cfg.get("batch_size", 32)),
            seed=seed,
            n_labels=train.n_labels,
        ).fit(X, y)
        payload = {
            "kind": "image_only",
            "seed": seed,
            "n_labels": train.n_labels,
            "optimizer": {"kind": "sgd", "learning_rate": est.learning_rate},
            "network": network_to_dict(est.net_),
        }
        return payload, est.loss_history_
    if base_path is None:
        raise ConfigError(f"{kind} training requires a base checkpoint (--base or base_checkpoint in config)")
    base = _image_only_from_checkpoint(base_path)
    if kind == "postproc":
        est = PostProcessingClassifier(
            base=base,
            hidden_sizes=tuple(cfg.get("geo_hidden", (256, 128, 128))),
            learning_rate=float(cfg.get("learning_rate", 0.02)),
            epochs=int(cfg.get("epochs", 30)),
            batch_size=int(cfg.get("batch_size", 32)),
            seed=seed,
        ).fit(X, y)
        payload = {
            "kind": "postproc",
            "seed": seed,
            "n_labels": train.n_labels,
            "optimizer": {"kind": "sgd", "learning_rate": est.learning_rate},
            "geo_net": network_to_dict(est.geo_net_),
        }
        return payload, est.loss_history_
    # featmod
    est = FeatureModulationClassifier(
        init_base=base,
        variant=variant,
        layer_mask=tuple(cfg["layer_mask"]) if cfg.get("layer_mask") else None,
        geo_hidden=tuple(cfg.get("geo_hidden", (128, 256))),
        learning_rate=float(cfg.get("learning_rate", 0.0045)),
        decay_rate=float(cfg.get("decay_rate", 0.94)),
        decay_every_epochs=int(cfg.get("decay_every_epochs", 4)),
        epochs=int(cfg.get("epochs", 30)),
        batch_size=int(cfg.get("batch_size", 32)),
        seed=seed,
    ).fit(X, y)
    payload = {
        "kind": "featmod",
        "seed": seed,
        "n_labels": train.n_labels,
        "variant": variant,
        "optimizer": {
            "kind": "rmsprop",
            "learning_rate": est.learning_rate,
            "decay_rate": est.decay_rate,
            "decay_every_epochs": est.decay_every_epochs,
        },
        "modulated": modulation.modulated_to_dict(est.modulated_),
    }
    return payload, est.loss_history_


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    kind_str = f"featmod:{args.variant}" if args.variant else cfg.get("model", "image_only")
    kind, variant = _parse_model_kind(kind_str)
    if kind in PRIOR_KINDS:
        raise ConfigError(f"model kind {kind!r} computes priors at eval time and requires no training")
    if "train_data" not in cfg:
        raise ConfigError("config must name train_data")
    train = read_jsonl(cfg["train_data"])
    base_path = args.base or cfg.get("base_checkpoint")
    payload, history = _fit_model_for_training(cfg, kind, variant, base_path, train)
    out = args.out or cfg.get("out_checkpoint")
    if not out:
        raise ConfigError("no output checkpoint path (--out or out_checkpoint in config)")
    save_checkpoint(out, payload)
    loss_path = cfg.get("out_loss_log", str(Path(out).with_suffix(".loss.txt")))
    _write_loss_log(loss_path, history)
    print(f"train: wrote {out} (final epoch loss {history[-1]:.6f})")
    return 0


def _model_for_eval(cfg: dict, kind: str, variant: str | None, checkpoint, train):
    base_path = cfg.get("base_checkpoint")
    if kind == "image_only":
        return _image_only_from_checkpoint(checkpoint or base_path)
    if kind in PRIOR_KINDS:
        if base_path is None:
            raise ConfigError(f"{kind} evaluation requires base_checkpoint in config")
        est = GeoPriorClassifier(
            base=_image_only_from_checkpoint(base_path),
            mode="whitelist" if kind == "whitelist" else "bayesian",
            theta_miles=float(cfg.get("radius_miles", 100.0)),
            smoothing_alpha=float(cfg.get("smoothing_alpha", 0.0)),
            empty_fallback=cfg.get("empty_fallback", "image_only"),
        )
        return est.fit(train.to_X(), train.labels)
    if checkpoint is None:
        raise ConfigError(f"{kind} evaluation requires a model checkpoint")
    doc = load_checkpoint(checkpoint)
    if kind == "postproc":
        if doc.get("kind") != "postproc":
            raise DataError(f"{checkpoint} is not a postproc checkpoint")
        if base_path is None:
            raise ConfigError("postproc evaluation requires base_checkpoint in config")
        est = PostProcessingClassifier(base=_image_only_from_checkpoint(base_path))
        est.geo_net_ = network_from_dict(doc["geo_net"])
        est.classes_ = est.base.classes_
        return est
    if doc.get("kind") != "featmod":
        raise DataError(f"{checkpoint} is not a featmod checkpoint")
    est = FeatureModulationClassifier(variant=doc.get("variant", variant))
    est.modulated_ = modulation.modulated_from_dict(doc["modulated"])
    est.classes_ = np.arange(int(doc["n_labels"]))
    return est


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    kind_str = f"featmod:{args.variant}" if args.variant else cfg.get("model", "image_only")
    kind, variant = _parse_model_kind(kind_str)
    for key in ("train_data", "eval_data"):
        if key not in cfg:
            raise ConfigError(f"config must name {key}")
    train = read_jsonl(cfg["train_data"])
    evald = read_jsonl(cfg["eval_data"])
    model = _model_for_eval(cfg, kind, variant, cfg.get("model_checkpoint"), train)
    report = evalkit.compare_models(
        {kind_str: model},
        evald,
        train.label_counts(),
        head_threshold=int(cfg.get("head_threshold", 100)),
    )
    out = args.out or cfg.get("out_report")
    if not out:
        raise ConfigError("no report path (--out or out_report in config)")
    _write_report(out, report.to_dict(), report.render_table())
    print(report.render_table(), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    for key in ("train_data", "eval_data"):
        if key not in cfg:
            raise ConfigError(f"config must name {key}")
    if args.radius_list:
        radii = [float(r) for r in args.radius_list.split(",")]
    elif cfg.get("radius_list"):
        radii = [float(r) for r in cfg["radius_list"]]
    else:
        raise ConfigError("no radii given (--radius-list or radius_list in config)")
    mode = cfg.get("prior_mode") or cfg.get("model") or "whitelist"
    mode = {"whitelist": "whitelist", "bayes_prior": "bayesian", "bayesian": "bayesian"}.get(mode)
    if mode is None:
        raise ConfigError("sweep mode must be whitelist or bayes_prior")
    if cfg.get("base_checkpoint") is None:
        raise ConfigError("sweep requires base_checkpoint in config")
    train = read_jsonl(cfg["train_data"])
    evald = read_jsonl(cfg["eval_data"])
    base = _image_only_from_checkpoint(cfg["base_checkpoint"])
    rows = evalkit.radius_sweep(
        base,
        train,
        evald,
        radii,
        mode=mode,
        smoothing_alpha=float(cfg.get("smoothing_alpha", 0.0)),
        empty_fallback=cfg.get("empty_fallback", "image_only"),
    )
    payload = {"mode": mode, "results": [{"radius_miles": r, "top1": a} for r, a in rows]}
    width = max(len(f"{r:g}") for r, _ in rows)
    table_lines = [f"radius{' ' * max(1, width - 4)}top1", "-" * (width + 8)]
    for r, a in rows:
        table_lines.append(f"{r:<{width + 2}g}{a:.4f}")
    table = "\n".join(table_lines) + "\n"
    out = args.out or cfg.get("out_report")
    if not out:
        raise ConfigError("no report path (--out or out_report in config)")
    _write_report(out, payload, table)
    print(table, end="")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    for key in ("train_data", "eval_data", "models"):
        if key not in cfg:
            raise ConfigError(f"config must name {key}")
    train = read_jsonl(cfg["train_data"])
    evald = read_jsonl(cfg["eval_data"])
    models = {}
    for entry in cfg["models"]:
        if "kind" not in entry:
            raise ConfigError("each compare entry needs a kind")
        kind, variant = _parse_model_kind(entry["kind"])
        sub = dict(cfg)
        sub.update(entry)
        name = entry.get("name", entry["kind"])
        models[name] = _model_for_eval(sub, kind, variant, entry.get("checkpoint"), train)
    report = evalkit.compare_models(
        models, evald, train.label_counts(), head_threshold=int(cfg.get("head_threshold", 100))
    )
    out = args.out or cfg.get("out_report")
    if not out:
        raise ConfigError("no report path (--out or out_report in config)")
    _write_report(out, report.to_dict(), report.render_table())
    print(report.render_table(), end="")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geofuse", description="Geolocation-aware classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate train/eval datasets from a world spec")
    p_synth.add_argument("--spec", required=True, help="world spec JSON")
    p_synth.add_argument("--n-train", type=int, required=True)
    p_synth.add_argument("--n-eval", type=int, required=True)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p_synth.set_defaults(func=cmd_synth)

    common = {
        "--config": dict(required=True, help="run config JSON"),
        "--seed": dict(type=int, default=None, help="override the config seed"),
        "--out": dict(default=None, help="override the output path"),
        "--variant": dict(default=None, help="feature-modulation variant (implies featmod)"),
    }

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    for flag, kw in common.items():
        p_train.add_argument(flag, **kw)
    p_train.add_argument("--base", default=None, help="base checkpoint (required for postproc/featmod)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate one model")
    for flag, kw in common.items():
        p_eval.add_argument(flag, **kw)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="prior accuracy across radii")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--radius-list", default=None, help="comma-separated radii in miles")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="compare model kinds on one eval set")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except GeofuseError as e:
        print(f"geofuse: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"geofuse: error: {e}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
