"""Command-line harness: ``divtrain {train,attack,coherence,gaas} --config run.yaml``.

Exit codes: 0 on success, 2 for configuration errors, 1 for runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .datasets import AugmentConfig, DatasetBundle, load_idx, mnist_sample, synth_blobs
from .gaas import gaas_evaluate
from .models import build_ensemble, parse_spec
from .reporting import (attack_csv, coherence_csv, coherence_hist_csv, coherence_report, gaas_csv,
                        gaas_summary_csv)
from .seeding import derive_seed
from .train import RunMetrics, TrainConfig, evaluate_transfer, train

log = logging.getLogger("divtrain")


def load_data(cfg: ExperimentConfig) -> tuple[DatasetBundle, DatasetBundle]:
    d = cfg.data
    if d.source == "synthetic":
        s = d.synthetic
        full = synth_blobs(s.classes, s.per_class + s.test_per_class, tuple(s.shape), seed=derive_seed(cfg.seed, "data"))
        within = np.arange(len(full)) % (s.per_class + s.test_per_class)
        train_set = full.subset(within < s.per_class, "synthetic-train")
        test_set = full.subset(within >= s.per_class, "synthetic-test")
    elif d.source == "mnist-sample":
        full = mnist_sample(0)
        n_train = d.train_limit or 2000
        n_test = d.test_limit or 1000
        if n_train + n_test > len(full):
            raise ConfigError(f"data: mnist-sample has {len(full)} images, asked for {n_train} + {n_test}")
        train_set = full.subset(slice(0, n_train), "mnist-train")
        test_set = full.subset(slice(n_train, n_train + n_test), "mnist-test")
        return train_set, test_set
    else:
        train_set = load_idx(d.train_images, d.train_labels, "train")
        test_set = load_idx(d.test_images, d.test_labels, "test")
    if d.train_limit:
        train_set = train_set.subset(slice(0, d.train_limit))
    if d.test_limit:
        test_set = test_set.subset(slice(0, d.test_limit))
    return train_set, test_set


def _specs(cfg: ExperimentConfig, input_shape):
    texts = cfg.model.specs * (cfg.model.ensemble_size if len(cfg.model.specs) == 1 else 1)
    return [parse_spec(t, input_shape, cfg.model.alpha) for t in texts]


def _train_config(cfg: ExperimentConfig, recipe: str | None = None, seed_label: str = "train",
                  epochs: int | None = None) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        epochs=epochs or t.epochs,
        batch_size=t.batch_size,
        learning_rate=t.learning_rate,
        lam=t.lam,
        recipe=recipe or t.recipe,
        noise_epsilon=t.noise_epsilon,
        adv_epsilon=t.adv_epsilon,
        augment=AugmentConfig(t.augment.max_shift, t.augment.pad, t.augment.flip),
        seed=derive_seed(cfg.seed, seed_label),
        track_alignment=t.track_alignment,
    )


def _prepare(out: Path, cfg: ExperimentConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    train_set, test_set = load_data(cfg)
    specs = _specs(cfg, train_set.images.shape[1:])
    _prepare(out, cfg)
    ens = build_ensemble(specs, [derive_seed(cfg.seed, "member", i) for i in range(len(specs))])
    static = None
    if cfg.train.recipe in ("ens", "ens+div"):
        static = build_ensemble(specs[:1], [derive_seed(cfg.seed, "static-init")])
        static_cfg = _train_config(cfg, "base", "static", cfg.train.static_epochs)
        static_cfg.track_alignment = False
        static, _ = train(static, train_set, static_cfg)
        save_checkpoint(static, out / "static.ckpt")
    trained, metrics = train(ens, train_set, _train_config(cfg), static_model=static, eval_data=test_set)
    save_checkpoint(trained, out / "ensemble.ckpt")
    (out / "metrics.csv").write_text(metrics.epochs_csv())
    (out / "metrics.json").write_text(metrics.to_json())
    return {"checkpoint": str(out / "ensemble.ckpt"), "clean_accuracy": metrics.clean_accuracy}


def attack_grid(cfg: ExperimentConfig) -> list[AttackConfig]:
    grid = []
    for entry in cfg.attacks:
        for eps in entry.epsilon:
            base = AttackConfig.default(entry.kind, eps)
            grid.append(AttackConfig(
                entry.kind, eps,
                steps=entry.steps or base.steps,
                decay=entry.decay,
                confidence=entry.confidence,
                step_size=entry.step_size,
                seed=derive_seed(cfg.seed, "attack", entry.kind, eps),
            ))
    return grid


def _check_compatible(ens, data: DatasetBundle, what: str):
    if tuple(ens.input_shape) != tuple(data.images.shape[1:]) and int(np.prod(ens.input_shape)) != int(np.prod(data.images.shape[1:])):
        raise ValueError(f"{what} expects inputs of shape {ens.input_shape}, test set has {data.images.shape[1:]}")
    if ens.classes < data.classes:
        raise ValueError(f"{what} predicts {ens.classes} classes, test set has {data.classes}")


def cmd_attack(cfg: ExperimentConfig, out: Path, target_path, surrogate_path) -> dict:
    _, test_set = load_data(cfg)
    target = load_checkpoint(target_path)
    surrogate = load_checkpoint(surrogate_path)
    _check_compatible(target, test_set, "target")
    _check_compatible(surrogate, test_set, "surrogate")
    _prepare(out, cfg)
    result: RunMetrics = evaluate_transfer(target, surrogate, test_set, attack_grid(cfg))
    (out / "attack.csv").write_text(attack_csv(result.clean_accuracy, result.attacks))
    return {"clean_accuracy": result.clean_accuracy, "attacks": result.attacks}


def cmd_coherence(cfg: ExperimentConfig, out: Path, ckpt_path) -> dict:
    _, test_set = load_data(cfg)
    ens = load_checkpoint(ckpt_path)
    _check_compatible(ens, test_set, "ensemble")
    if len(ens) < 2:
        raise ValueError(f"coherence needs an ensemble of at least 2 members, got {len(ens)}")
    if cfg.analysis.coherence_limit:
        test_set = test_set.subset(slice(0, cfg.analysis.coherence_limit))
    _prepare(out, cfg)
    report = coherence_report(ens, test_set.images, test_set.labels, cfg.analysis.coherence_bins)
    (out / "coherence.csv").write_text(coherence_csv(report))
    (out / "coherence_hist.csv").write_text(coherence_hist_csv(report))
    summary = {"count": int(report.values.size), "median": report.median, "mean": float(report.values.mean())}
    (out / "coherence_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_gaas(cfg: ExperimentConfig, out: Path, ckpt_path) -> dict:
    _, test_set = load_data(cfg)
    ens = load_checkpoint(ckpt_path)
    _check_compatible(ens, test_set, "ensemble")
    if cfg.analysis.gaas_limit:
        test_set = test_set.subset(slice(0, cfg.analysis.gaas_limit))
    _prepare(out, cfg)
    a = cfg.analysis
    report = gaas_evaluate(ens, test_set.images, test_set.labels, a.gaas_orders, a.gaas_epsilons, a.gaas_correct_only)
    (out / "gaas.csv").write_text(gaas_csv(report))
    (out / "gaas_summary.csv").write_text(gaas_summary_csv(report))
    return {"settings": len(report.settings())}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divtrain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides seed)")
        return p

    common(sub.add_parser("train", help="train an ensemble and write its checkpoint"))
    p = common(sub.add_parser("attack", help="transfer attacks from a surrogate onto a target"))
    p.add_argument("--target", required=True)
    p.add_argument("--surrogate", required=True)
    p = common(sub.add_parser("coherence", help="per-input gradient coherence and histogram"))
    p.add_argument("--checkpoint", required=True)
    p = common(sub.add_parser("gaas", help="gradient-aligned adversarial subspace curves"))
    p.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.output_dir = args.out
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.output_dir)
    try:
        if args.command == "train":
            result = cmd_train(cfg, out)
        elif args.command == "attack":
            result = cmd_attack(cfg, out, args.target, args.surrogate)
        elif args.command == "coherence":
            result = cmd_coherence(cfg, out, args.checkpoint)
        else:
            result = cmd_gaas(cfg, out, args.checkpoint)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
