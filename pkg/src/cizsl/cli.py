"""Command-line entry point wiring all modules into reproducible experiments.

Commands: train, eval, retrieve, synth, gradcheck, sweep-lambda.
Exit codes: 0 success, 1 configuration or input error, 2 runtime or
numerical failure. All commands are deterministic given their config files
(including the seed). Floating-point stdout is printed with 6 significant
digits; the training history CSV keeps full precision for byte-exact
regression comparison.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .data import SyntheticConfig, class_means, load_dataset, make_synthetic, save_dataset
from .errors import (CizslError, DatasetFormatError, InvalidConfigError,
                     InvalidInputError, InvalidSplitError, OracleFailureError,
                     TrainingDivergedError)
from .evaluate import (ClassCenters, curve_csv, curve_svg, harmonic_mean,
                       retrieval_precision, seen_unseen_curve, synthesize_centers,
                       zsl_top1)
from .gradcheck import run_gradient_contract
from .net import load_checkpoint, save_checkpoint
from .numerics import RngStream, STREAM_EVAL
from .train import TrainConfig, cross_validate_lambda, train

_INPUT_ERRORS = (InvalidConfigError, InvalidInputError, InvalidSplitError,
                 DatasetFormatError)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


@dataclasses.dataclass(frozen=True)
class EvalOptions:
    samples_per_center: int = 60
    metric: str = "l2"
    calibration_points: int = 201
    retrieval_ratios: tuple[float, ...] = (0.25, 0.5, 1.0)

    def validate(self) -> "EvalOptions":
        if self.samples_per_center < 1:
            raise InvalidConfigError("eval.samples_per_center must be >= 1")
        if self.metric not in ("l2", "cosine"):
            raise InvalidConfigError(f"eval.metric must be l2 or cosine, got {self.metric!r}")
        if self.calibration_points < 1:
            raise InvalidConfigError("eval.calibration_points must be >= 1")
        return self


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = TrainConfig()
    eval: EvalOptions = EvalOptions()
    dataset_path: str | None = None
    synthetic: SyntheticConfig | None = None
    out_dir: str = "run"

    def validate(self) -> "ExperimentConfig":
        if (self.dataset_path is None) == (self.synthetic is None):
            raise InvalidConfigError(
                "config must set exactly one of 'dataset' / 'synthetic'")
        self.train.validate()
        self.eval.validate()
        if self.synthetic is not None:
            self.synthetic.validate()
        return self

    def load_data(self):
        if self.dataset_path is not None:
            return load_dataset(self.dataset_path)
        return make_synthetic(self.synthetic)


def _build_section(cls, raw: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in fields:
            raise InvalidConfigError(f"unknown field {section}.{key!r}")
    cleaned = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        cleaned[key] = value
    try:
        return cls(**cleaned)
    except TypeError as e:
        raise InvalidConfigError(f"bad {section} section: {e}") from e


def default_config_dict() -> dict:
    cfg = ExperimentConfig(synthetic=SyntheticConfig())
    out = {
        "synthetic": dataclasses.asdict(cfg.synthetic),
        "train": dataclasses.asdict(cfg.train),
        "eval": dataclasses.asdict(cfg.eval),
        "out_dir": cfg.out_dir,
    }
    out["eval"]["retrieval_ratios"] = list(cfg.eval.retrieval_ratios)
    return out


def load_experiment_config(path, seed: int | None = None,
                           out_dir: str | None = None) -> ExperimentConfig:
    """Parse a JSON experiment file; flags override file values."""
    path = Path(path)
    if not path.exists():
        raise InvalidConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise InvalidConfigError("config root must be a JSON object")
    known = {"dataset", "synthetic", "train", "eval", "out_dir"}
    for key in raw:
        if key not in known:
            raise InvalidConfigError(f"unknown top-level config field {key!r}")
    train_cfg = _build_section(TrainConfig, raw.get("train", {}), "train")
    eval_cfg = _build_section(EvalOptions, raw.get("eval", {}), "eval")
    synth_cfg = None
    if "synthetic" in raw:
        synth_cfg = _build_section(SyntheticConfig, raw["synthetic"], "synthetic")
    if seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=seed)
        if synth_cfg is not None:
            synth_cfg = dataclasses.replace(synth_cfg, seed=seed)
    cfg = ExperimentConfig(
        train=train_cfg, eval=eval_cfg,
        dataset_path=raw.get("dataset"),
        synthetic=synth_cfg,
        out_dir=out_dir if out_dir is not None else raw.get("out_dir", "run"),
    )
    return cfg.validate()


def _config_snapshot(cfg: ExperimentConfig) -> str:
    out = {
        "train": dataclasses.asdict(cfg.train),
        "eval": {**dataclasses.asdict(cfg.eval),
                 "retrieval_ratios": list(cfg.eval.retrieval_ratios)},
        "out_dir": cfg.out_dir,
    }
    if cfg.dataset_path is not None:
        out["dataset"] = cfg.dataset_path
    if cfg.synthetic is not None:
        out["synthetic"] = dataclasses.asdict(cfg.synthetic)
    return json.dumps(out, indent=1, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config, seed=args.seed, out_dir=args.out)
    dataset = cfg.load_data()
    run_dir = Path(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(_config_snapshot(cfg))

    def snap(it, gen, disc, div):
        save_checkpoint(run_dir / f"checkpoint_{it:06d}.czsl", gen, disc)

    model = train(dataset, cfg.train, snapshot_fn=snap)
    (run_dir / "history.csv").write_text(model.history.to_csv())
    save_checkpoint(run_dir / "checkpoint_final.czsl", model.generator,
                    model.discriminator)
    print(f"steps={cfg.train.n_steps}")
    if model.history.iteration.size:
        print(f"final_loss_g={_fmt(model.history.loss_g[-1])}")
        print(f"final_loss_d={_fmt(model.history.loss_d[-1])}")
        print(f"final_gamma={_fmt(model.history.gamma[-1])}")
        print(f"final_beta={_fmt(model.history.beta[-1])}")
    print(f"run_dir={run_dir}")
    return 0


def _load_eval_inputs(args):
    cfg = load_experiment_config(args.config, seed=args.seed, out_dir=args.out)
    dataset = cfg.load_data()
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise InvalidInputError(f"checkpoint not found: {ckpt}")
    gen, disc = load_checkpoint(ckpt)
    if gen.text_dim != dataset.text_dim or gen.output_dim != dataset.feature_dim:
        raise InvalidInputError(
            f"checkpoint dims (text {gen.text_dim}, feature {gen.output_dim}) do not "
            f"match dataset (text {dataset.text_dim}, feature {dataset.feature_dim})")
    return cfg, dataset, gen, disc


def _unseen_centers(cfg, dataset, gen) -> ClassCenters:
    descriptors = {int(c): dataset.descriptor_of(int(c))
                   for c in dataset.unseen_class_ids}
    if not descriptors:
        raise InvalidInputError("dataset has no unseen classes to evaluate")
    return synthesize_centers(gen, descriptors, cfg.eval.samples_per_center,
                              RngStream(cfg.train.seed, STREAM_EVAL))


def cmd_eval(args) -> int:
    cfg, dataset, gen, _ = _load_eval_inputs(args)
    unseen_centers = _unseen_centers(cfg, dataset, gen)
    unseen_rows = np.isin(dataset.labels, dataset.unseen_class_ids)
    if not np.any(unseen_rows):
        raise InvalidInputError("dataset has no unseen-class test instances")
    top1 = zsl_top1(dataset.features[unseen_rows], dataset.labels[unseen_rows],
                    unseen_centers, metric=cfg.eval.metric)

    seen_ids = np.sort(dataset.seen_class_ids)
    seen_centers = ClassCenters(class_ids=seen_ids,
                                centers=class_means(dataset, seen_ids))
    curve = seen_unseen_curve(dataset.features, dataset.labels, seen_centers,
                              unseen_centers, metric=cfg.eval.metric,
                              n_points=cfg.eval.calibration_points)
    zero = seen_unseen_curve(dataset.features, dataset.labels, seen_centers,
                             unseen_centers, calibrations=np.array([0.0]),
                             metric=cfg.eval.metric)
    h = harmonic_mean(float(zero.seen_acc[1]), float(zero.unseen_acc[1]))

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "curve.csv").write_text(curve_csv(curve))
    (out_dir / "curve.svg").write_text(curve_svg(curve))
    print(f"top1={_fmt(top1)}")
    print(f"su_auc={_fmt(curve.auc)}")
    print(f"harmonic_mean={_fmt(h)}")
    return 0


def cmd_retrieve(args) -> int:
    cfg, dataset, gen, _ = _load_eval_inputs(args)
    unseen_centers = _unseen_centers(cfg, dataset, gen)
    ratios = cfg.eval.retrieval_ratios
    if args.ratios:
        ratios = tuple(float(r) for r in args.ratios.split(","))
    precisions = retrieval_precision(dataset.features, dataset.labels,
                                     unseen_centers, ratios=ratios,
                                     metric=cfg.eval.metric)
    for ratio in ratios:
        print(f"precision_at_{_fmt(ratio)}={_fmt(precisions[float(ratio)])}")
    return 0


def cmd_synth(args) -> int:
    if args.example_config:
        print(json.dumps(default_config_dict(), indent=1, sort_keys=True))
        return 0
    if not args.config or not args.out:
        raise InvalidConfigError("synth requires --config and --out (or --example-config)")
    cfg = load_experiment_config(args.config, seed=args.seed, out_dir=args.out)
    if cfg.synthetic is None:
        raise InvalidConfigError("synth requires a 'synthetic' config section")
    dataset = make_synthetic(cfg.synthetic)
    manifest = Path(args.out)
    if manifest.suffix != ".json":
        manifest = manifest / "dataset.json"
    save_dataset(dataset, manifest)
    print(f"manifest={manifest}")
    print(f"classes={dataset.class_ids.size}")
    print(f"instances={dataset.n_instances}")
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradient_contract(seed=args.seed or 0, corrupt=args.corrupt)
    for line in report.lines():
        print(line)
    if not report.passed:
        print("gradcheck FAILED")
        return 2
    print("gradcheck OK")
    return 0


def cmd_sweep_lambda(args) -> int:
    cfg = load_experiment_config(args.config, seed=args.seed, out_dir=args.out)
    dataset = cfg.load_data()
    grid = [float(x) for x in args.grid.split(",") if x.strip() != ""]
    best, rows = cross_validate_lambda(dataset, cfg.train, grid)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["lambda,iteration,val_auc"]
    lines += [f"{_fmt(lam)},{it},{_fmt(auc)}" for lam, it, auc in rows]
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    print(f"best_lambda={_fmt(best)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cizsl",
        description="Creativity-regularized zero-shot feature generation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")

    p = sub.add_parser("train", help="run a training experiment")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="zero-shot and generalized metrics")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("retrieve", help="per-class retrieval precision")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ratios", default=None, help="comma list, default 0.25,0.5,1.0")
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    common(p)
    p.add_argument("--example-config", action="store_true",
                   help="print a full-defaults config template and exit")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference contract over all losses")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true",
                   help="debug: corrupt one gradient to exercise the harness")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep-lambda", help="cross-validate the creativity weight")
    common(p)
    p.add_argument("--grid", default="0.01,0.1,1,10")
    p.set_defaults(fn=cmd_sweep_lambda)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("train", "eval", "retrieve", "sweep-lambda") \
                and not args.config:
            raise InvalidConfigError(f"{args.command} requires --config")
        return args.fn(args)
    except _INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OracleFailureError, CizslError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
