"""Command-line entry point: train, inspect, gradcheck.

Configuration is a flat key=value file; command-line flags override file
values, and every training run writes the fully resolved configuration
to `config_echo.txt` in the output directory. Re-running with
`--config <echo>` reproduces the run (summary.csv is byte-identical for
the same build).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace

from .dataset import DatasetError, load_tu_dataset
from .gradcheck import model_gradcheck
from .model import config_for, init_params, save_checkpoint
from .training import TrainConfig, default_learning_rate, run_cv
from .unify import Strategy, resolve_plan

__all__ = ["RunConfig", "main", "cmd_train", "cmd_inspect", "cmd_gradcheck"]

ECHO_NAME = "config_echo.txt"

# field name -> (kind, default, help); kind governs parsing and echo
_FIELD_SPEC = {
    "dataset": ("str", "", "dataset name, e.g. MUTAG"),
    "data_dir": ("str", "", "directory holding the dataset files "
                            "(fallback: SEGBERT_DATA_DIR)"),
    "strategy": ("str", "segment-shifting",
                 "size unification: full-input | padding-pruning | "
                 "segment-shifting"),
    "k": ("optint", None, "input portal size override"),
    "residual": ("str", "none", "graph residual mode: none | raw"),
    "hidden": ("int", 32, "hidden width"),
    "heads": ("int", 2, "attention heads"),
    "layers": ("int", 2, "transformer layers"),
    "intermediate": ("int", 32, "feed-forward inner width"),
    "dropout_hidden": ("float", 0.5, "dropout after the feed-forward block"),
    "dropout_attn": ("float", 0.3, "dropout on attention probabilities"),
    "wl_iterations": ("int", 2, "structural-role refinement rounds"),
    "lr": ("optfloat", None, "learning rate (default by dataset family)"),
    "weight_decay": ("float", 5e-4, "decoupled weight decay"),
    "epochs": ("int", 500, "maximum training epochs per fold"),
    "patience": ("int", 50, "early-stop patience in epochs"),
    "batch_size": ("int", 32, "graphs per mini-batch"),
    "seed": ("int", 0, "master seed"),
    "pretrain": ("str", "", "comma list of pre-training tasks: "
                            "structure,reconstruction (empty = off)"),
    "pretrain_epochs": ("int", 50, "pre-training epochs"),
    "grad_clip": ("optfloat", None, "global gradient-norm cap (off if unset)"),
    "jobs": ("int", 1, "parallel fold workers"),
    "out": ("str", "", "output directory (default runs/<dataset>)"),
    "checkpoint": ("str", "", "write best-validation fold parameters here"),
}


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    data_dir: str = ""
    strategy: str = "segment-shifting"
    k: int | None = None
    residual: str = "none"
    hidden: int = 32
    heads: int = 2
    layers: int = 2
    intermediate: int = 32
    dropout_hidden: float = 0.5
    dropout_attn: float = 0.3
    wl_iterations: int = 2
    lr: float | None = None
    weight_decay: float = 5e-4
    epochs: int = 500
    patience: int = 50
    batch_size: int = 32
    seed: int = 0
    pretrain: str = ""
    pretrain_epochs: int = 50
    grad_clip: float | None = None
    jobs: int = 1
    out: str = ""
    checkpoint: str = ""

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                text = ""
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"


def _parse_value(kind: str, raw: str):
    raw = raw.strip()
    if kind in ("optint", "optfloat") and raw == "":
        return None
    if kind in ("int", "optint"):
        return int(raw)
    if kind in ("float", "optfloat"):
        return float(raw)
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat key=value lines; '#' starts a comment, blanks are skipped."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{source}:{lineno}: expected key=value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_SPEC:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        kind = _FIELD_SPEC[key][0]
        try:
            values[key] = _parse_value(kind, raw)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: "
                             f"{exc}") from exc
    return values


def config_from_text(text: str, source: str = "<config>") -> RunConfig:
    return RunConfig(**parse_config_text(text, source))


def _merge_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < explicit flags."""
    values = {name: spec[1] for name, spec in _FIELD_SPEC.items()}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read(), args.config))
    for name in _FIELD_SPEC:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    return RunConfig(**values)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags "
                        "override its entries")
    for name, (kind, _default, help_text) in _FIELD_SPEC.items():
        flag = "--" + name.replace("_", "-")
        kwargs = {"help": help_text, "default": None, "dest": name}
        if kind in ("int", "optint"):
            kwargs["type"] = int
        elif kind in ("float", "optfloat"):
            kwargs["type"] = float
        if name == "strategy":
            kwargs["choices"] = [s.value for s in Strategy]
        if name == "residual":
            kwargs["choices"] = ["none", "raw"]
        parser.add_argument(flag, **kwargs)


def _resolve_data_dir(cfg: RunConfig) -> str:
    data_dir = cfg.data_dir or os.environ.get("SEGBERT_DATA_DIR", "")
    if not data_dir:
        raise DatasetError(
            "no data directory: pass --data-dir or set SEGBERT_DATA_DIR")
    nested = os.path.join(data_dir, cfg.dataset)
    if os.path.isfile(os.path.join(nested, cfg.dataset + "_A.txt")):
        return nested
    return data_dir


def _load(cfg: RunConfig):
    if not cfg.dataset:
        raise DatasetError("no dataset name given (use --dataset)")
    directory = _resolve_data_dir(cfg)
    return load_tu_dataset(directory, cfg.dataset), directory


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    dataset, directory = _load(cfg)
    plan = resolve_plan(dataset, Strategy(cfg.strategy), cfg.k)
    model_cfg = config_for(
        dataset, plan,
        hidden_dim=cfg.hidden,
        head_count=cfg.heads,
        layer_count=cfg.layers,
        intermediate_dim=cfg.intermediate,
        dropout_hidden=cfg.dropout_hidden,
        dropout_attention=cfg.dropout_attn,
        residual_mode=cfg.residual,
        wl_iterations=cfg.wl_iterations,
    )
    lr = cfg.lr if cfg.lr is not None else default_learning_rate(cfg.dataset)
    tasks = tuple(t for t in cfg.pretrain.split(",") if t)
    train_cfg = TrainConfig(
        learning_rate=lr,
        weight_decay=cfg.weight_decay,
        epochs=cfg.epochs,
        early_stop_patience=cfg.patience,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        pretrain_tasks=tasks,
        pretrain_epochs=cfg.pretrain_epochs,
        grad_clip=cfg.grad_clip,
    )
    out_dir = cfg.out or os.path.join("runs", cfg.dataset)
    resolved = replace(cfg, data_dir=directory, k=plan.k, lr=lr, out=out_dir,
                       strategy=plan.strategy.value)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, ECHO_NAME), "w", encoding="utf-8") as fh:
        fh.write(resolved.to_text())

    summary = run_cv(dataset, plan, model_cfg, train_cfg, out_dir=out_dir,
                     jobs=cfg.jobs)

    if cfg.checkpoint:
        best = min(summary.folds,
                   key=lambda r: (-r.best_val_accuracy, r.fold_index))
        params = init_params(model_cfg, seed=0)
        for name, tensor in params.items():
            tensor.value[...] = best.final_values[name]
        save_checkpoint(params, cfg.checkpoint)
        print(f"checkpoint (fold {best.fold_index}) -> {cfg.checkpoint}")

    print(f"{summary.dataset} {summary.strategy} k={summary.k} "
          f"residual={summary.residual_mode}: "
          f"mean test accuracy {100.0 * summary.mean_accuracy:.2f} "
          f"+/- {100.0 * summary.std_accuracy:.2f} "
          f"({summary.mean_fold_seconds:.1f} s/fold)")
    print(f"reports in {out_dir}")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    dataset, _ = _load(cfg)
    print(f"{dataset.name}: {len(dataset)} graphs, {dataset.class_count} "
          f"classes, avg {dataset.avg_nodes:.1f}, max {dataset.max_nodes}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    modes = ["none", "raw"] if args.residual == "both" else [args.residual]
    worst = 0.0
    ok = True
    for mode in modes:
        report = model_gradcheck(
            residual_mode=mode,
            hidden_dim=args.hidden,
            head_count=args.heads,
            layer_count=args.layers,
            intermediate_dim=args.intermediate,
            attr_dim=args.attr_dim,
            seed=args.seed,
            step=args.step,
            tolerance=args.tolerance,
        )
        print(f"residual={mode}")
        for line in report.lines():
            print("  " + line)
        worst = max(worst, report.worst)
        ok = ok and report.passed
        if not report.passed:
            bad = [n for n, e in report.errors.items()
                   if e >= report.tolerance]
            print(f"  FAILED groups: {', '.join(bad)}")
    print(f"worst relative error {worst:.3e} "
          f"({'pass' if ok else 'FAIL'} at {args.tolerance:g})")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="segbert",
        description="segmented graph transformer for graph-instance "
                    "classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="10-fold cross-validated training")
    _add_run_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_inspect = sub.add_parser("inspect", help="print dataset statistics")
    _add_run_flags(p_inspect)
    p_inspect.set_defaults(func=cmd_inspect)

    p_grad = sub.add_parser("gradcheck",
                            help="finite-difference gradient check")
    p_grad.add_argument("--residual", choices=["both", "none", "raw"],
                        default="both")
    p_grad.add_argument("--hidden", type=int, default=32)
    p_grad.add_argument("--heads", type=int, default=2)
    p_grad.add_argument("--layers", type=int, default=2)
    p_grad.add_argument("--intermediate", type=int, default=32)
    p_grad.add_argument("--attr-dim", type=int, default=3, dest="attr_dim")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.add_argument("--tolerance", type=float, default=1e-3)
    p_grad.set_defaults(func=cmd_gradcheck)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
