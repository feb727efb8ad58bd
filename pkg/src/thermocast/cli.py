"""``thermocast`` command line: synth, train, eval, compare, search, gradcheck.

Results go to stdout, progress and the resolved configuration to stderr.
Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck
from .data import SplitSpec, chronological_split, fit_scaler, apply_scaler, load_csv, make_windows, save_csv, synth_generate
from .errors import ConfigError, ContractError, DataError, NumericError
from .experiments import (
    MODEL_LABELS,
    SCALINGS,
    ExperimentSettings,
    model_config_for,
    prepare,
    random_search,
    report_text,
    emit_table,
    results_csv,
    run_experiment_matrix,
)
from .models import ModelConfig, build_forecaster, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate_mae, train

logger = logging.getLogger("thermocast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------- config


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(value: str, like):
    if isinstance(like, bool) or like in (bool,):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {value!r}")
    if like is None or isinstance(like, str):
        return None if value.lower() == "none" else value
    try:
        return type(like)(value)
    except ValueError:
        raise UsageError(f"cannot read {value!r} as {type(like).__name__}") from None


def _field_overrides(cls, prefix: str, values: dict[str, str], base) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for key, value in values.items():
        name = key[len(prefix) :]
        if name not in names:
            raise UsageError(f"unknown configuration key {key!r}")
        current = getattr(base, name)
        out[name] = _coerce(value, current if current is not None else "")
        if name == "room" and out[name] is not None:
            out[name] = int(out[name])
    return out


def _echo_config(args: argparse.Namespace) -> None:
    lines = [f"# thermocast {args.command}"]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "func", "config", "verbose"):
            continue
        if isinstance(value, dict):
            section = key.split("_")[0]  # model_overrides -> model.
            lines += [f"{section}.{k} = {v}" for k, v in sorted(value.items())]
        else:
            lines.append(f"{key} = {value}")
    print("\n".join(lines), file=sys.stderr)


# --------------------------------------------------------------------- data


def _load_dataset(args):
    if getattr(args, "data", None):
        path = Path(args.data)
        if path.is_dir():
            path = path / "data.csv"
        if not path.exists():
            raise DataError(f"dataset {path} not found")
        return load_csv(path)
    return synth_generate(rooms=args.rooms, hours=args.hours, seed=args.data_seed)


def _add_data_flags(p):
    p.add_argument("--data", help="CSV written by 'synth' (file or directory); synthesized when absent")
    p.add_argument("--rooms", type=int, default=4, help="rooms to synthesize without --data")
    p.add_argument("--hours", type=int, default=4000, help="hours to synthesize without --data")
    p.add_argument("--data-seed", type=int, default=0, help="seed for synthesized data")


def _add_train_flags(p):
    p.add_argument("--k", type=int, default=96, help="past window length")
    p.add_argument("--n", type=int, default=12, help="forecast horizon")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--loss", choices=("l1", "l2"), default="l1")
    p.add_argument("--clip", type=float, default=1.0, help="global gradient-norm limit")
    p.add_argument("--patience", type=int, default=10, help="early-stopping patience in epochs")
    p.add_argument("--train-stride", type=int, default=1, help="keep every s-th training window")
    p.add_argument("--eval-stride", type=int, default=1, help="keep every s-th validation window")


def _train_config(args, seed: int) -> TrainConfig:
    cfg = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=seed,
        loss=args.loss,
        gradient_clip=args.clip,
        early_stop_patience=args.patience,
    )
    return dataclasses.replace(cfg, **args.train_overrides)


def _settings(args, seed: int = 0) -> ExperimentSettings:
    return ExperimentSettings(
        k=args.k,
        n=args.n,
        model=dict(args.model_overrides),
        train=_train_config(args, seed),
        train_stride=args.train_stride,
        eval_stride=args.eval_stride,
    )


def _label(kind: str, scope: str, embedding: bool) -> str:
    if kind == "persistence":
        return "persistence"
    label = kind if embedding or kind == "lstm" else f"{kind}_ne"
    return f"{kind}_p" if scope == "local" else label


# ----------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    ds = synth_generate(rooms=args.rooms, hours=args.hours, seed=args.seed)
    out = Path(args.out)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "data.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(out, ds)
    print(f"wrote {out} ({len(ds)} hours, {len(ds.rooms)} rooms, {ds.n_series} series)")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.model == "persistence":
        raise ConfigError("the persistence model has nothing to train; use 'eval --model persistence'")
    if args.scope == "local" and args.room is None:
        raise ConfigError("--scope local needs --room")
    ds = _load_dataset(args)
    settings = _settings(args, args.seed)
    data = prepare(ds, args.scaling, settings)
    label = _label(args.model, args.scope, not args.no_embedding)
    room = args.room if args.scope == "local" else None
    if room is not None and room not in ds.room_ids:
        raise DataError(f"room {room} is not in the dataset (rooms {ds.room_ids})")
    config = model_config_for(label, ds, settings, room)
    tr, va, te = data.train, data.val, data.test
    if room is not None:
        tr, va, te = tr.for_room(room), va.for_room(room), te.for_room(room)
    model = build_forecaster(config, args.seed)
    result = train(model, tr, va, settings.train, log_every=1)
    out = Path(args.out)
    if out.suffix != ".npz":
        out.mkdir(parents=True, exist_ok=True)
        out = out / (f"{label}_{args.scaling}_seed{args.seed}" + (f"_room{room}" if room is not None else "") + ".npz")
    save_checkpoint(out, model, {"label": label, "scaling": args.scaling, "seed": args.seed, "room": room})
    print(f"checkpoint {out}")
    print(f"epochs {result.epochs_run} best_epoch {result.best_epoch}")
    print(f"val_mae {result.best_val_mae:.17g}")
    print(f"test_mae {evaluate_mae(model, te):.17g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.model is None):
        raise UsageError("eval needs exactly one of --checkpoint or --model persistence")
    ds = _load_dataset(args)
    room, scaling = None, args.scaling or "common"
    if args.checkpoint:
        model, extra = load_checkpoint(args.checkpoint)
        k, n = model.config.k, model.config.n
        room = model.config.room
        scaling = args.scaling or extra.get("scaling", "common")
    else:
        model = build_forecaster(ModelConfig(kind="persistence", n=args.n), 0)
        k, n = args.k, args.n
    parts = chronological_split(ds, SplitSpec(), min_length=k + n)
    view = dict(zip(("train", "val", "test"), parts))[args.split]
    scaler = fit_scaler(parts[0], scaling)
    windows = make_windows(apply_scaler(view, scaler), k, n)
    if room is not None:
        windows = windows.for_room(room)
    value = evaluate_mae(model, windows, scaler, space=args.space)
    print(f"{args.split}_mae {value:.17g}")
    return EXIT_OK


def cmd_compare(args) -> int:
    ds = _load_dataset(args)
    models = args.models.split(",") if args.models else list(MODEL_LABELS)
    scalings = args.scalings.split(",") if args.scalings else list(SCALINGS)
    for s in scalings:
        if s not in SCALINGS:
            raise ConfigError(f"unknown scaling {s!r}; expected one of {SCALINGS}")
    root = Path(args.run_root)
    stamp = time.strftime("%Y%m%dT%H%M%S")
    run_dir = root / f"seed{args.master_seed}_{stamp}"
    suffix = 1
    while run_dir.exists():
        suffix += 1
        run_dir = root / f"seed{args.master_seed}_{stamp}_{suffix}"
    run_dir.mkdir(parents=True)

    def progress(r):
        logger.info("%s/%s/seed %d: test MAE %.6f (%d epochs)", r.model_label, r.scaling, r.seed, r.test_mae, r.epochs_run)

    results = run_experiment_matrix(
        ds, models, scalings, args.seeds, _settings(args), args.master_seed, run_dir, args.jobs, progress
    )
    (run_dir / "results.csv").write_text(results_csv(results))
    (run_dir / "table.csv").write_text(emit_table(results).csv)
    text = report_text(results)
    (run_dir / "report.txt").write_text(text)
    sys.stdout.write(text)
    print(f"run directory {run_dir}")
    return EXIT_OK


def cmd_search(args) -> int:
    ds = _load_dataset(args)
    settings = _settings(args, args.seed)
    data = prepare(ds, args.scaling, settings)
    label = _label(args.model, "global", not args.no_embedding)
    base = model_config_for(label, ds, settings)
    res = random_search(data.train, data.val, base, settings.train, runs=args.runs, budget_epochs=args.budget_epochs, seed=args.seed)
    for t in res.trials:
        status = f"{t.val_mae:.6f}" if t.diverged is None else "diverged"
        logger.info("run %d %s %s", t.index, t.params, status)
    print(f"best_run = {res.best_index}")
    print(f"val_mae = {res.trials[res.best_index].val_mae:.17g}")
    for key, value in res.trials[res.best_index].params.items():
        section = "train" if key in {f.name for f in dataclasses.fields(TrainConfig)} else "model"
        print(f"{section}.{key} = {value!r}" if isinstance(value, float) else f"{section}.{key} = {value}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    only = args.only.split(",") if args.only else None
    results = gradcheck.run_gradcheck(args.seed, fault=args.fault, only=only)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"gradcheck FAILED for {', '.join(r.name for r in failed)}", file=sys.stderr)
        for r in failed:
            print(f"  {r.name}: worst error {r.worst_error:.3e} at {r.worst_at}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} gradient checks passed (tolerance {gradcheck.TOLERANCE:g})")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thermocast", description="Residual room-temperature forecasting experiments.")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key=value file; model.<field> and train.<field> keys also accepted")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write a synthetic building dataset as CSV plus schema sidecar")
    p.add_argument("--rooms", type=int, default=4)
    p.add_argument("--hours", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="directory (gets data.csv) or .csv path")

    p = add("train", cmd_train, "train one forecaster and save its checkpoint")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--model", choices=("transformer", "lstm", "persistence"), default="transformer")
    p.add_argument("--scope", choices=("global", "local"), default="global")
    p.add_argument("--room", type=int)
    p.add_argument("--no-embedding", action="store_true", help="transformer without room embedding (the LSTM never has one)")
    p.add_argument("--scaling", choices=SCALINGS, default="common")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="checkpoints", help="directory or .npz path")

    p = add("eval", cmd_eval, "MAE of a checkpoint or of persistence on one split")
    _add_data_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--model", choices=("persistence",))
    p.add_argument("--k", type=int, default=96)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--scaling", choices=SCALINGS, help="defaults to the checkpoint's scaling, else common")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--space", choices=("scaled", "unscaled"), default="scaled")

    p = add("compare", cmd_compare, "run the model x scaling x seed matrix and write the report")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--models", help=f"comma-separated subset of {','.join(MODEL_LABELS)}")
    p.add_argument("--scalings", help="comma-separated subset of common,individual")
    p.add_argument("--seeds", type=int, default=8)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--run-root", default="runs", help="parent of the per-run directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = add("search", cmd_search, "random hyperparameter search on the global model")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--model", choices=("transformer", "lstm"), default="transformer")
    p.add_argument("--no-embedding", action="store_true")
    p.add_argument("--scaling", choices=SCALINGS, default="common")
    p.add_argument("--runs", type=int, default=128)
    p.add_argument("--budget-epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every differentiable op and model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fault", help="corrupt this op's backward pass (self-test of the checker)")
    p.add_argument("--only", help="comma-separated subset of check names")
    return parser


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.model_overrides, args.train_overrides = {}, {}
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        dests = {a.dest for a in sub._actions}
        plain = {}
        for key, value in values.items():
            if key.startswith(("model.", "train.")):
                continue
            if key not in dests or key in ("help", "config"):
                raise UsageError(f"{args.config}: unknown configuration key {key!r} for '{args.command}'")
            plain[key] = value
        # command-line flags win over the file: re-parse with file values as defaults
        defaults = {}
        for action in sub._actions:
            if action.dest in plain:
                raw = plain[action.dest]
                if raw.lower() == "none":
                    defaults[action.dest] = None
                elif isinstance(action, argparse._StoreTrueAction):
                    defaults[action.dest] = _coerce(raw, False)
                else:
                    defaults[action.dest] = action.type(raw) if action.type else raw
                    if action.choices and defaults[action.dest] not in action.choices:
                        raise UsageError(f"{args.config}: {action.dest}={raw!r} not in {list(action.choices)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
        args.model_overrides = _field_overrides(
            ModelConfig, "model.", {k: v for k, v in values.items() if k.startswith("model.")}, ModelConfig()
        )
        args.train_overrides = _field_overrides(
            TrainConfig, "train.", {k: v for k, v in values.items() if k.startswith("train.")}, TrainConfig()
        )
    return args


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    np.seterr(all="ignore")
    _echo_config(args)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, KeyError, IndexError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
