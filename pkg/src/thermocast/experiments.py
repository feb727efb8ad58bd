"""Experiment matrix over model variants, scaling strategies and seeds; result tables."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import BuildingDataset, ScalerState, SplitSpec, WindowSet, apply_scaler, chronological_split, fit_scaler, make_windows
from .errors import ConfigError, NumericError
from .models import ModelConfig, build_forecaster, load_checkpoint, save_checkpoint
from .stats import welch_t_test
from .training import TrainConfig, evaluate_mae, predict_windows, train

logger = logging.getLogger(__name__)

MODEL_LABELS = ("persistence", "lstm", "transformer", "transformer_ne", "lstm_p", "transformer_p")
SCALINGS = ("common", "individual")

# label -> (kind, room embedding, local)
_VARIANTS = {
    "persistence": ("persistence", False, False),
    "lstm": ("lstm", False, False),
    "transformer": ("transformer", True, False),
    "transformer_ne": ("transformer", False, False),
    "lstm_p": ("lstm", False, True),
    "transformer_p": ("transformer", True, True),
}


@dataclass
class ExperimentSettings:
    k: int = 96
    n: int = 12
    model: dict = field(default_factory=dict)  # ModelConfig overrides, e.g. {"lstm_layers": 2}
    train: TrainConfig = field(default_factory=TrainConfig)
    train_stride: int = 1
    eval_stride: int = 1
    split: SplitSpec = field(default_factory=SplitSpec)


@dataclass
class RunResult:
    model_label: str
    scaling: str
    seed: int
    test_mae: float
    val_mae: float
    epochs_run: int
    per_room: dict[int, float] = field(default_factory=dict)


def derive_seed(master_seed: int, label: str) -> int:
    """Stable per-cell seed from the master seed and a cell label."""
    state = np.random.SeedSequence([master_seed, zlib.crc32(label.encode())]).generate_state(1)
    return int(state[0])


def model_config_for(label: str, dataset: BuildingDataset, settings: ExperimentSettings, room: int | None = None) -> ModelConfig:
    if label not in _VARIANTS:
        raise ConfigError(f"unknown model label {label!r}; expected one of {MODEL_LABELS}")
    kind, embed, local = _VARIANTS[label]
    channels = dataset.window_channels
    base = dict(
        kind=kind,
        past_channels=len(channels),
        future_channels=sum(c.future_known for c in channels),
        num_rooms=max(dataset.room_ids) + 1,
        k=settings.k,
        n=settings.n,
        use_room_embedding=embed,
        scope="local" if local else "global",
        room=room if local else None,
    )
    base.update(settings.model)
    base["use_room_embedding"] = embed
    return ModelConfig(**base)


@dataclass
class PreparedData:
    scaling: str
    scaler: ScalerState
    train: WindowSet
    val: WindowSet
    test: WindowSet
    room_ids: list[int]


def prepare(dataset: BuildingDataset, scaling: str, settings: ExperimentSettings) -> PreparedData:
    """Split chronologically, fit the scaler on train, and cut windows."""
    k, n = settings.k, settings.n
    tr, va, te = chronological_split(dataset, settings.split, min_length=k + n)
    scaler = fit_scaler(tr, scaling)
    return PreparedData(
        scaling,
        scaler,
        make_windows(apply_scaler(tr, scaler), k, n, stride=settings.train_stride),
        make_windows(apply_scaler(va, scaler), k, n, stride=settings.eval_stride),
        make_windows(apply_scaler(te, scaler), k, n),
        dataset.room_ids,
    )


def _checkpoint_name(label: str, scaling: str, seed: int, room: int | None = None) -> str:
    suffix = f"_room{room}" if room is not None else ""
    return f"{label}_{scaling}_seed{seed}{suffix}.npz"


def _per_room(preds: np.ndarray, windows: WindowSet) -> dict[int, float]:
    rooms = windows.room_ids[windows.anchors[:, 0]]
    target = np.concatenate([b.target for b in windows.iter_batches(256)])
    return {int(r): float(np.mean(np.abs(target[rooms == r] - preds[rooms == r]))) for r in np.unique(rooms)}


def run_cell(
    label: str,
    seed: int,
    data: PreparedData,
    dataset: BuildingDataset,
    settings: ExperimentSettings,
    master_seed: int = 0,
    run_dir: str | Path | None = None,
) -> RunResult:
    """Train (unless persistence) and evaluate one (model, scaling, seed) cell."""
    cell = f"{label}/{data.scaling}/{seed}"
    kind, _, local = _VARIANTS[label]
    if kind == "persistence":
        model = build_forecaster(model_config_for(label, dataset, settings), 0)
        preds = predict_windows(model, data.test)
        return RunResult(
            label, data.scaling, seed, evaluate_mae(model, data.test), evaluate_mae(model, data.val), 0, _per_room(preds, data.test)
        )

    groups = [(r, data.train.for_room(r), data.val.for_room(r), data.test.for_room(r)) for r in data.room_ids] if local else [
        (None, data.train, data.val, data.test)
    ]
    abs_test, n_test, abs_val, n_val, epochs = 0.0, 0, 0.0, 0, 0
    per_room: dict[int, float] = {}
    for room, tr_w, va_w, te_w in groups:
        tag = cell if room is None else f"{cell}/room{room}"
        cell_seed = derive_seed(master_seed, tag)
        model = build_forecaster(model_config_for(label, dataset, settings, room), cell_seed)
        cfg = replace(settings.train, seed=cell_seed)
        result = train(model, tr_w, va_w, cfg)
        epochs = max(epochs, result.epochs_run)
        preds = predict_windows(model, te_w)
        target = np.concatenate([b.target for b in te_w.iter_batches(256)])
        abs_test += float(np.abs(target - preds).sum())
        n_test += target.size
        v = evaluate_mae(model, va_w)
        abs_val += v * len(va_w) * settings.n
        n_val += len(va_w) * settings.n
        per_room.update(_per_room(preds, te_w))
        if run_dir is not None:
            save_checkpoint(
                Path(run_dir) / _checkpoint_name(label, data.scaling, seed, room),
                model,
                {"label": label, "scaling": data.scaling, "seed": seed, "room": room},
            )
        logger.info("%s done: %d epochs, best epoch %d", tag, result.epochs_run, result.best_epoch)
    return RunResult(label, data.scaling, seed, abs_test / n_test, abs_val / n_val, epochs, per_room)


def _run_cell_job(args):
    return run_cell(*args)


def run_experiment_matrix(
    dataset: BuildingDataset,
    models: Sequence[str] = MODEL_LABELS,
    scalings: Sequence[str] = SCALINGS,
    seeds: int | Sequence[int] = 8,
    settings: ExperimentSettings | None = None,
    master_seed: int = 0,
    run_dir: str | Path | None = None,
    jobs: int = 1,
    progress: Callable[[RunResult], None] | None = None,
) -> list[RunResult]:
    """Every (model, scaling, seed) cell; persistence runs once per scaling.

    Global models train on all rooms' windows pooled; ``_p`` models train one
    model per room and report the MAE pooled over all rooms' test windows.
    """
    settings = settings or ExperimentSettings()
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    for label in models:
        if label not in _VARIANTS:
            raise ConfigError(f"unknown model label {label!r}; expected one of {MODEL_LABELS}")
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
    jobs_list = []
    for scaling in scalings:
        data = prepare(dataset, scaling, settings)
        for label in models:
            cell_seeds = seed_list[:1] if label == "persistence" else seed_list
            for seed in cell_seeds:
                jobs_list.append((label, seed, data, dataset, settings, master_seed, run_dir))
    results: list[RunResult] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_run_cell_job, jobs_list):
                results.append(res)
                if progress:
                    progress(res)
    else:
        for job in jobs_list:
            res = _run_cell_job(job)
            results.append(res)
            if progress:
                progress(res)
    return results


def recompute_test_mae(result: RunResult, run_dir: str | Path, data: PreparedData) -> float:
    """Test MAE of a cell rebuilt from its saved checkpoint(s)."""
    kind, _, local = _VARIANTS[result.model_label]
    if kind == "persistence":
        raise ConfigError("persistence cells have no checkpoint")
    rooms = data.room_ids if local else [None]
    abs_sum, count = 0.0, 0
    for room in rooms:
        model, _ = load_checkpoint(Path(run_dir) / _checkpoint_name(result.model_label, result.scaling, result.seed, room))
        windows = data.test if room is None else data.test.for_room(room)
        preds = predict_windows(model, windows)
        target = np.concatenate([b.target for b in windows.iter_batches(256)])
        abs_sum += float(np.abs(target - preds).sum())
        count += target.size
    return abs_sum / count


# -------------------------------------------------------------------- reports

RESULT_COLUMNS = ("model", "scaling", "seed", "val_mae", "test_mae", "epochs")


def _f17(x: float) -> str:
    return format(x, ".17g")


def results_csv(results: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in results:
        w.writerow([r.model_label, r.scaling, r.seed, _f17(r.val_mae), _f17(r.test_mae), r.epochs_run])
    return buf.getvalue()


def read_results_csv(text: str) -> list[RunResult]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        RunResult(r["model"], r["scaling"], int(r["seed"]), float(r["test_mae"]), float(r["val_mae"]), int(r["epochs"]))
        for r in rows
    ]


def format_mae(x: float) -> str:
    """Six decimals, rounding half to even on the shortest decimal form of ``x``."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.000001"), rounding=ROUND_HALF_EVEN))


@dataclass
class SummaryRow:
    model_label: str
    scaling: str
    mean_mae: float
    std_mae: float | None
    runs: int


@dataclass
class PairwiseTest:
    scaling: str
    model_a: str
    model_b: str
    t_statistic: float
    df: float
    p_value: float


@dataclass
class ComparisonReport:
    rows: list[SummaryRow]
    pairwise: list[PairwiseTest]
    per_room: dict[tuple[str, str], dict[int, float]] = field(default_factory=dict)

    def row(self, label: str, scaling: str) -> SummaryRow:
        for r in self.rows:
            if r.model_label == label and r.scaling == scaling:
                return r
        raise KeyError(f"no row for {label}/{scaling}")


def _group(results: Sequence[RunResult]) -> dict[tuple[str, str], list[RunResult]]:
    groups: dict[tuple[str, str], list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.scaling, r.model_label), []).append(r)
    return groups


def build_report(results: Sequence[RunResult]) -> ComparisonReport:
    """Mean and sample std (ddof=1) per model and scaling, Welch tests between every pair."""
    groups = _group(results)
    rows = []
    for (scaling, label), runs in groups.items():
        maes = [r.test_mae for r in runs]
        std = float(np.std(maes, ddof=1)) if len(maes) >= 2 else None
        rows.append(SummaryRow(label, scaling, float(np.mean(maes)), std, len(maes)))
    pairwise = []
    scalings = list(dict.fromkeys(s for s, _ in groups))
    for scaling in scalings:
        labels = [label for s, label in groups if s == scaling and len(groups[(s, label)]) >= 2]
        for a, b in itertools.combinations(labels, 2):
            res = welch_t_test([r.test_mae for r in groups[(scaling, a)]], [r.test_mae for r in groups[(scaling, b)]])
            pairwise.append(PairwiseTest(scaling, a, b, res.t, res.df, res.p))
    per_room = {}
    for (scaling, label), runs in groups.items():
        if label.endswith("_p") and all(r.per_room for r in runs):
            rooms = sorted(runs[0].per_room)
            per_room[(label, scaling)] = {rid: float(np.mean([r.per_room[rid] for r in runs])) for rid in rooms}
    return ComparisonReport(rows, pairwise, per_room)


@dataclass
class TableOutput:
    text: str
    csv: str


def emit_table(results: Sequence[RunResult]) -> TableOutput:
    """Per scaling: model, mean MAE, std; sorted by descending MAE, best row starred."""
    report = build_report(results)
    scalings = list(dict.fromkeys(r.scaling for r in report.rows))
    lines = []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scaling", "model", "mean_mae", "std_mae", "runs", "best"])
    for scaling in scalings:
        rows = sorted((r for r in report.rows if r.scaling == scaling), key=lambda r: -r.mean_mae)
        best = min(r.mean_mae for r in rows)
        lines.append(f"{scaling} scaling")
        lines.append(f"  {'Model':>16}  {'MAE':>10}  {'Std':>10}")
        for r in rows:
            std = format_mae(r.std_mae) if r.std_mae is not None else "--"
            mark = " *" if r.mean_mae == best else ""
            lines.append(f"  {r.model_label:>16}  {format_mae(r.mean_mae):>10}  {std:>10}{mark}")
            w.writerow([scaling, r.model_label, format_mae(r.mean_mae), "" if r.std_mae is None else format_mae(r.std_mae), r.runs, int(r.mean_mae == best)])
        lines.append("")
    return TableOutput("\n".join(lines), buf.getvalue())


def improvement(worse: float, better: float) -> float:
    """Relative reduction of MAE in percent."""
    return 100.0 * (worse - better) / worse


def report_text(results: Sequence[RunResult]) -> str:
    report = build_report(results)
    out = [emit_table(results).text, "Pairwise Welch t-tests on per-seed test MAE"]
    for p in report.pairwise:
        out.append(f"  [{p.scaling}] {p.model_a} vs {p.model_b}: t={p.t_statistic:.4f} df={p.df:.2f} p={p.p_value:.3e}")
    out.append("")
    labels = {(r.model_label, r.scaling) for r in report.rows}
    lines = []
    for scaling in dict.fromkeys(r.scaling for r in report.rows):
        for glob in ("lstm", "transformer"):
            if (glob, scaling) in labels and (f"{glob}_p", scaling) in labels:
                g = report.row(glob, scaling).mean_mae
                p = report.row(f"{glob}_p", scaling).mean_mae
                lines.append(f"  [{scaling}] global {glob} vs local: {improvement(p, g):+.1f}% MAE reduction")
    if lines:
        out += ["Global vs local"] + lines + [""]
    for (label, scaling), rooms in report.per_room.items():
        out.append(f"Per-room test MAE, {label} [{scaling}]")
        out += [f"  room {rid}: {format_mae(v)}" for rid, v in rooms.items()]
    return "\n".join(out).rstrip() + "\n"


# -------------------------------------------------------------- random search


@dataclass
class SearchTrial:
    index: int
    params: dict
    val_mae: float
    diverged: str | None = None


@dataclass
class SearchResult:
    train_config: TrainConfig
    model_config: ModelConfig
    best_index: int
    trials: list[SearchTrial]


def sample_space(space: dict, rng: np.random.Generator) -> dict:
    """Draw one configuration.

    Each entry is a list of choices, ``("log", lo, hi)``, ``("uniform", lo, hi)``
    or ``("int", lo, hi)`` (inclusive).  Keys are sampled in sorted order.
    """
    out = {}
    for key in sorted(space):
        spec = space[key]
        if isinstance(spec, list):
            out[key] = spec[int(rng.integers(len(spec)))]
        elif spec[0] == "log":
            out[key] = float(math.exp(rng.uniform(math.log(spec[1]), math.log(spec[2]))))
        elif spec[0] == "uniform":
            out[key] = float(rng.uniform(spec[1], spec[2]))
        elif spec[0] == "int":
            out[key] = int(rng.integers(spec[1], spec[2] + 1))
        else:
            raise ConfigError(f"bad search space entry for {key!r}: {spec!r}")
    return out


DEFAULT_SPACE = {
    "learning_rate": ("log", 1e-4, 1e-2),
    "batch_size": [16, 32, 64],
}


def random_search(
    train_windows: WindowSet,
    val_windows: WindowSet,
    base_model: ModelConfig,
    base_train: TrainConfig,
    space: dict | None = None,
    runs: int = 128,
    budget_epochs: int = 5,
    seed: int = 0,
) -> SearchResult:
    """Uniform random search (log-uniform where requested) on the global model.

    The trial with the lowest validation MAE wins; ties go to the earliest run.
    """
    if runs < 1:
        raise ConfigError("random search needs at least one run")
    space = DEFAULT_SPACE if space is None else space
    train_keys = {f.name for f in fields(TrainConfig)}
    model_keys = {f.name for f in fields(ModelConfig)}
    unknown = set(space) - train_keys - model_keys
    if unknown:
        raise ConfigError(f"search space names unknown hyperparameters {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    trials: list[SearchTrial] = []
    best = None
    for i in range(runs):
        params = sample_space(space, rng)
        tcfg = replace(base_train, epochs=budget_epochs, seed=derive_seed(seed, f"search/{i}"),
                       **{k: v for k, v in params.items() if k in train_keys})
        mcfg = replace(base_model, **{k: v for k, v in params.items() if k in model_keys})
        try:
            model = build_forecaster(mcfg, tcfg.seed)
            train(model, train_windows, val_windows, tcfg)
            score = evaluate_mae(model, val_windows)
            trial = SearchTrial(i, params, score)
        except NumericError as exc:
            trial = SearchTrial(i, params, float("nan"), str(exc))
        trials.append(trial)
        if trial.diverged is None and (best is None or trial.val_mae < best[0]):
            best = (trial.val_mae, i, tcfg, mcfg)
    if best is None:
        raise NumericError("every search run diverged:\n" + "\n".join(f"  run {t.index}: {t.diverged}" for t in trials))
    return SearchResult(best[2], best[3], best[1], trials)


def settings_to_dict(settings: ExperimentSettings) -> dict:
    d = asdict(settings)
    d["split"] = list(settings.split.fractions)
    return d
