"""Training loop and MAE evaluation for residual forecasters."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ScalerState, WindowSet, unscale_values
from .errors import ConfigError, ContractError, DataError, NumericError
from .models import Forecaster, PersistenceForecaster
from .tensor import Tensor, parameters_finite

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    loss: str = "l1"
    gradient_clip: float = 1.0
    early_stop_patience: int = 10

    def __post_init__(self):
        if self.loss not in ("l1", "l2"):
            raise ConfigError(f"loss must be 'l1' or 'l2', got {self.loss!r}")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.gradient_clip <= 0:
            raise ConfigError("learning_rate, batch_size and gradient_clip must be positive")
        if self.epochs < 0 or self.early_stop_patience <= 0:
            raise ConfigError("epochs must be >= 0 and early_stop_patience > 0")


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


def residual_loss(model: Forecaster, batch, loss: str = "l1") -> Tensor:
    """Loss between predicted residual and ``target - last_value``."""
    pred = model.residual(batch)
    goal = batch.target - batch.last_value[:, None]
    diff = pred - goal
    return T.reduce_mean(T.absolute(diff) if loss == "l1" else diff * diff)


@dataclass
class TrainResult:
    model: Forecaster
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("nan")

    @property
    def epochs_run(self) -> int:
        return len(self.history)

    @property
    def losses(self) -> list[float]:
        return [h["train_loss"] for h in self.history]


def train(
    model: Forecaster,
    train_windows: WindowSet,
    val_windows: WindowSet | None,
    config: TrainConfig,
    log_every: int = 0,
) -> TrainResult:
    """Fit ``model`` with Adam; returns it holding its best-validation parameters.

    Without validation windows the best epoch is chosen by training loss.
    """
    if isinstance(model, PersistenceForecaster):
        raise ContractError("the persistence model has nothing to train")
    if len(train_windows) == 0:
        raise DataError("no training windows")
    params = dict(model.named_parameters())
    plist = list(params.values())
    opt = Adam(plist, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    has_val = val_windows is not None and len(val_windows) > 0

    result = TrainResult(model)
    best_state = model.state_dict()
    best_score = evaluate_mae(model, val_windows) if has_val and config.epochs > 0 else float("inf")
    result.best_val_mae = best_score
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_windows))
        total, count = 0.0, 0
        for bi, batch in enumerate(train_windows.iter_batches(config.batch_size, order)):
            model.zero_grad()
            loss = residual_loss(model, batch, config.loss)
            value = loss.item()
            if not np.isfinite(value):
                culprit = parameters_finite(params.items()) or "loss"
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}; first non-finite tensor: {culprit}")
            T.backward(loss)
            culprit = parameters_finite(params.items())
            if culprit:
                raise NumericError(f"non-finite gradient at epoch {epoch}, batch {bi}; first non-finite tensor: {culprit}")
            clip_global_norm(plist, config.gradient_clip)
            opt.step()
            total += value * len(batch)
            count += len(batch)
        train_loss = total / count
        val_mae = evaluate_mae(model, val_windows) if has_val else float("nan")
        score = val_mae if has_val else train_loss
        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_mae": val_mae})
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d train_loss %.6f val_mae %.6f", epoch, train_loss, val_mae)
        if score < best_score:
            best_score, best_state, stale = score, model.state_dict(), 0
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    model.load_state_dict(best_state)
    result.best_val_mae = best_score if has_val else float("nan")
    return result


def predict_windows(model: Forecaster, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
    return np.concatenate([model.predict(b) for b in windows.iter_batches(batch_size)]) if len(windows) else np.zeros((0, 0))


def mae(y, y_hat) -> float:
    y, y_hat = np.asarray(y, dtype=np.float64), np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ContractError(f"MAE operands differ in shape: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise DataError("MAE of nothing")
    return float(np.mean(np.abs(y - y_hat)))


def evaluate_mae(
    model: Forecaster,
    windows: WindowSet,
    scaler: ScalerState | None = None,
    space: str = "scaled",
    batch_size: int = 256,
) -> float:
    """Mean absolute error over every forecast element of every window.

    ``space="unscaled"`` maps targets and forecasts back through each room's
    target range before comparing.
    """
    if windows is None or len(windows) == 0:
        raise DataError("cannot evaluate on an empty window set")
    if space not in ("scaled", "unscaled"):
        raise ContractError(f"space must be 'scaled' or 'unscaled', got {space!r}")
    if space == "unscaled" and scaler is None:
        raise ContractError("unscaled evaluation needs the fitted scaler")
    abs_sum, count = 0.0, 0
    for batch in windows.iter_batches(batch_size):
        pred = model.predict(batch)
        target = batch.target
        if space == "unscaled":
            pred, target = pred.copy(), target.copy()
            for rid in np.unique(batch.room_id):
                rows = batch.room_id == rid
                lo, hi = scaler.target_range(int(rid))
                pred[rows] = unscale_values(pred[rows], lo, hi)
                target[rows] = unscale_values(target[rows], lo, hi)
        abs_sum += float(np.abs(target - pred).sum())
        count += target.size
    return abs_sum / count
