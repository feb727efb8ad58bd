"""Persistence, LSTM and Transformer forecasters behind one interface.

The neural models are residual: they predict the deviation from the last
observed room temperature, and :meth:`Forecaster.forecast` adds it back.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import WindowBatch, WindowSample
from .errors import ConfigError, ContractError, ShapeError
from .nn import DecoderBlock, EmbeddingTable, EncoderBlock, Linear, LstmStack, Module
from .tensor import Tensor

KINDS = ("persistence", "lstm", "transformer")


@dataclass
class ModelConfig:
    kind: str = "transformer"
    past_channels: int = 47
    future_channels: int = 13
    num_rooms: int = 133
    k: int = 96
    n: int = 12
    d_model: int = 32
    heads: int = 4
    encoder_blocks: int = 4
    decoder_blocks: int = 4
    ff_width: int = 128
    lstm_layers: int = 8
    lstm_units: int = 32
    head_hidden: int = 256
    use_room_embedding: bool = True
    scope: str = "global"
    room: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.scope not in ("global", "local"):
            raise ConfigError(f"scope must be 'global' or 'local', got {self.scope!r}")
        if self.scope == "local" and self.room is None:
            raise ConfigError("a local model needs a room id")
        sizes = {f.name: getattr(self, f.name) for f in fields(self) if f.type in ("int", int)}
        bad = [name for name, v in sizes.items() if v <= 0]
        if bad:
            raise ConfigError(f"sizes must be positive: {bad}")
        if self.kind == "transformer" and self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by {self.heads} heads")
        if self.kind == "transformer" and (self.d_model // self.heads) % 2:
            raise ConfigError(f"head dimension {self.d_model // self.heads} must be even for rotary encoding")
        if self.kind == "lstm" and self.use_room_embedding:
            raise ConfigError("the LSTM forecaster has no room embedding; set use_room_embedding=False")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


def _as_batch(x: WindowBatch | WindowSample) -> WindowBatch:
    return WindowBatch.from_samples([x]) if isinstance(x, WindowSample) else x


def residual_combine(residual: Tensor, last_value) -> Tensor:
    """Forecast = residual + the last observed value repeated over the horizon."""
    last = np.asarray(last_value, dtype=np.float64)
    if residual.ndim == 1:
        return residual + np.full(residual.shape, float(last))
    if last.shape != residual.shape[:1]:
        raise ContractError(f"residual batch {residual.shape} does not match {last.shape[0]} last values")
    return residual + np.repeat(last[:, None], residual.shape[1], axis=1)


def persistence_forecast(sample: WindowSample | WindowBatch, n: int | None = None) -> np.ndarray:
    """The last observed value repeated ``n`` times (per window)."""
    if isinstance(sample, WindowSample):
        n = len(sample.target) if n is None else n
        return np.full(n, sample.last_value)
    n = sample.target.shape[1] if n is None else n
    return np.repeat(sample.last_value[:, None], n, axis=1)


class Forecaster(Module):
    config: ModelConfig

    def residual(self, batch: WindowBatch) -> Tensor:
        raise NotImplementedError

    def forecast(self, batch: WindowBatch | WindowSample) -> Tensor:
        single = isinstance(batch, WindowSample)
        b = _as_batch(batch)
        self._check(b)
        out = residual_combine(self.residual(b), b.last_value)
        return out.reshape(self.config.n) if single else out

    def predict(self, batch: WindowBatch | WindowSample) -> np.ndarray:
        with T.no_grad():
            return self.forecast(batch).data

    def _check(self, b: WindowBatch) -> None:
        cfg = self.config
        if b.future.shape[1] != cfg.n or b.target.shape[1] != cfg.n:
            raise ShapeError(f"window horizon {b.future.shape[1]} != configured n={cfg.n}")


class PersistenceForecaster(Forecaster):
    def __init__(self, config: ModelConfig):
        self.config = config

    def residual(self, batch: WindowBatch) -> Tensor:
        return Tensor(np.zeros((len(batch), self.config.n)))


class TransformerForecaster(Forecaster):
    """Encoder over past tokens, decoder over future-covariate tokens, flatten + linear head.

    The room embedding, when enabled, is added to every projected token of
    both encoder and decoder.  Decoder positions continue after the encoder's
    so rotary encoding sees their true relative offsets.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = c = config
        self.enc_in = Linear(c.past_channels, c.d_model, rng)
        self.dec_in = Linear(c.future_channels, c.d_model, rng)
        self.room_embedding = EmbeddingTable(c.num_rooms, c.d_model, rng) if c.use_room_embedding else None
        self.encoder = [EncoderBlock(c.d_model, c.heads, c.ff_width, rng) for _ in range(c.encoder_blocks)]
        self.decoder = [DecoderBlock(c.d_model, c.heads, c.ff_width, rng) for _ in range(c.decoder_blocks)]
        self.head = Linear(c.n * c.d_model, c.n, rng)

    def residual(self, batch: WindowBatch) -> Tensor:
        c = self.config
        b = len(batch)
        if batch.past.shape[2] != c.past_channels or batch.future.shape[2] != c.future_channels:
            raise ShapeError(
                f"channels {batch.past.shape[2]}/{batch.future.shape[2]} != configured {c.past_channels}/{c.future_channels}"
            )
        enc = self.enc_in(Tensor(batch.past))
        dec = self.dec_in(Tensor(batch.future))
        if self.room_embedding is not None:
            emb = self.room_embedding(batch.room_id).reshape(b, 1, c.d_model)
            enc = enc + emb
            dec = dec + emb
        for block in self.encoder:
            enc = block(enc, 0)
        k = batch.past.shape[1]
        for block in self.decoder:
            dec = block(dec, enc, offset=k, encoder_offset=0)
        return self.head(dec.reshape(b, c.n * c.d_model))


class LstmForecaster(Forecaster):
    """Stacked LSTM encoder/decoder; the top encoder layer's final state seeds decoder layer 0."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = c = config
        self.encoder = LstmStack(c.past_channels, c.lstm_units, c.lstm_layers, rng)
        self.decoder = LstmStack(c.future_channels, c.lstm_units, c.lstm_layers, rng)
        self.hidden = Linear(c.n * c.lstm_units, c.head_hidden, rng)
        self.head = Linear(c.head_hidden, c.n, rng)

    def residual(self, batch: WindowBatch) -> Tensor:
        c = self.config
        _, states = self.encoder(Tensor(batch.past))
        init = [states[-1]] + [None] * (c.lstm_layers - 1)
        out, _ = self.decoder(Tensor(batch.future), init)
        flat = out.reshape(len(batch), c.n * c.lstm_units)
        return self.head(T.relu(self.hidden(flat)))


def build_forecaster(config: ModelConfig, seed: int | np.random.Generator = 0) -> Forecaster:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if config.kind == "persistence":
        return PersistenceForecaster(config)
    if config.kind == "lstm":
        return LstmForecaster(config, rng)
    return TransformerForecaster(config, rng)


def transformer_forecast(sample: WindowSample | WindowBatch, model: TransformerForecaster) -> Tensor:
    return model.residual(_as_batch(sample))


def lstm_forecast(sample: WindowSample | WindowBatch, model: LstmForecaster) -> Tensor:
    return model.residual(_as_batch(sample))


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count for a configuration."""
    c = config
    if c.kind == "persistence":
        return 0
    linear = lambda i, o: i * o + o  # noqa: E731
    if c.kind == "transformer":
        d = c.d_model
        attn = 4 * linear(d, d)
        ff = linear(d, c.ff_width) + linear(c.ff_width // 2, d)
        enc_block = attn + ff + 2
        dec_block = 2 * attn + ff + 3
        total = linear(c.past_channels, d) + linear(c.future_channels, d)
        total += c.encoder_blocks * enc_block + c.decoder_blocks * dec_block
        total += linear(c.n * d, c.n)
        if c.use_room_embedding:
            total += c.num_rooms * d
        return total
    u = c.lstm_units

    def stack(in_dim):
        return sum((i_dim + u) * 4 * u + 4 * u for i_dim in [in_dim] + [u] * (c.lstm_layers - 1))

    return stack(c.past_channels) + stack(c.future_channels) + linear(c.n * u, c.head_hidden) + linear(c.head_hidden, c.n)


# --------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, model: Forecaster, extra: dict | None = None) -> None:
    """``.npz`` archive of every parameter plus a JSON config header (bit-exact)."""
    header = {"config": model.config.to_dict(), "extra": extra or {}}
    arrays = {f"param:{name}": arr for name, arr in model.state_dict().items()}
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[Forecaster, dict]:
    with np.load(path) as archive:
        header = json.loads(archive["__header__"].tobytes().decode())
        state = {key[len("param:") :]: archive[key] for key in archive.files if key.startswith("param:")}
    model = build_forecaster(ModelConfig.from_dict(header["config"]), 0)
    model.load_state_dict(state)
    return model, header.get("extra", {})


def with_overrides(config: ModelConfig, **kw) -> ModelConfig:
    return replace(config, **kw)
