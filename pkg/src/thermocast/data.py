"""Multi-room building datasets: channels, splits, scaling, windows, CSV I/O, synthesis."""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import ContractError, DataError

GROUPS = ("building_common", "weather", "calendar", "room_specific", "target")


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    group: str
    future_known: bool = False
    temperature_like: bool = False

    def __post_init__(self):
        if self.group not in GROUPS:
            raise DataError(f"channel {self.name!r}: unknown group {self.group!r}")
        if self.group == "target" and self.future_known:
            raise DataError(f"target channel {self.name!r} cannot be future-known")
        if self.group in ("weather", "calendar") and not self.future_known:
            raise DataError(f"{self.group} channel {self.name!r} must be future-known")


def _default_shared_channels() -> list[ChannelSpec]:
    common = [ChannelSpec(f"common_area_temp_{i}", "building_common", temperature_like=True) for i in range(1, 5)]
    common += [
        ChannelSpec("supply_water_temp", "building_common"),
        ChannelSpec("return_water_temp", "building_common"),
        ChannelSpec("water_flow", "building_common"),
        ChannelSpec("solar_shading", "building_common"),
    ]
    common += [ChannelSpec(f"sensor_{i:02d}", "building_common") for i in range(9, 30)]
    weather = [
        ChannelSpec("solar_radiation", "weather", True),
        ChannelSpec("relative_humidity", "weather", True),
        ChannelSpec("air_temperature", "weather", True, temperature_like=True),
        ChannelSpec("dew_point", "weather", True),
        ChannelSpec("cloud_cover", "weather", True),
    ]
    calendar = [
        ChannelSpec(name, "calendar", True)
        for name in ("hour_sin", "hour_cos", "dow_sin", "dow_cos", "month_sin", "month_cos", "weekend")
    ]
    return common + weather + calendar


def _default_room_channels() -> list[ChannelSpec]:
    return [
        ChannelSpec("setpoint", "room_specific", future_known=True, temperature_like=True),
        ChannelSpec("cooling", "room_specific"),
        ChannelSpec("heating_power", "room_specific"),
        ChannelSpec("occupancy", "room_specific"),
        ChannelSpec("window_open", "room_specific"),
        ChannelSpec("temperature", "target", temperature_like=True),
    ]


SHARED_CHANNELS = _default_shared_channels()
ROOM_CHANNELS = _default_room_channels()


@dataclass
class Room:
    room_id: int
    values: np.ndarray  # (hours, len(room_channels)); target is the last column

    @property
    def target(self) -> np.ndarray:
        return self.values[:, -1]


@dataclass
class BuildingDataset:
    timestamps: np.ndarray
    shared: np.ndarray
    shared_channels: list[ChannelSpec]
    room_channels: list[ChannelSpec]
    rooms: list[Room]

    def __post_init__(self):
        length = len(self.timestamps)
        if self.shared.shape != (length, len(self.shared_channels)):
            raise DataError(f"shared block {self.shared.shape} != ({length}, {len(self.shared_channels)})")
        if not self.room_channels or self.room_channels[-1].group != "target":
            raise DataError("room channels must end with the target channel")
        if sum(c.group == "target" for c in self.room_channels) != 1:
            raise DataError("exactly one target channel per room is required")
        ids = [r.room_id for r in self.rooms]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate room ids in {ids}")
        for r in self.rooms:
            if r.values.shape != (length, len(self.room_channels)):
                raise DataError(f"room {r.room_id}: values {r.values.shape} != ({length}, {len(self.room_channels)})")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def room_ids(self) -> list[int]:
        return [r.room_id for r in self.rooms]

    @property
    def n_series(self) -> int:
        return len(self.shared_channels) + len(self.rooms) * len(self.room_channels)

    def room(self, room_id: int) -> Room:
        for r in self.rooms:
            if r.room_id == room_id:
                return r
        raise KeyError(f"no room with id {room_id}")

    def columns(self) -> Iterator[tuple[str, ChannelSpec, np.ndarray]]:
        """Yield ``(key, spec, series)`` for every series in CSV column order."""
        for j, spec in enumerate(self.shared_channels):
            yield f"shared/{spec.name}", spec, self.shared[:, j]
        for r in self.rooms:
            for j, spec in enumerate(self.room_channels):
                yield f"room{r.room_id}/{spec.name}", spec, r.values[:, j]

    @property
    def channel_specs(self) -> list[ChannelSpec]:
        return [spec for _, spec, _ in self.columns()]

    def time_slice(self, start: int, stop: int) -> BuildingDataset:
        return BuildingDataset(
            self.timestamps[start:stop],
            self.shared[start:stop],
            self.shared_channels,
            self.room_channels,
            [Room(r.room_id, r.values[start:stop]) for r in self.rooms],
        )

    def select_rooms(self, room_ids: Sequence[int]) -> BuildingDataset:
        return replace(self, rooms=[self.room(i) for i in room_ids])

    def equals(self, other: BuildingDataset) -> bool:
        return (
            np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.shared, other.shared)
            and self.shared_channels == other.shared_channels
            and self.room_channels == other.room_channels
            and self.room_ids == other.room_ids
            and all(np.array_equal(a.values, b.values) for a, b in zip(self.rooms, other.rooms))
        )

    # column layout of the per-room matrix used for windows: shared channels, then room channels
    @property
    def window_channels(self) -> list[ChannelSpec]:
        return list(self.shared_channels) + list(self.room_channels)

    def room_matrix(self, room_id: int) -> np.ndarray:
        return np.concatenate([self.shared, self.room(room_id).values], axis=1)


# ------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.82, 0.14, 0.04)

    def __post_init__(self):
        if any(f < 0 for f in self.fractions) or sum(Fraction(str(f)) for f in self.fractions) != 1:
            raise ContractError(f"split fractions {self.fractions} must be non-negative and sum to 1")

    def boundaries(self, length: int) -> tuple[int, int]:
        """End of train and end of validation; the test split takes the remainder."""
        n_train = math.floor(Fraction(str(self.fractions[0])) * length)
        n_val = math.floor(Fraction(str(self.fractions[1])) * length)
        return n_train, n_train + n_val


def chronological_split(
    dataset: BuildingDataset, spec: SplitSpec = SplitSpec(), min_length: int = 0
) -> tuple[BuildingDataset, BuildingDataset, BuildingDataset]:
    """Contiguous train/validation/test views in time order.

    ``min_length`` (normally ``k + n``) is the shortest acceptable split.
    """
    length = len(dataset)
    b1, b2 = spec.boundaries(length)
    parts = (dataset.time_slice(0, b1), dataset.time_slice(b1, b2), dataset.time_slice(b2, length))
    for name, part in zip(("train", "validation", "test"), parts):
        if len(part) < max(min_length, 1):
            raise DataError(
                f"{name} split has {len(part)} hours from a series of {length}; at least {max(min_length, 1)} needed"
            )
    return parts


# ------------------------------------------------------------------ scaling


@dataclass
class ScalerState:
    strategy: str
    ranges: dict[str, tuple[float, float]]
    common_range: tuple[float, float] | None = None

    def range_for(self, key: str) -> tuple[float, float]:
        try:
            return self.ranges[key]
        except KeyError:
            raise KeyError(f"scaler was not fitted on column {key!r}") from None

    def target_range(self, room_id: int, target_name: str = "temperature") -> tuple[float, float]:
        return self.range_for(f"room{room_id}/{target_name}")


def fit_scaler(train: BuildingDataset, strategy: str) -> ScalerState:
    """Min-max ranges from the training split only.

    ``individual`` gives every series its own range; ``common`` gives all
    temperature-like series one shared range and leaves the rest individual.
    """
    if strategy not in ("individual", "common"):
        raise ContractError(f"unknown scaling strategy {strategy!r}")
    if len(train) == 0:
        raise DataError("cannot fit a scaler on an empty training split")
    ranges = {key: (float(s.min()), float(s.max())) for key, _, s in train.columns()}
    common = None
    if strategy == "common":
        temp_keys = [key for key, spec, _ in train.columns() if spec.temperature_like]
        if temp_keys:
            common = (min(ranges[k][0] for k in temp_keys), max(ranges[k][1] for k in temp_keys))
            for k in temp_keys:
                ranges[k] = common
    return ScalerState(strategy, ranges, common)


def scale_values(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.zeros_like(values, dtype=np.float64)
    return (values - lo) / (hi - lo)


def unscale_values(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.full_like(values, lo, dtype=np.float64)
    return values * (hi - lo) + lo


def _map_dataset(dataset: BuildingDataset, state: ScalerState, fn) -> BuildingDataset:
    shared = np.empty_like(dataset.shared)
    for j, spec in enumerate(dataset.shared_channels):
        shared[:, j] = fn(dataset.shared[:, j], *state.range_for(f"shared/{spec.name}"))
    rooms = []
    for r in dataset.rooms:
        vals = np.empty_like(r.values)
        for j, spec in enumerate(dataset.room_channels):
            vals[:, j] = fn(r.values[:, j], *state.range_for(f"room{r.room_id}/{spec.name}"))
        rooms.append(Room(r.room_id, vals))
    return BuildingDataset(dataset.timestamps, shared, dataset.shared_channels, dataset.room_channels, rooms)


def apply_scaler(dataset: BuildingDataset, state: ScalerState) -> BuildingDataset:
    return _map_dataset(dataset, state, scale_values)


def invert_scaler(dataset: BuildingDataset, state: ScalerState) -> BuildingDataset:
    return _map_dataset(dataset, state, unscale_values)


# ------------------------------------------------------------------ windows


@dataclass
class WindowSample:
    past_block: np.ndarray  # (k, past channels); target history is the last column
    future_block: np.ndarray  # (n, future channels)
    target: np.ndarray  # (n,)
    room_id: int
    last_value: float


@dataclass
class WindowBatch:
    past: np.ndarray  # (B, k, P)
    future: np.ndarray  # (B, n, F)
    target: np.ndarray  # (B, n)
    room_id: np.ndarray  # (B,)
    last_value: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.room_id)

    @classmethod
    def from_samples(cls, samples: Sequence[WindowSample]) -> WindowBatch:
        return cls(
            np.stack([s.past_block for s in samples]),
            np.stack([s.future_block for s in samples]),
            np.stack([s.target for s in samples]),
            np.array([s.room_id for s in samples], dtype=np.int64),
            np.array([s.last_value for s in samples], dtype=np.float64),
        )


class WindowSet:
    """All sliding windows of one or more rooms, gathered lazily from per-room matrices.

    Indexing yields :class:`WindowSample`; :meth:`batch` gathers many at once.
    """

    def __init__(self, series: np.ndarray, room_ids: np.ndarray, anchors: np.ndarray, k: int, n: int, future_cols: np.ndarray):
        self.series = series  # (rooms, hours, channels)
        self.room_ids = np.asarray(room_ids, dtype=np.int64)
        self.anchors = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)  # (row, t)
        self.k, self.n = k, n
        self.future_cols = np.asarray(future_cols, dtype=np.int64)
        self._past_offsets = np.arange(-k + 1, 1)
        self._future_offsets = np.arange(1, n + 1)

    def __len__(self) -> int:
        return len(self.anchors)

    @property
    def past_channels(self) -> int:
        return self.series.shape[-1]

    @property
    def future_channels(self) -> int:
        return len(self.future_cols)

    def batch(self, indices) -> WindowBatch:
        a = self.anchors[np.asarray(indices, dtype=np.int64)]
        rows, t = a[:, 0:1], a[:, 1:2]
        past = self.series[rows, t + self._past_offsets]
        ahead = self.series[rows, t + self._future_offsets]
        return WindowBatch(
            past=past,
            future=ahead[:, :, self.future_cols],
            target=ahead[:, :, -1],
            room_id=self.room_ids[a[:, 0]],
            last_value=past[:, -1, -1].copy(),
        )

    def __getitem__(self, i: int) -> WindowSample:
        if not -len(self) <= i < len(self):
            raise IndexError(f"window {i} out of range for {len(self)} windows")
        b = self.batch([i])
        return WindowSample(b.past[0], b.future[0], b.target[0], int(b.room_id[0]), float(b.last_value[0]))

    def __iter__(self) -> Iterator[WindowSample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices) -> WindowSet:
        return WindowSet(self.series, self.room_ids, self.anchors[np.asarray(indices, dtype=np.int64)], self.k, self.n, self.future_cols)

    def for_room(self, room_id: int) -> WindowSet:
        rows = np.flatnonzero(self.room_ids == room_id)
        return self.subset(np.flatnonzero(np.isin(self.anchors[:, 0], rows)))

    def iter_batches(self, batch_size: int, order=None) -> Iterator[WindowBatch]:
        idx = np.arange(len(self)) if order is None else np.asarray(order)
        for lo in range(0, len(idx), batch_size):
            yield self.batch(idx[lo : lo + batch_size])


def make_windows(
    view: BuildingDataset, k: int = 96, n: int = 12, room_ids: Sequence[int] | None = None, stride: int = 1
) -> WindowSet:
    """Every window with ``k`` past and ``n`` future steps, anchored at each valid ``t``.

    A view of length ``L`` gives ``L - k - n + 1`` windows per room (fewer with
    ``stride > 1``).  Too-short views give an empty set and a warning.
    """
    if k < 1 or n < 1 or stride < 1:
        raise ContractError(f"window sizes must be positive, got k={k}, n={n}, stride={stride}")
    ids = list(view.room_ids if room_ids is None else room_ids)
    channels = view.window_channels
    future_cols = np.array([j for j, c in enumerate(channels) if c.future_known], dtype=np.int64)
    length = len(view)
    series = np.stack([view.room_matrix(i) for i in ids]) if ids else np.zeros((0, length, len(channels)))
    count = length - k - n + 1
    if count <= 0:
        warnings.warn(f"view of {length} hours is too short for k={k}, n={n}; no windows", stacklevel=2)
        anchors = np.zeros((0, 2), dtype=np.int64)
    else:
        ts = np.arange(k - 1, k - 1 + count, stride)
        anchors = np.array([(row, t) for row in range(len(ids)) for t in ts], dtype=np.int64).reshape(-1, 2)
    return WindowSet(series, np.array(ids, dtype=np.int64), anchors, k, n, future_cols)


# ---------------------------------------------------------------- synthesis


@dataclass
class SynthConfig:
    rooms: int = 4
    hours: int = 2000
    seed: int = 0
    alpha_range: tuple[float, float] = (0.01, 0.05)  # envelope coupling to outdoor air per hour
    beta_range: tuple[float, float] = (0.6, 1.5)  # heating/cooling effect, K per hour at full power
    gamma_range: tuple[float, float] = (0.0003, 0.0012)  # solar gain, K per hour per W/m2
    gain_range: tuple[float, float] = (0.05, 0.25)  # occupancy gain, K per hour
    noise_std: float = 0.05
    start: str = "2021-01-01T00"
    min_hours: int = 108


def _ar1(rng: np.random.Generator, phi: float, std: float, size: int) -> np.ndarray:
    return lfilter([1.0], [1.0, -phi], rng.normal(0.0, std, size))


def synth_generate(config: SynthConfig | None = None, **overrides) -> BuildingDataset:
    """Deterministic synthetic building with lumped-RC room temperatures.

    Each room follows ``T[t+1] = T[t] + a*(T_out[t] - T[t]) + b*hvac[t] + g*solar[t] + gains + noise``
    with per-room ``a, b, g`` drawn from the configured ranges, so room identity
    matters.  ``hvac`` is a proportional controller tracking the room's scheduled
    setpoint (negative values are cooling).
    """
    cfg = replace(config or SynthConfig(), **overrides)
    if cfg.rooms < 1:
        raise DataError(f"need at least one room, got {cfg.rooms}")
    if cfg.hours < cfg.min_hours:
        raise DataError(f"need at least {cfg.min_hours} hours, got {cfg.hours}")
    rng = np.random.default_rng(cfg.seed)
    hours = cfg.hours
    stamps = np.datetime64(cfg.start, "h") + np.arange(hours).astype("timedelta64[h]")
    hod = (stamps - stamps.astype("datetime64[D]")).astype(int)
    days = stamps.astype("datetime64[D]").astype(np.int64)
    dow = (days + 3) % 7  # 1970-01-01 was a Thursday; Monday = 0
    month = stamps.astype("datetime64[M]").astype(np.int64) % 12
    doy = (days - stamps.astype("datetime64[Y]").astype("datetime64[D]").astype(np.int64)).astype(float)
    weekend = (dow >= 5).astype(float)

    t_out = (
        7.0
        - 9.0 * np.cos(2 * np.pi * (doy - 15) / 365.25)
        + 4.0 * np.sin(2 * np.pi * (hod - 9) / 24)
        + _ar1(rng, 0.95, 0.6, hours)
    )
    cloud = 1.0 / (1.0 + np.exp(-_ar1(rng, 0.9, 0.8, hours)))
    season = 450.0 - 250.0 * np.cos(2 * np.pi * (doy - 172) / 365.25 + np.pi)
    solar = np.clip(np.sin(2 * np.pi * (hod - 6) / 24), 0.0, None) * season * (1.0 - 0.7 * cloud)
    humidity = np.clip(75.0 - 1.5 * (t_out - 7.0) + 20.0 * (cloud - 0.5) + _ar1(rng, 0.9, 2.0, hours), 15.0, 100.0)
    dew_point = t_out - (100.0 - humidity) / 5.0
    weather = np.column_stack(
        [solar, humidity, t_out + rng.normal(0.0, 0.3, hours), dew_point, cloud]
    )
    calendar = np.column_stack(
        [
            np.sin(2 * np.pi * hod / 24),
            np.cos(2 * np.pi * hod / 24),
            np.sin(2 * np.pi * dow / 7),
            np.cos(2 * np.pi * dow / 7),
            np.sin(2 * np.pi * month / 12),
            np.cos(2 * np.pi * month / 12),
            weekend,
        ]
    )

    t_std = (t_out - t_out.mean()) / (t_out.std() + 1e-12)
    s_std = (solar - solar.mean()) / (solar.std() + 1e-12)
    common = [20.5 + 0.12 * t_out + 0.0015 * solar + _ar1(rng, 0.97, 0.1, hours) for _ in range(4)]
    supply = 45.0 - 0.8 * t_out + _ar1(rng, 0.9, 0.5, hours)
    common += [supply, supply - 5.0 - np.abs(_ar1(rng, 0.9, 0.4, hours)), np.clip(0.5 + 0.03 * (15.0 - t_out), 0, None)]
    common.append((solar > 300.0).astype(float))
    for _ in range(21):
        a, b = rng.normal(0.0, 1.0, 2)
        common.append(a * t_std + b * s_std + _ar1(rng, 0.95, 0.3, hours))
    shared = np.column_stack(common + [weather[:, j] for j in range(5)] + [calendar[:, j] for j in range(7)])

    working = (weekend == 0) & (hod >= 7) & (hod < 18)
    rooms = []
    for rid in range(cfg.rooms):
        alpha = rng.uniform(*cfg.alpha_range)
        beta = rng.uniform(*cfg.beta_range)
        gamma = rng.uniform(*cfg.gamma_range)
        gain = rng.uniform(*cfg.gain_range)
        kp = rng.uniform(0.5, 1.5)
        offset = float(rng.integers(-1, 2))
        setpoint = np.where(working, 21.0 + offset, 17.0 + offset)
        occupancy = np.where(working, rng.uniform(0.6, 1.0, hours), 0.0) * (rng.random(hours) > 0.1)
        window = np.zeros(hours)
        starts = np.flatnonzero(rng.random(hours) < 0.01)
        for s in starts:
            window[s : s + int(rng.integers(1, 4))] = 1.0
        noise = rng.normal(0.0, cfg.noise_std, hours) if cfg.noise_std > 0 else np.zeros(hours)
        temp = np.empty(hours)
        hvac = np.empty(hours)
        temp[0] = setpoint[0] + rng.uniform(-0.5, 0.5)
        for t in range(hours):
            err = setpoint[t] - temp[t]
            h = min(kp * err, 1.0) if err > 0 else -min(kp * max(-err - 2.0, 0.0), 1.0)
            hvac[t] = h
            if t + 1 < hours:
                a_eff = alpha * (1.0 + 3.0 * window[t])
                temp[t + 1] = (
                    temp[t] + a_eff * (t_out[t] - temp[t]) + beta * h + gamma * solar[t] + gain * occupancy[t] + noise[t]
                )
        values = np.column_stack(
            [setpoint, (hvac < 0).astype(float), np.clip(hvac, 0.0, None), occupancy, window, temp]
        )
        rooms.append(Room(rid, values))
    return BuildingDataset(stamps, shared, list(SHARED_CHANNELS), list(ROOM_CHANNELS), rooms)


# ---------------------------------------------------------------------- CSV

_ROOM_RE = re.compile(r"^room(\d+)/(.+)$")


def schema_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".schema")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_csv(path: str | Path, dataset: BuildingDataset) -> None:
    """Write ``timestamp`` plus one column per series, and a ``.schema`` sidecar."""
    path = Path(path)
    cols = list(dataset.columns())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp"] + [key for key, _, _ in cols])
        data = np.column_stack([s for _, _, s in cols]) if cols else np.zeros((len(dataset), 0))
        stamps = np.datetime_as_string(dataset.timestamps, unit="s")
        for stamp, row in zip(stamps, data):
            writer.writerow([stamp] + [_fmt(v) for v in row])
    with open(schema_path(path), "w") as fh:
        for key, spec, _ in cols:
            fh.write(
                f"{key} group={spec.group} future_known={int(spec.future_known)} "
                f"temperature_like={int(spec.temperature_like)}\n"
            )


def _read_schema(path: Path) -> dict[str, ChannelSpec]:
    if not path.exists():
        raise DataError(f"schema sidecar {path} not found")
    specs = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        key, *pairs = line.split()
        try:
            attrs = dict(p.split("=", 1) for p in pairs)
            name = key.split("/", 1)[1]
            specs[key] = ChannelSpec(
                name, attrs["group"], attrs["future_known"] == "1", attrs["temperature_like"] == "1"
            )
        except (ValueError, KeyError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: malformed schema line {line!r}") from exc
    return specs


def load_csv(path: str | Path) -> BuildingDataset:
    path = Path(path)
    schema = _read_schema(schema_path(path))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "timestamp":
            raise DataError(f"{path}: first column must be 'timestamp', got {header[:1]}")
        keys = header[1:]
        for key in keys:
            if key not in schema:
                raise DataError(f"{path}: column {key!r} is not described in the schema sidecar")
            if not (key.startswith("shared/") or _ROOM_RE.match(key)):
                raise DataError(f"{path}: unknown column {key!r}; expected shared/<name> or room<id>/<name>")
        stamps, rows = [], []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(row)} cells, header has {len(header)}")
            try:
                stamps.append(np.datetime64(row[0], "h"))
            except ValueError:
                raise DataError(f"{path}: line {lineno}, column 'timestamp': bad timestamp {row[0]!r}") from None
            values = []
            for key, cell in zip(keys, row[1:]):
                if cell.strip() == "":
                    raise DataError(f"{path}: line {lineno}, column {key!r}: missing value")
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: line {lineno}, column {key!r}: non-numeric value {cell!r}") from None
            rows.append(values)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(keys))

    shared_idx = [j for j, key in enumerate(keys) if key.startswith("shared/")]
    shared_channels = [schema[keys[j]] for j in shared_idx]
    room_cols: dict[int, list[int]] = {}
    for j, key in enumerate(keys):
        m = _ROOM_RE.match(key)
        if m:
            room_cols.setdefault(int(m.group(1)), []).append(j)
    room_channels: list[ChannelSpec] | None = None
    rooms = []
    for rid, idx in room_cols.items():
        chans = [schema[keys[j]] for j in idx]
        if room_channels is None:
            room_channels = chans
        elif chans != room_channels:
            raise DataError(f"{path}: room {rid} channels differ from the first room's")
        rooms.append(Room(rid, data[:, idx]))
    return BuildingDataset(
        np.array(stamps, dtype="datetime64[h]"), data[:, shared_idx], shared_channels, room_channels or list(ROOM_CHANNELS), rooms
    )
