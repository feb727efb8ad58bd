import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermocast.data import (
    ROOM_CHANNELS,
    BuildingDataset,
    ChannelSpec,
    Room,
    SplitSpec,
    apply_scaler,
    chronological_split,
    fit_scaler,
    invert_scaler,
    load_csv,
    make_windows,
    save_csv,
    schema_path,
    synth_generate,
)
from thermocast.errors import ContractError, DataError


def tiny(shared=None, temps=((0.0, 10.0),), hours=None):
    """A dataset with one optional shared channel and rooms holding only a target."""
    hours = hours or len(temps[0])
    stamps = np.datetime64("2021-01-01T00", "h") + np.arange(hours).astype("timedelta64[h]")
    shared_channels = [ChannelSpec("s", "building_common")] if shared is not None else []
    block = np.asarray(shared, dtype=float).reshape(hours, -1) if shared is not None else np.zeros((hours, 0))
    rooms = [Room(i, np.asarray(t, dtype=float)[:, None]) for i, t in enumerate(temps)]
    return BuildingDataset(stamps, block, shared_channels, [ChannelSpec("temperature", "target", temperature_like=True)], rooms)


class TestSplit:
    @pytest.mark.parametrize("length,sizes", [(1000, (820, 140, 40)), (19115, (15674, 2676, 765))])
    def test_floor_rule(self, length, sizes):
        ds = tiny(temps=(np.arange(length, dtype=float),))
        parts = chronological_split(ds)
        assert tuple(len(p) for p in parts) == sizes

    @settings(max_examples=60, deadline=None)
    @given(st.integers(30, 5000))
    def test_partition(self, length):
        ds = tiny(temps=(np.arange(length, dtype=float),))
        parts = chronological_split(ds)
        joined = np.concatenate([p.rooms[0].target for p in parts])
        np.testing.assert_array_equal(joined, np.arange(length))
        joined_t = np.concatenate([p.timestamps for p in parts])
        np.testing.assert_array_equal(joined_t, ds.timestamps)

    def test_too_short_names_split(self):
        ds = tiny(temps=(np.arange(200.0),))
        with pytest.raises(DataError, match="validation"):
            chronological_split(ds, min_length=108)

    def test_bad_fractions(self):
        with pytest.raises(ContractError):
            SplitSpec((0.5, 0.5, 0.5))


class TestScaler:
    def test_individual(self):
        ds = tiny(temps=([10.0, 20.0, 30.0],))
        out = apply_scaler(ds, fit_scaler(ds, "individual"))
        assert out.rooms[0].target.tolist() == [0.0, 0.5, 1.0]

    def test_common(self):
        ds = tiny(temps=([0.0, 10.0], [10.0, 30.0]))
        out = apply_scaler(ds, fit_scaler(ds, "common"))
        np.testing.assert_allclose(out.rooms[0].target, [0.0, 1 / 3], rtol=1e-15)
        np.testing.assert_allclose(out.rooms[1].target, [1 / 3, 1.0], rtol=1e-15)

    def test_constant_maps_to_zero(self):
        ds = tiny(shared=[5.0, 5.0, 5.0], temps=([1.0, 2.0, 3.0],))
        out = apply_scaler(ds, fit_scaler(ds, "individual"))
        assert out.shared[:, 0].tolist() == [0.0, 0.0, 0.0]

    def test_empty_train(self):
        ds = tiny(temps=([1.0, 2.0],)).time_slice(0, 0)
        with pytest.raises(DataError):
            fit_scaler(ds, "individual")

    @pytest.mark.parametrize("strategy", ["individual", "common"])
    def test_round_trip(self, strategy):
        ds = synth_generate(rooms=3, hours=300, seed=4)
        state = fit_scaler(ds, strategy)
        back = invert_scaler(apply_scaler(ds, state), state)
        for (key, _, a), (_, _, b) in zip(ds.columns(), back.columns()):
            if a.max() > a.min():
                np.testing.assert_allclose(b, a, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max()), err_msg=key)

    def test_fitted_on_train_only(self):
        ds = synth_generate(rooms=2, hours=1000, seed=1)
        train, val, test = chronological_split(ds)
        state = fit_scaler(train, "individual")
        scaled = apply_scaler(train, state)
        for _, _, s in scaled.columns():
            assert s.min() >= 0.0 and s.max() <= 1.0
        key = "room0/temperature"
        assert state.range_for(key) == (ds.room(0).target[:820].min(), ds.room(0).target[:820].max())

    def test_common_preserves_order_across_channels(self):
        ds = synth_generate(rooms=3, hours=400, seed=2)
        scaled = apply_scaler(ds, fit_scaler(ds, "common"))
        raw = {k: s for k, spec, s in ds.columns() if spec.temperature_like}
        new = {k: s for k, spec, s in scaled.columns() if spec.temperature_like}
        keys = sorted(raw)
        for a, b in zip(keys, keys[1:]):
            assert np.array_equal(raw[a] < raw[b], new[a] < new[b])


class TestWindows:
    @pytest.mark.parametrize("length,count", [(120, 13), (108, 1), (500, 393)])
    def test_count(self, length, count):
        ds = synth_generate(rooms=1, hours=max(length, 108), seed=0).time_slice(0, length)
        assert len(make_windows(ds, 96, 12)) == count

    def test_too_short_warns(self):
        ds = synth_generate(rooms=1, hours=200, seed=0).time_slice(0, 100)
        with pytest.warns(UserWarning):
            assert len(make_windows(ds, 96, 12)) == 0

    def test_last_value_and_blocks(self):
        ds = synth_generate(rooms=2, hours=150, seed=3)
        ws = make_windows(ds, 96, 12)
        assert len(ws) == 2 * 43
        for s in ws:
            assert s.last_value == s.past_block[-1, -1]
            assert s.past_block.shape == (96, 47)
            assert s.future_block.shape == (12, 13)
        s = ws[5]
        room = ds.room(s.room_id)
        np.testing.assert_array_equal(s.target, room.target[101:113])
        np.testing.assert_array_equal(s.future_block[:, -1], room.values[101:113, 0])

    def test_no_leakage(self):
        ds = synth_generate(rooms=2, hours=200, seed=5)
        k, n = 24, 6
        for t in (k - 1, 60, 200 - n - 1):
            poisoned = BuildingDataset(
                ds.timestamps,
                ds.shared.copy(),
                ds.shared_channels,
                ds.room_channels,
                [Room(r.room_id, r.values.copy()) for r in ds.rooms],
            )
            poisoned.shared[t + 1 :] = np.nan
            for r in poisoned.rooms:
                r.values[t + 1 :] = np.nan
            ws = make_windows(poisoned, k, n)
            anchors = ws.anchors[:, 1]
            for i in np.flatnonzero(anchors <= t):
                assert np.isfinite(ws[int(i)].past_block).all()
            # future block reaches at most t + n
            poisoned.shared[: t + n + 1] = ds.shared[: t + n + 1]
            for r, orig in zip(poisoned.rooms, ds.rooms):
                r.values[: t + n + 1] = orig.values[: t + n + 1]
            ws = make_windows(poisoned, k, n)
            i = int(np.flatnonzero(ws.anchors[:, 1] == t)[0])
            s = ws[i]
            assert np.isfinite(s.future_block).all() and np.isfinite(s.target).all()

    def test_future_channels_are_future_known(self):
        ds = synth_generate(rooms=1, hours=120, seed=0)
        ws = make_windows(ds, 96, 12)
        names = [c.name for c in ds.window_channels if c.future_known]
        assert len(names) == ws.future_channels == 13
        assert names[-1] == "setpoint"


class TestSynth:
    def test_deterministic(self):
        assert synth_generate(rooms=3, hours=300, seed=11).equals(synth_generate(rooms=3, hours=300, seed=11))

    def test_seed_matters(self):
        assert not synth_generate(rooms=2, hours=200, seed=1).equals(synth_generate(rooms=2, hours=200, seed=2))

    def test_default_composition(self):
        ds = synth_generate(rooms=133, hours=120, seed=0)
        assert ds.n_series == 839
        groups = [c.group for c in ds.shared_channels]
        assert groups.count("building_common") == 29
        assert groups.count("weather") == 5 and groups.count("calendar") == 7
        assert len(ds.room_channels) == 6

    def test_degenerate_is_constant(self):
        ds = synth_generate(
            rooms=2, hours=300, seed=0, alpha_range=(0.0, 0.0), beta_range=(0.0, 0.0),
            gamma_range=(0.0, 0.0), gain_range=(0.0, 0.0), noise_std=0.0,
        )
        ws = make_windows(ds, 96, 12)
        b = ws.batch(np.arange(len(ws)))
        for r in ds.rooms:
            assert np.ptp(r.target) == 0.0
        assert np.abs(b.target - b.last_value[:, None]).mean() == 0.0

    def test_rooms_differ(self):
        ds = synth_generate(rooms=2, hours=500, seed=0)
        assert not np.array_equal(ds.room(0).target, ds.room(1).target)

    def test_invalid(self):
        with pytest.raises(DataError):
            synth_generate(rooms=0)
        with pytest.raises(DataError):
            synth_generate(hours=50)


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = synth_generate(rooms=2, hours=200, seed=9)
        save_csv(tmp_path / "d.csv", ds)
        assert schema_path(tmp_path / "d.csv").exists()
        assert load_csv(tmp_path / "d.csv").equals(ds)

    def test_many_rooms_column_count(self, tmp_path):
        ds = synth_generate(rooms=133, hours=110, seed=0)
        save_csv(tmp_path / "big.csv", ds)
        header = (tmp_path / "big.csv").read_text().split("\n", 1)[0].split(",")
        assert len(header) == 840 and header[0] == "timestamp"
        assert load_csv(tmp_path / "big.csv").equals(ds)

    def test_missing_cell(self, tmp_path):
        ds = synth_generate(rooms=1, hours=120, seed=0)
        p = tmp_path / "d.csv"
        save_csv(p, ds)
        lines = p.read_text().splitlines()
        cells = lines[3].split(",")
        cells[2] = ""
        lines[3] = ",".join(cells)
        p.write_text("\n".join(lines) + "\n")
        key = lines[0].split(",")[2]
        with pytest.raises(DataError, match=f"line 4, column '{key}'"):
            load_csv(p)

    def test_non_numeric(self, tmp_path):
        ds = synth_generate(rooms=1, hours=120, seed=0)
        p = tmp_path / "d.csv"
        save_csv(p, ds)
        p.write_text(p.read_text().replace("\n2021-01-01T01:00:00,", "\n2021-01-01T01:00:00,abc", 1))
        with pytest.raises(DataError, match="line 3"):
            load_csv(p)

    def test_unknown_column(self, tmp_path):
        ds = synth_generate(rooms=1, hours=120, seed=0)
        p = tmp_path / "d.csv"
        save_csv(p, ds)
        lines = p.read_text().splitlines()
        lines = [line + ",0" for line in lines]
        lines[0] = lines[0][:-2] + ",bogus"
        p.write_text("\n".join(lines) + "\n")
        with schema_path(p).open("a") as fh:
            fh.write("bogus group=building_common future_known=0 temperature_like=0\n")
        with pytest.raises(DataError, match="bogus"):
            load_csv(p)

    def test_missing_timestamp(self, tmp_path):
        ds = synth_generate(rooms=1, hours=120, seed=0)
        p = tmp_path / "d.csv"
        save_csv(p, ds)
        p.write_text(p.read_text().replace("timestamp", "time", 1))
        with pytest.raises(DataError, match="timestamp"):
            load_csv(p)


def test_channel_rules():
    with pytest.raises(DataError):
        ChannelSpec("t", "target", future_known=True)
    with pytest.raises(DataError):
        ChannelSpec("w", "weather", future_known=False)
    assert ROOM_CHANNELS[-1].group == "target"


def test_no_warning_for_long_view():
    ds = synth_generate(rooms=1, hours=200, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        make_windows(ds, 96, 12)
