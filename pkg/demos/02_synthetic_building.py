# ## A synthetic building
#
# Four rooms, lumped-RC temperatures, 41 shared series plus 6 per room.

import numpy as np

from thermocast.data import (
    apply_scaler,
    chronological_split,
    fit_scaler,
    make_windows,
    synth_generate,
)

ds = synth_generate(rooms=4, hours=4000, seed=7)
len(ds), ds.n_series

[c.name for c in ds.room_channels]

for r in ds.rooms:
    t = r.target
    print(r.room_id, round(t.min(), 2), round(t.mean(), 2), round(t.max(), 2))

# ## Chronological split, scaler fitted on train only

train, val, test = chronological_split(ds, min_length=108)
len(train), len(val), len(test)

state = fit_scaler(train, "common")
state.common_range

scaled_test = apply_scaler(test, state)
scaled_test.room(0).target.max()  # may exceed 1, the scaler never saw the test hours

# ## Windows

ws = make_windows(apply_scaler(train, state), k=96, n=12)
s = ws[0]
s.past_block.shape, s.future_block.shape, s.target.shape

# last observed temperature, the persistence forecast
s.last_value, s.past_block[-1, -1]

batch = ws.batch(np.arange(8))
batch.past.shape
