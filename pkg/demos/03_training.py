# %% [markdown]
# # Learning geometry and p0
#
# Non-IDD training adjusts the point positions and the zero probability p0 of
# the shaped bit to minimize BCE minus entropy, which tracks the negative BICM
# capacity. IDD training unfolds the iterative receiver and only moves the
# points, since p0 is fixed by the shaping code. Both runs here are short.

# %%
import numpy as np

from shapelink.constellation import ShapingSpec, make_apsk32, symbol_distribution
from shapelink.metrics import gap_to_capacity
from shapelink.training import (
    TrainConfig, TrainIddConfig, evaluate_idd, smoothed, start_idd, train_idd, train_non_idd,
)

# %%
cfg = TrainConfig(iterations=600, batch=1000, seed=0)
state = train_non_idd(cfg)
hist = state.history
for row in hist[::100] + [hist[-1]]:
    print(f"step {row['step']:4d}  loss {row['loss']:.4f}  p0 {row['p0']:.4f}")

# %% [markdown]
# The gap to capacity of the learned constellation, against uniform 32-APSK.

# %%
c = state.params.constellation(cfg.S)
dist = symbol_distribution(5, ShapingSpec(cfg.S, state.params.p0))
print("uniform apsk32", round(gap_to_capacity(make_apsk32(), None, 3.0, samples=200_000), 3), "dB")
print("learned       ", round(gap_to_capacity(c, dist, 3.0, samples=200_000), 3), "dB")

# %% [markdown]
# A few IDD steps on the small regular code. The Eb/N0 range is taken from a
# short frame-error scan unless given.

# %%
icfg = TrainIddConfig(unfold=5, iterations=40, batch=50, ebn0_db=(3.0, 6.0))
st0 = start_idd(icfg)
before = evaluate_idd(st0.params, icfg, batches=5)
ist = train_idd(icfg, state=st0)
after = evaluate_idd(ist.params, icfg, batches=5)
print("held-out loss before", round(before, 3), "after", round(after, 3))
print("per-iteration BCE at the last step:",
      [round(ist.history[-1][f"bce_{i}"], 3) for i in range(1, 6)])
print("smoothed training loss:", np.round(smoothed([r["loss"] for r in ist.history], 10)[::10], 3))
