# %% [markdown]
# # Shaped constellations and their capacity
#
# A shaping code maps uniform bits to blocks with an excess of zeros. Placing
# those bits on selected label positions makes some constellation points more
# likely than others. This notebook builds the two shaping codes, looks at the
# resulting symbol distributions and compares BICM capacities at rate 3.

# %%
import numpy as np

from shapelink.constellation import (
    ShapingSpec, entropy, make_apsk32, make_qam32, shaped_baseline, symbol_distribution,
)
from shapelink.metrics import capacity_curve, gap_to_capacity, gaussian_capacity
from shapelink.shaping_code import build_shaping_code

# %% [markdown]
# The codebooks take the lowest-weight words first.

# %%
for k_s, n_s in [(2, 4), (3, 4)]:
    code = build_shaping_code(k_s, n_s)
    print(f"({k_s},{n_s}) p0 = {code.p0}")
    print(code.codebook)

# %% [markdown]
# One shaped bit on the first label position splits 32-APSK into two
# probability levels.

# %%
spec = ShapingSpec((0,), 0.8125)
dist = symbol_distribution(5, spec)
print(np.unique(np.round(dist, 6)), "entropy", round(entropy(dist), 4), "bits")

# %% [markdown]
# The shaped baseline relabels the points so that the likely half sits close
# to the origin, then rescales to unit energy under the shaped distribution.

# %%
shaped = shaped_baseline(make_apsk32(), spec)
likely = dist > dist.min()
print("mean |x|^2 likely half  ", np.mean(np.abs(shaped.points[likely]) ** 2).round(3))
print("mean |x|^2 unlikely half", np.mean(np.abs(shaped.points[~likely]) ** 2).round(3))
print("energy under P_X        ", round(shaped.mean_energy(dist), 6))

# %% [markdown]
# Capacity curves share their random draws across SNR values, so the curves
# are smooth even at modest sample counts.

# %%
snr = [6, 8, 10, 12, 14]
rows = {
    "apsk32": capacity_curve(make_apsk32(), None, snr, samples=50_000),
    "qam32": capacity_curve(make_qam32(), None, snr, samples=50_000),
    "apsk32 shaped": capacity_curve(shaped, dist, snr, samples=50_000),
}
print("snr_db  gaussian  " + "  ".join(rows))
for i, s in enumerate(snr):
    vals = "  ".join(f"{rows[k][i][1]:.4f}" for k in rows)
    print(f"{s:6d}  {gaussian_capacity(10 ** (s / 10)):.4f}  {vals}")

# %% [markdown]
# Gap to the Gaussian capacity at 3 bits per symbol.

# %%
for name, c, d in [("apsk32", make_apsk32(), None), ("qam32", make_qam32(), None),
                   ("apsk32 shaped", shaped, dist)]:
    print(f"{name:14s} {gap_to_capacity(c, d, 3.0, samples=200_000):.3f} dB")
