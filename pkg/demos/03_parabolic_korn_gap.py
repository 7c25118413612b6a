"""The parabolic Korn gap: a variable exponent breaks the ratio bound.

Reproduces the counterexample table: a velocity field that is a rigid
rotation on an inner core (so its symmetric gradient vanishes there), a
smooth two-valued exponent that is small exactly where the symmetric
gradient lives, and a sequence of mollified singular time profiles.  The
full-gradient norm then outgrows the symmetric-gradient norm, while a
constant exponent keeps their ratio flat.
"""

import os

import varexp as vx
from varexp.korn import (
    WetBlanketConfig,
    korn_ratio_sequence,
    write_heatmaps,
    write_ratio_csv,
)

OUT = os.path.join(os.path.dirname(__file__), "..", "out-demo")
os.makedirs(OUT, exist_ok=True)

grid = vx.grid_on_box([-3, -3], [3, 3], [96, 96])
disc = vx.make_disc_domain((0, 0), 2.5, grid)
time_grid = vx.grid_on_box([-1.5], [1.5], [256])

cfg = WetBlanketConfig(alpha=1.1, beta=2.0, eps=0.4)
rows = korn_ratio_sequence(cfg, disc, time_grid, 5)
print("variable exponent (alpha 1.1, beta 2.0):")
print(" n  |phi|_1.1  |phi|_2     num      den    ratio    lower")
for r in rows:
    print(f" {r.n}   {r.norm_alpha:7.4f}  {r.norm_beta:7.4f}  {r.num:7.4f}  "
          f"{r.den:7.4f}  {r.ratio:6.4f}  {r.lower_bound:6.4f}")
print(f"ratio growth over the table: x{rows[-1].ratio / rows[0].ratio:.4f} "
      "(strictly increasing; the growth is logarithmic in n)")

flat = korn_ratio_sequence(WetBlanketConfig(alpha=1.5, beta=1.5, eps=0.4), disc, time_grid, 5)
ratios = [r.ratio for r in flat]
print(f"constant exponent contrast: ratios stay within x{max(ratios) / min(ratios):.5f}")

write_ratio_csv(os.path.join(OUT, "demo03_korn_ratio.csv"), rows, comment="demo 03")
paths = write_heatmaps(OUT, cfg, disc)
print("wrote", ", ".join(os.path.basename(p) for p in paths))
