"""
Wavefront schedules and step counts
===================================

A diagonal schedule assigns each token of a (frames, height, width) grid a
generation step. Tokens sharing a step are sampled in one forward pass.
"""

import numpy as np

from diagd import DiagConfig, GridGeometry, build_schedule, step_count
from diagd.scheduler import preset_rows, speedup

###############################################################################
# A small grid, one frame at a time. With ``k = 1`` each row starts one step
# after the row above, so the anti-diagonals ``i + j`` share a step.
geom = GridGeometry(frames=2, height=4, width=6)
sched = build_schedule(geom, DiagConfig(k=1, d=4))
print(sched.steps)
print("wavefront widths:", sched.widths.tolist())

###############################################################################
# Raising ``k`` tilts the diagonal; the degenerate config (k = w, no frame
# overlap) is plain raster order.
for k in (1, 2, 6):
    cfg = DiagConfig(k=k, temporal=False)
    print(k, step_count(geom, cfg))
raster = build_schedule(geom, DiagConfig.raster(geom))
assert np.array_equal(raster.steps.ravel(), np.arange(1, geom.num_tokens + 1))

###############################################################################
# The model-family presets, with exact speedup ratios.
for name in ("cosmos", "wham", "mcar"):
    g, rows = preset_rows(name)
    for row in rows:
        rep = speedup(g, row.config)
        print(f"{name:7s} k={row.config.k:<3d} d={row.config.effective_d(g):<5d} "
              f"steps={rep.steps_diag:<6d} speedup={float(rep.ratio_exact):6.2f}")
