"""
From step ratio to frames per second
====================================

Wall-clock time is modelled as a fixed cost per forward pass plus a cost per
token. Only the first term shrinks with fewer steps.
"""

from diagd import CostModel, DiagConfig, GridGeometry, calibrate, throughput_estimate

geom = GridGeometry(frames=3, height=40, width=64, prompt_frames=2)
cfg = DiagConfig(k=1, d=40)

###############################################################################
# Pure per-step cost: the speedup is the step ratio.
flat = CostModel(overhead_per_step=0.05, cost_per_token=0.0)
ratio = throughput_estimate(flat, geom, cfg)["fps"] / throughput_estimate(flat, geom)["fps"]
print(f"step ratio {ratio:.2f}")

###############################################################################
# Fit both costs to a pair of measured rates (24 output frames per run).
cost = calibrate(geom, cfg, fps_ntp=0.15, fps_diag=1.62, frames_out=24)
print(cost)
for c in (None, cfg):
    est = throughput_estimate(cost, geom, c, frames_out=24)
    print(f"steps={est['steps']:<5d} fps={est['fps']:.3f}")
