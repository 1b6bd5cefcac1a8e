"""
Finetuning attention mask
=========================

The mask lets each token attend to the prompt and to every token generated at
an earlier step. Reordering rows and columns by step makes it triangular.
"""

import os
import tempfile

import numpy as np

from diagd import DiagConfig, GridGeometry, build_finetune_mask, build_schedule

geom = GridGeometry(frames=2, height=3, width=4, prompt_frames=1)
mask = build_finetune_mask(build_schedule(geom, DiagConfig(k=1, d=3)))

###############################################################################
# Raster order: the mask is no longer a plain lower triangle, since tokens on
# the same diagonal cannot see each other.
for row in mask.bits.astype(int):
    print("".join(".#"[b] for b in row))

###############################################################################
# Schedule order: lower triangular with a block structure per wavefront.
perm = mask.permuted("schedule")
assert not np.triu(perm, 1).any()
print("density:", mask.bits.mean().round(3))

###############################################################################
# Masks are exported as plain PBM bitmaps with a JSON sidecar.
pbm, sidecar = mask.save(os.path.join(tempfile.mkdtemp(), "mask.pbm"), order="schedule")
print(pbm, sidecar)
