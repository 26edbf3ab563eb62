"""
Parameter maps from a synthetic volume
======================================

Build a small volume with a perfusion hot spot, fit every voxel and write the
maps as CSV grids and 8-bit PGM images.
"""

import sys
from pathlib import Path

import numpy as np

from ivimfit import FitConfig, IvimParams, NoiseSpec, VoxelVolume, fit_volume, simulate
from ivimfit.formats import map_to_csv, map_to_pgm, write_atomic
from ivimfit.suites import INVIVO_SCHEME

out = Path(sys.argv[1] if len(sys.argv) > 1 else "volume_maps_out")

###############################################################################
# A 12x12 slice: background tissue with f = 0.08, a disc with f = 0.3.

nx = ny = 12
xx, yy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
disc = (xx - 6) ** 2 + (yy - 6) ** 2 <= 9
f_map = np.where(disc, 0.3, 0.08)

data = np.empty((nx, ny, 1, len(INVIVO_SCHEME)))
for i in range(nx):
    for j in range(ny):
        p = IvimParams(1.0, f_map[i, j], 0.02, 0.0011)
        data[i, j, 0] = simulate(p, INVIVO_SCHEME, NoiseSpec("rician", 40, i * ny + j)).signal

###############################################################################
# Fit every voxel. The mask skips the corner voxel, which keeps NaN in the
# maps and -1 in the flag grid.

mask = np.ones((nx, ny, 1), dtype=bool)
mask[0, 0, 0] = False
maps = fit_volume(VoxelVolume(data, INVIVO_SCHEME, mask), FitConfig())

print("median f inside disc :", np.nanmedian(maps.f[disc]))
print("median f outside disc:", np.nanmedian(maps.f[~disc & mask[..., 0]]))

for name, grid in maps.as_dict().items():
    write_atomic(out / f"{name}.csv", map_to_csv(grid))
    write_atomic(out / f"{name}.pgm", map_to_pgm(grid, name))
print("maps written to", out)
