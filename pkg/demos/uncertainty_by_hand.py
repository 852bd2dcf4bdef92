"""
Uncertainty from a sweep, by hand
=================================

The uncertainty of a pixel is one minus the fraction of the 101 sweep
weights at which it was called vessel, and zero if that fraction is 0 or 1.
Here the mask stack is written directly instead of coming from a network.
"""
import numpy as np

from lal import denoise, uncertainty_map
from lal.metrics import compute_metrics
from lal.sweep import SweepResult, make_grid

grid = make_grid(0.01)
masks = np.zeros((101, 6, 8), bool)
masks[:, 2, 1:7] = True        # a vessel present at every weight
masks[70:, 3, 1:7] = True      # its second row appears from w = 0.70
masks[95:, 0, 0] = True        # a speck that only shows at the very end
masks[40:60, 5, 7] = True      # a speck in the middle of the sweep

result = SweepResult(grid, masks, [compute_metrics(m) for m in masks])
u = uncertainty_map(result)
np.set_printoptions(precision=3, suppress=True)
print(u)
print("1 - 31/101 =", round(1 - 31 / 101, 4))

# denoise drops components smaller than 3 px whose mean uncertainty exceeds 0.7
mask, _ = result.at(1.0)
print("before:", mask.sum(), "px  after:", denoise(mask, u).sum(), "px")
