"""Independent reference computations shared by unit and acceptance tests."""

import math

import numpy as np
from scipy import stats


def phd_update_oracle(spec, lam_pred, Z, pd, lam_fa, sigma=1.0):
    """Textbook PHD measurement update of a grid intensity, cell by cell.

    Each cell holds a constant density, so the likelihood of z for a cell is
    the Gaussian averaged over the cell's position box. Cells whose centre is
    further than the gate radius from z get no likelihood.
    """
    arr = np.asarray(lam_pred, dtype=float).reshape(spec.shape)
    out = (1.0 - pd) * arr
    pc, h = spec.pos_centers, spec.dp / 2
    r = 6.0 * sigma + spec.dp * math.sqrt(2) / 2
    V = spec.cell_volume
    for z in np.asarray(Z, dtype=float).reshape(-1, 2):
        mx = stats.norm.cdf(pc + h, z[0], sigma) - stats.norm.cdf(pc - h, z[0], sigma)
        my = stats.norm.cdf(pc + h, z[1], sigma) - stats.norm.cdf(pc - h, z[1], sigma)
        gate = (pc[:, None] - z[0]) ** 2 + (pc[None, :] - z[1]) ** 2 <= r * r
        like = np.outer(mx, my) / spec.dp**2 * gate
        num = pd * like[:, None, :, None] * arr
        out = out + num / (lam_fa + num.sum() * V)
    return out.reshape(-1)
