import math

import numpy as np
import pytest

from nxmf import Grid1D, SparseWeights, gaussian_fibers
from nxmf.kernels import Kernel, LINE


def random_sparse_weights(rng, n, density=0.3, scale=None):
    """Random sparse matrix in the admissible scaling regime: ~density*n
    entries per row, each of size ~1/(density*n) so row sums stay O(1)."""
    mask = rng.random((n, n)) < density
    rows, cols = np.nonzero(mask)
    if scale is None:
        scale = 1.0 / max(1, int(density * n))
    vals = rng.uniform(-scale, scale, size=rows.size)
    return SparseWeights(n, rows, cols, vals)


def random_fibers(rng, grid, n_fibers):
    means = rng.uniform(grid.x_min * 0.4, grid.x_max * 0.4, size=n_fibers)
    stds = rng.uniform(0.3, 1.0, size=n_fibers)
    return gaussian_fibers(grid, means, stds)


def pure_linear_kernel():
    """K(x) = -x; unbounded, used for hand-checkable closed forms."""
    return Kernel(
        dim=1,
        eval=lambda x: -x,
        lipschitz=1.0,
        sup_norm=math.inf,
        l1_norm=math.inf,
        div_sup=1.0,
        zero_at_origin=True,
        domain=LINE,
        name="pure_linear",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
