"""Pure-numpy reference kernels.

These are the fallback (and the semantic definition) for the compiled
versions in ``_fast.pyx``.  Both backends must produce bit-identical
results: keep the per-element operation order in sync with the .pyx file.
"""

from __future__ import annotations

import numpy as np


def scatter_add_rows(out: np.ndarray, ids: np.ndarray, rows: np.ndarray) -> None:
    """Accumulate ``rows[k]`` into ``out[ids[k]]`` in index order, in place.

    Args:
        out: float64 matrix [V, d], modified in place.
        ids: int64 vector [N] of row indices into ``out``.
        rows: float64 matrix [N, d] of addends.
    """
    np.add.at(out, ids, rows)


def adamw_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
    bias_c1: float,
    bias_c2: float,
) -> None:
    """Decoupled-weight-decay Adam step on flat float64 arrays, in place.

    Decay is applied multiplicatively before the moment-based step; the
    moment estimates are bias-corrected with the precomputed factors
    ``bias_c1 = 1 - beta1**t`` and ``bias_c2 = 1 - beta2**t``.
    """
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * ((m / bias_c1) / (np.sqrt(v / bias_c2) + eps))
