"""Small shared numeric helpers."""

from __future__ import annotations

import numpy as np


def round_half_away(x):
    """Round to nearest integer, ties away from zero.

    The single rounding rule used everywhere an intensity or score is
    quantized, so outputs are bit-reproducible. Works on scalars and arrays;
    returns floats holding integral values.
    """
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
