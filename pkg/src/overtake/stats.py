from statistics import NormalDist

import numpy as np

Z95 = NormalDist().inv_cdf(0.975)


def mean_ci(samples, level=0.95):
    """Sample mean and normal-approximation CI half-width.

    Reductions go through ``np.mean``/``np.std`` on a contiguous 1-d array,
    so the result is a deterministic function of the sample values.
    """
    a = np.ascontiguousarray(samples, dtype=float).ravel()
    n = a.size
    if n == 0:
        raise ValueError("empty sample")
    m = float(np.mean(a))
    if n == 1:
        return m, float("inf")
    z = Z95 if level == 0.95 else NormalDist().inv_cdf(0.5 + level / 2)
    return m, float(z * np.std(a, ddof=1) / np.sqrt(n))


def roundoff_floor(*scales, factor=1e3):
    """Absolute tolerance below which a discrepancy is floating-point noise.

    ``factor * eps`` times the largest magnitude involved. Used wherever an
    estimator has (near) zero variance and a CI-based comparison would
    otherwise demand bit equality.
    """
    s = max((float(np.max(np.abs(v))) if np.size(v) else 0.0) for v in scales) if scales else 0.0
    return factor * np.finfo(float).eps * max(1.0, s)
