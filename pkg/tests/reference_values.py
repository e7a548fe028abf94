"""Published reference figures for the latency experiment, plus sample synthesis.

Five-number summaries and (mean, variance, sd) per client are in ms.
"""

import numpy as np

FIVE_NUMBER = {
    "CLNT1": (0.4, 0.7, 0.8, 1.0, 2.9),
    "CLNT2": (0.5, 0.8, 0.9, 1.1, 1.8),
    "CLNT3": (43.7, 44.0, 44.1, 44.3, 55.0),
    "CLNT4": (134.9, 135.2, 135.3, 135.5, 138.5),
}
SPREAD = {
    "CLNT1": (0.9, 0.1, 0.3),
    "CLNT2": (1.0, 0.1, 0.3),
    # variance 0.4 and sd 0.7 disagree after rounding; the sd is used
    "CLNT3": (44.2, 0.4, 0.7),
    "CLNT4": (135.4, 0.1, 0.3),
}
PUBLISHES = 491
N_SAMPLES = 491


def synthetic_latency(mean, sd, n=N_SAMPLES, seed=0, floor=None):
    """Normal samples with the given mean and sd; values below ``floor`` are redrawn."""
    rng = np.random.default_rng(seed)
    x = rng.normal(mean, sd, n)
    if floor is not None:
        while (x < floor).any():
            bad = x < floor
            x[bad] = rng.normal(mean, sd, bad.sum())
    return x
