"""Synthetic opinion-score panels drawn from the subject model."""

import numpy as np

from cband.sureal import RatingsTable


def planted_panel(seed=0, n_stimuli=20, n_subjects=15, rounded=True):
    rng = np.random.default_rng(seed)
    q = rng.uniform(20, 90, n_stimuli)
    b = rng.uniform(-8, 8, n_subjects)
    b -= b.mean()
    v = rng.uniform(1, 6, n_subjects)
    x = q[:, None] + b[None, :] + rng.standard_normal((n_stimuli, n_subjects)) * v[None, :]
    if rounded:
        x = np.round(x)
    table = RatingsTable([f"s{j:02d}" for j in range(n_subjects)], [f"e{i:02d}" for i in range(n_stimuli)],
                         [f"c{i // 4}" for i in range(n_stimuli)], x)
    return table, q, b, v
