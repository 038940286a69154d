"""Synthetic score curves with known metric orderings.

These generators produce cumulative-score histories whose acquisition,
plateau, and retention orderings are known analytically, so the metric
pipeline can be audited end to end without running a single episode.
A saturating learner's rate rises like plateau * (1 - exp(-t / tau)):
small tau means fast acquisition, the plateau parameter is the
asymptotic rate.  The drift pair shares a plateau but keeps a different
fraction of it after a mid-episode change mark.
"""

from __future__ import annotations

import math


def saturating_learner(plateau: float, tau: float, horizon: int) -> list[tuple[int, float]]:
    """Cumulative samples for a learner that saturates at the given rate."""
    samples = []
    total = 0.0
    for t in range(horizon + 1):
        total += plateau * (1.0 - math.exp(-t / tau))
        samples.append((t, total))
    return samples


def drifting_learner(plateau: float, tau: float, retention: float,
                     mark: int, horizon: int) -> list[tuple[int, float]]:
    """A saturating learner whose rate falls to `retention * plateau` at `mark`.

    After the mark the rate re-approaches the plateau with the same time
    constant, starting from the retained fraction.
    """
    samples = []
    total = 0.0
    for t in range(horizon + 1):
        if t < mark:
            rate = plateau * (1.0 - math.exp(-t / tau))
        else:
            kept = retention * plateau
            rate = kept + (plateau - kept) * (1.0 - math.exp(-(t - mark) / tau))
        total += rate
        samples.append((t, total))
    return samples


#: Three learners whose acquisition order (1 > 3 > 2) deliberately
#: disagrees with their plateau order (1 > 2 > 3).
REFERENCE_LEARNERS = {
    "learner1": {"plateau": 1.0, "tau": 5.0},
    "learner2": {"plateau": 0.7, "tau": 40.0},
    "learner3": {"plateau": 0.4, "tau": 15.0},
}

REFERENCE_HORIZON = 120

#: Same plateau, same change mark, different kept fractions.
REFERENCE_DRIFT_PAIR = {
    "keeper": {"plateau": 1.0, "tau": 5.0, "retention": 0.8},
    "forgetter": {"plateau": 1.0, "tau": 5.0, "retention": 0.2},
}

REFERENCE_MARK = 60


def reference_learner_samples() -> dict[str, list[tuple[int, float]]]:
    return {
        name: saturating_learner(cfg["plateau"], cfg["tau"], REFERENCE_HORIZON)
        for name, cfg in REFERENCE_LEARNERS.items()
    }


def reference_drift_samples() -> dict[str, list[tuple[int, float]]]:
    return {
        name: drifting_learner(
            cfg["plateau"], cfg["tau"], cfg["retention"],
            REFERENCE_MARK, REFERENCE_HORIZON,
        )
        for name, cfg in REFERENCE_DRIFT_PAIR.items()
    }
