"""Seeded random instances shared by unit and acceptance tests."""

import numpy as np

from subpix.refine_nd import TargetSet

D3 = np.array([[1, 0, 0], [0, 1, 0]])
D4 = np.array([[1, 0, 1, 0], [0, 1, 1, 0]])


def interval_instance(rng, kind, k_range=(9, 81)):
    """Source near the segment between two random targets."""
    k = int(rng.integers(k_range[0], k_range[1] + 1))
    lo, hi = rng.random((2, k))
    t = rng.uniform(-0.2, 1.2)
    fs = (1 - t) * lo + t * hi + 0.1 * rng.normal(size=k)
    return fs, lo, hi


def target_set_instance(rng, m, noise=0.05):
    """Targets around 1 with a source at random barycentric weights plus noise.

    ``m`` is 3 (one rook simplex) or 4 (one queen cell).
    """
    k = int(rng.integers(9, 26))
    vectors = rng.normal(size=(m, k)) + 1.0
    beta = rng.dirichlet(2 * np.ones(m))
    fs = beta @ vectors + noise * rng.normal(size=k)
    return fs, TargetSet(vectors, D3 if m == 3 else D4)


ACCEPTANCE_LINES = []


def record(number, title, ok, detail):
    """Format and remember one acceptance line."""
    tag = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"[{tag}] criterion {number} ({title}): {detail}"
    ACCEPTANCE_LINES.append(line)
    return line
