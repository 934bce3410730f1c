"""Replacement values that look like real parameters to someone who cannot retrain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EmpiricalDist:
    bin_edges: tuple
    bin_counts: tuple

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        counts = np.asarray(self.bin_counts)
        if len(edges) != len(counts) + 1:
            raise ValueError("need one more edge than bins")
        degenerate = len(counts) == 1 and edges[0] == edges[1]
        if not degenerate and np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(counts < 0) or counts.sum() <= 0:
            raise ValueError("bin counts must be non-negative with a positive sum")

    @property
    def support(self):
        return float(self.bin_edges[0]), float(self.bin_edges[-1])

    @property
    def proportions(self) -> np.ndarray:
        c = np.asarray(self.bin_counts, dtype=np.float64)
        return c / c.sum()


def fit_empirical(values, bins: int = 20) -> EmpiricalDist:
    """Equal-width histogram over [min, max]; constant data gives one zero-width bin."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("need at least 2 values")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return EmpiricalDist((lo, hi), (int(v.size),))
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return EmpiricalDist(tuple(float(e) for e in edges), tuple(int(c) for c in counts))


def sample_matching(dist: EmpiricalDist, n: int, seed) -> np.ndarray:
    """Pick a bin with probability proportional to its count, then a uniform point in it."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    edges = np.asarray(dist.bin_edges, dtype=np.float64)
    b = rng.choice(len(dist.bin_counts), size=n, p=dist.proportions)
    out = rng.uniform(edges[b], edges[b + 1])
    # uniform() may round up to the open end; keep samples inside the support
    return np.clip(out, edges[0], edges[-1])


def sample_uniform_range(lo: float, hi: float, n: int, seed) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"need lo < hi, got ({lo}, {hi})")
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.random.default_rng(seed).uniform(lo, hi, size=n)


def decoys_for(selection, model, mode: str = "uniform", lo=None, hi=None, seed=0,
               bins: int = 20) -> np.ndarray:
    """Decoy values for a selection.

    uniform: draws in [lo, hi]; when omitted, the range of the tensors the
    coordinates live in. match: draws from the histogram of the selection's
    own true values.
    """
    n = len(selection.coords)
    if n == 0:
        return np.zeros(0)
    if mode == "match":
        return sample_matching(fit_empirical(selection.true_values, bins), n, seed)
    if mode != "uniform":
        raise ValueError(f"unknown decoy mode {mode!r}")
    if lo is None or hi is None:
        vals = np.concatenate([c.resolve(model)[0].ravel() for c in _one_per_tensor(selection.coords)])
        lo = float(vals.min()) if lo is None else lo
        hi = float(vals.max()) if hi is None else hi
    return sample_uniform_range(lo, hi, n, seed)


def _one_per_tensor(coords):
    seen = {}
    for c in coords:
        seen.setdefault((c.layer_index, c.tensor_role), c)
    return list(seen.values())
