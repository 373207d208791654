"""Jackknife errors, moment estimators and ordered ensemble evaluation."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from .random_fields import sample_rng


def default_threads() -> int:
    env = os.environ.get("PHONONFLUX_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def jackknife(samples: np.ndarray, estimator: Callable[[np.ndarray], np.ndarray] = None,
              n_blocks: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Delete-one-block jackknife of ``estimator`` over axis 0 of ``samples``.

    Returns the full-sample estimate and its standard error.  With the default
    mean estimator and one block per sample this is the usual ``s / sqrt(M)``.
    """
    samples = np.asarray(samples)
    M = samples.shape[0]
    if M < 2:
        raise ValueError("jackknife needs at least two samples")
    if estimator is None:
        mean = samples.mean(axis=0)
        return mean, samples.std(axis=0, ddof=1) / np.sqrt(M)
    n_blocks = min(M, n_blocks or M)
    edges = np.linspace(0, M, n_blocks + 1).astype(int)
    full = np.asarray(estimator(samples))
    keep = np.ones(M, dtype=bool)
    reps = []
    for b in range(n_blocks):
        keep[edges[b]:edges[b + 1]] = False
        reps.append(estimator(samples[keep]))
        keep[edges[b]:edges[b + 1]] = True
    reps = np.asarray(reps)
    se = np.sqrt((n_blocks - 1) / n_blocks * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    return full, se


def skewness(x: np.ndarray) -> float:
    c = x - x.mean()
    return float(np.mean(c**3) / np.mean(c**2) ** 1.5)


def excess_kurtosis(x: np.ndarray) -> float:
    c = x - x.mean()
    return float(np.mean(c**4) / np.mean(c**2) ** 2 - 3.0)


def ensemble(draw: Callable, fn: Callable[[np.ndarray], np.ndarray], M: int, seed: int,
             batch: int = 256, threads: int = 1) -> np.ndarray:
    """Evaluate ``fn(draw(rngs))`` over ``M`` members in ordered batches.

    ``draw`` turns a list of generators into a stacked batch; ``fn`` maps a
    batch to per-member results.  Member ``i`` always uses the stream
    ``(seed, i)`` and results are concatenated in member order, so the output
    does not depend on ``batch`` or ``threads``.
    """
    starts = list(range(0, M, batch))

    def work(s):
        rngs = [sample_rng(seed, i) for i in range(s, min(M, s + batch))]
        return np.asarray(fn(draw(rngs)))

    if threads <= 1 or len(starts) == 1:
        parts = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    return np.concatenate(parts, axis=0)
