"""Distance functions on inputs and outputs, and pairwise difference quotients."""

from __future__ import annotations

from typing import Any, Callable, Sequence

import numpy as np

OUTPUT_METRICS = ("absolute", "discrete")
INPUT_METRICS = ("l1", "l2", "linf")

Metric = str | Callable[[Any, Any], float]


def input_distance(a: np.ndarray, b: np.ndarray, metric: str = "l1") -> np.ndarray:
    diff = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    if metric == "l1":
        return diff.sum(axis=-1)
    if metric == "l2":
        return np.sqrt((diff**2).sum(axis=-1))
    if metric == "linf":
        return diff.max(axis=-1)
    raise ValueError(f"unknown input metric {metric!r}; choose from {INPUT_METRICS}")


def output_distance(a: np.ndarray, b: np.ndarray, metric: str = "absolute") -> np.ndarray:
    if metric == "absolute":
        return np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    if metric == "discrete":
        return (np.asarray(a) != np.asarray(b)).astype(float)
    raise ValueError(f"unknown output metric {metric!r}; choose from {OUTPUT_METRICS}")


def pair_quotients(X: np.ndarray, y: Sequence[Any], output_metric: Metric = "absolute",
                   input_metric: Metric = "l1") -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """All pairs ``i < j`` as ``(i, j, D(y_i, y_j), d(x_i, x_j))``.

    Named metrics are vectorized; callables are applied pair by pair.
    """
    n = len(y)
    i, j = np.triu_indices(n, k=1)
    if callable(input_metric):
        d = np.array([input_metric(X[a], X[b]) for a, b in zip(i, j)], dtype=float)
    else:
        X = np.asarray(X, dtype=float).reshape(n, -1)
        d = input_distance(X[i], X[j], input_metric)
    if callable(output_metric):
        D = np.array([output_metric(y[a], y[b]) for a, b in zip(i, j)], dtype=float)
    else:
        yy = np.asarray(y, dtype=object if output_metric == "discrete" else float)
        D = output_distance(yy[i], yy[j], output_metric)
    return i, j, D, d
