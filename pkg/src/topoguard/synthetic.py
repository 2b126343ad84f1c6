"""Deterministic synthetic fields used as fixtures and by the ``gen`` subcommand."""

from __future__ import annotations

import numpy as np

from .grid import ScalarField

__all__ = ["gaussian_mix", "monotone", "cascade_1d", "generate"]


def gaussian_mix(dims, k: int = 8, seed: int = 0, ramp: float = 0.05) -> ScalarField:
    """Sum of ``k`` random Gaussian bumps on the unit box, one maximum per bump.

    A weak linear ramp keeps the far tails from flattening into values that
    differ only below the working error bound.
    """
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    axes = [np.linspace(0.0, 1.0, d) if d > 1 else np.zeros(1) for d in dims]
    grids = np.meshgrid(*axes, indexing="ij")
    out = np.zeros(dims)
    for _ in range(k):
        center = rng.uniform(0.1, 0.9, size=len(dims))
        sigma = rng.uniform(0.06, 0.16)
        amp = rng.uniform(0.5, 1.0)
        d2 = sum((g - c) ** 2 for g, c in zip(grids, center))
        out += amp * np.exp(-d2 / (2.0 * sigma**2))
    slope = rng.uniform(0.5, 1.0, size=len(dims))
    out += ramp * sum(s * g for s, g in zip(slope, grids)) / slope.sum()
    return ScalarField.from_array(out)


def monotone(dims) -> ScalarField:
    """Sum of grid coordinates: no interior critical points."""
    dims = tuple(int(d) for d in dims)
    return ScalarField.from_array(np.indices(dims).sum(axis=0).astype(float))


def cascade_1d(length: int = 5, gap: float = 1.0) -> ScalarField:
    """1 x ``length`` strictly decreasing ramp with spacing ``gap``."""
    return ScalarField((1, length), gap * np.arange(length, 0, -1, dtype=float))


def generate(kind: str, dims, seed: int = 0, k: int = 8) -> ScalarField:
    if kind == "gaussian":
        return gaussian_mix(dims, k=k, seed=seed)
    if kind == "monotone":
        return monotone(dims)
    if kind == "cascade":
        return cascade_1d(int(np.prod(dims)))
    raise ValueError(f"unknown synthetic kind {kind!r}")
