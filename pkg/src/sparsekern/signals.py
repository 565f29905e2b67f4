"""BUMPS, DOPPLER, BLOCKS and HEAVISINE test functions on [0, 1].

BUMPS is rescaled to peak at 3, DOPPLER and HEAVISINE are mapped affinely
onto [-1, 1] using their extrema on a 10^6-point grid, BLOCKS is left raw.
"""
from __future__ import annotations

import enum
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray

BUMP_HEIGHTS = np.array([1.0, 1.7, 1.0, 1.3, 1.7, 1.4, 0.8])
BUMP_CENTERS = np.array([0.15, 0.2, 0.3, 0.4, 0.6, 0.75, 0.85])
BUMP_WIDTHS = np.array([0.015, 0.015, 0.018, 0.03, 0.03, 0.09, 0.03])
BLOCK_HEIGHTS = np.array([1.0, -1.7, 1.0, -1.3, 1.7, -1.4, 0.8])
BLOCK_EDGES = BUMP_CENTERS

EXTREMA_GRID = 1_000_000


class SignalKind(str, enum.Enum):
    BUMPS = "bumps"
    DOPPLER = "doppler"
    BLOCKS = "blocks"
    HEAVISINE = "heavisine"


def raw_bumps(x: ArrayLike) -> NDArray:
    x = np.asarray(x, dtype=float)[..., None]
    return np.sum(BUMP_HEIGHTS * (1.0 + np.abs((x - BUMP_CENTERS) / BUMP_WIDTHS)) ** -4, axis=-1)


def raw_doppler(x: ArrayLike) -> NDArray:
    x = np.asarray(x, dtype=float)
    return np.sqrt(x * (1.0 - x)) * np.sin(2.0 * np.pi * 1.05 / (x + 0.15))


def raw_blocks(x: ArrayLike) -> NDArray:
    x = np.asarray(x, dtype=float)[..., None]
    return np.sum(BLOCK_HEIGHTS * (1.0 + np.sign(x - BLOCK_EDGES)) / 2.0, axis=-1)


def raw_heavisine(x: ArrayLike) -> NDArray:
    x = np.asarray(x, dtype=float)
    return (5.0 * np.sin(4.0 * np.pi * x) + np.sign(x - 0.1) - 2.0 * np.sign(x - 0.25)
            - 3.0 * np.sign(x - 0.5) + 4.0 * np.sign(x - 0.75) + np.sign(x - 0.9))


_RAW = {
    SignalKind.BUMPS: raw_bumps,
    SignalKind.DOPPLER: raw_doppler,
    SignalKind.BLOCKS: raw_blocks,
    SignalKind.HEAVISINE: raw_heavisine,
}


def raw_signal(kind: SignalKind | str, x: ArrayLike) -> NDArray:
    return _RAW[SignalKind(kind)](x)


@lru_cache(maxsize=None)
def signal_extrema(kind: SignalKind | str) -> tuple[float, float]:
    """``(g_min, g_max)`` of the raw signal on a uniform grid over [0, 1].

    The bump and block locations are added to the grid: BUMPS is convex
    between its centers, so its maximum sits exactly on one of them.
    """
    grid = np.concatenate([np.linspace(0.0, 1.0, EXTREMA_GRID), BUMP_CENTERS])
    values = raw_signal(kind, grid)
    return float(values.min()), float(values.max())


def generate_signal(kind: SignalKind | str, x: ArrayLike) -> NDArray | float:
    """Normalized test function evaluated at ``x``."""
    kind = SignalKind(kind)
    scalar = np.ndim(x) == 0
    g = raw_signal(kind, x)
    if kind is SignalKind.BUMPS:
        g = 3.0 * g / signal_extrema(kind)[1]
    elif kind in (SignalKind.DOPPLER, SignalKind.HEAVISINE):
        g_min, g_max = signal_extrema(kind)
        half_range = 0.5 * (g_max - g_min)
        mid = 0.5 * (g_max + g_min)
        g = (g - mid) / half_range
    return float(g) if scalar else g
