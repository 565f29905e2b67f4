"""Gaussian kernel design matrices with a bias column and per-width groups."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DomainError

DEFAULT_WIDTHS = tuple(round(0.005 * j, 4) for j in range(1, 11))


def _as_points(x: ArrayLike) -> NDArray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DomainError("inputs must be a 1-D array or an (N, d) array of points")
    return x


def _sq_dists(x: NDArray, c: NDArray) -> NDArray:
    d = x[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def gaussian_kernel(x: ArrayLike, c: ArrayLike, h: float) -> float:
    """``exp(-||x - c||^2 / (2 h^2))`` for a single pair of points."""
    if not h > 0:
        raise DomainError(f"kernel width must be positive, got {h}")
    diff = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(c, dtype=float))
    return float(np.exp(-(diff @ diff) / (2.0 * h * h)))


@dataclass(frozen=True)
class KernelBank:
    """Ordered set of Gaussian widths, optionally preceded by a bias column."""

    widths: tuple[float, ...] = DEFAULT_WIDTHS
    include_bias: bool = True

    def __post_init__(self):
        w = np.asarray(self.widths, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise DomainError("a kernel bank needs at least one width")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("kernel widths must be finite and positive")
        if np.any(np.diff(w) <= 0):
            raise DomainError("kernel widths must be strictly increasing")
        object.__setattr__(self, "widths", tuple(float(v) for v in w))

    @classmethod
    def single(cls, h: float, include_bias: bool = True) -> "KernelBank":
        return cls(widths=(h,), include_bias=include_bias)

    @property
    def n_kernels(self) -> int:
        return len(self.widths)


@dataclass(frozen=True)
class GroupedDesign:
    """Design matrix ``[bias | K(h_1) | ... | K(h_J)]`` and its bookkeeping.

    ``group_of_column[m]`` is 0 for the bias column and ``j`` for a column of
    the j-th kernel block. Within a block, columns follow training order.
    """

    matrix: NDArray
    group_of_column: NDArray
    centers: NDArray | None
    bank: KernelBank = field(default_factory=KernelBank)

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    P = n_columns

    def width_of_column(self, m: int) -> float | None:
        g = int(self.group_of_column[m])
        return None if g == 0 else self.bank.widths[g - 1]


def _kernel_blocks(x: NDArray, centers: NDArray, bank: KernelBank) -> NDArray:
    d2 = _sq_dists(x, centers)
    blocks = [np.exp(-d2 / (2.0 * h * h)) for h in bank.widths]
    if bank.include_bias:
        blocks.insert(0, np.ones((x.shape[0], 1)))
    return np.hstack(blocks)


def build_design(train_inputs: ArrayLike, bank: KernelBank | None = None) -> GroupedDesign:
    """Kernel design matrix over the training inputs.

    With ``N`` inputs and ``J`` widths the matrix has ``1 + N J`` columns
    (``N J`` without bias); every training input is a center in every block.
    """
    bank = KernelBank() if bank is None else bank
    x = _as_points(train_inputs)
    if x.shape[0] == 0:
        raise DomainError("cannot build a design from an empty input list")
    if not np.all(np.isfinite(x)):
        raise DomainError("inputs must be finite")
    n = x.shape[0]
    groups = np.repeat(np.arange(1, bank.n_kernels + 1), n)
    if bank.include_bias:
        groups = np.concatenate([[0], groups])
    matrix = _kernel_blocks(x, x, bank)
    matrix.setflags(write=False)
    centers = x.copy()
    centers.setflags(write=False)
    return GroupedDesign(matrix=matrix, group_of_column=groups, centers=centers, bank=bank)


def build_cross_design(new_inputs: ArrayLike, design: GroupedDesign) -> NDArray:
    """Rows of the design evaluated at new inputs, same column layout."""
    if design.centers is None:
        raise DomainError("design has no stored centers")
    x = _as_points(new_inputs)
    if x.shape[1] != design.centers.shape[1]:
        raise DomainError("new inputs have a different dimension than the centers")
    return _kernel_blocks(x, design.centers, design.bank)
