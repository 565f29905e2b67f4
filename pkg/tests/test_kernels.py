import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsekern.exceptions import DomainError
from sparsekern.kernels import (
    DEFAULT_WIDTHS,
    KernelBank,
    build_cross_design,
    build_design,
    gaussian_kernel,
)


class TestGaussianKernel:
    def test_zero_distance(self):
        assert gaussian_kernel(0.3, 0.3, 0.01) == 1.0

    def test_distance_equal_width(self):
        assert gaussian_kernel(0.2, 0.25, 0.05) == pytest.approx(math.exp(-0.5), rel=1e-12)
        assert gaussian_kernel([0.0, 0.3], [0.4, 0.0], 0.5) == pytest.approx(0.606531, abs=1e-6)

    @given(d1=st.floats(0, 1), d2=st.floats(0, 1))
    def test_decreasing_in_distance(self, d1, d2):
        if d1 < d2:
            assert gaussian_kernel(0.0, d1, 0.1) >= gaussian_kernel(0.0, d2, 0.1)

    @pytest.mark.parametrize("h", [0.0, -0.1])
    def test_bad_width(self, h):
        with pytest.raises(DomainError):
            gaussian_kernel(0.0, 1.0, h)


class TestKernelBank:
    def test_default_bank(self):
        bank = KernelBank()
        assert bank.n_kernels == 10
        assert bank.widths[0] == 0.005 and bank.widths[-1] == 0.05
        np.testing.assert_allclose(np.diff(bank.widths), 0.005, atol=1e-12)
        assert bank.widths == DEFAULT_WIDTHS

    @pytest.mark.parametrize("widths", [(), (0.1, 0.1), (0.2, 0.1), (-0.1, 0.1), (0.0,)])
    def test_invalid(self, widths):
        with pytest.raises(DomainError):
            KernelBank(widths=widths)


class TestBuildDesign:
    def test_small_layout(self):
        x = np.array([0.1, 0.5, 0.9])
        design = build_design(x, KernelBank(widths=(0.1, 0.3)))
        assert design.n_columns == 7
        np.testing.assert_array_equal(design.matrix[:, 0], 1.0)
        np.testing.assert_array_equal(design.group_of_column, [0, 1, 1, 1, 2, 2, 2])
        np.testing.assert_array_equal(np.diag(design.matrix[:, 1:4]), 1.0)
        np.testing.assert_array_equal(np.diag(design.matrix[:, 4:7]), 1.0)
        assert design.matrix[0, 2] == pytest.approx(gaussian_kernel(0.1, 0.5, 0.1))
        assert design.width_of_column(5) == 0.3
        assert design.width_of_column(0) is None

    def test_default_bank_size(self):
        x = np.random.default_rng(0).uniform(size=100)
        design = build_design(x)
        assert design.matrix.shape == (100, 1001)
        assert design.P == 1001

    def test_single_kernel_matches_direct(self):
        x = np.random.default_rng(1).uniform(size=8)
        design = build_design(x, KernelBank.single(0.05))
        direct = np.exp(-((x[:, None] - x[None, :]) ** 2) / (2 * 0.05 ** 2))
        np.testing.assert_allclose(design.matrix[:, 1:], direct, rtol=1e-15)
        assert design.n_columns == 9

    def test_blocks_symmetric_and_bounded(self):
        x = np.random.default_rng(2).uniform(size=20)
        design = build_design(x)
        n = 20
        for j in range(10):
            block = design.matrix[:, 1 + j * n: 1 + (j + 1) * n]
            np.testing.assert_array_equal(block, block.T)
            # narrow widths underflow to exactly 0 in double precision
            assert np.all(block >= 0) and np.all(block <= 1)

    def test_wider_blocks_majorize(self):
        x = np.random.default_rng(3).uniform(size=15)
        m = build_design(x).matrix
        n = 15
        for j in range(9):
            narrow = m[:, 1 + j * n: 1 + (j + 1) * n]
            wide = m[:, 1 + (j + 1) * n: 1 + (j + 2) * n]
            assert np.all(wide >= narrow)

    def test_multidimensional_inputs(self):
        x = np.random.default_rng(4).uniform(size=(6, 3))
        design = build_design(x, KernelBank(widths=(0.5,)))
        assert design.matrix[1, 3] == pytest.approx(gaussian_kernel(x[1], x[2], 0.5))

    def test_no_bias(self):
        design = build_design([0.1, 0.2, 0.3], KernelBank(widths=(0.1,), include_bias=False))
        assert design.n_columns == 3
        assert 0 not in design.group_of_column

    def test_empty(self):
        with pytest.raises(DomainError):
            build_design([])

    def test_deterministic(self):
        x = np.random.default_rng(5).uniform(size=10)
        np.testing.assert_array_equal(build_design(x).matrix, build_design(x).matrix)


class TestCrossDesign:
    def test_identity_of_construction(self):
        x = np.random.default_rng(6).uniform(size=12)
        design = build_design(x)
        np.testing.assert_array_equal(build_cross_design(x, design), design.matrix)

    def test_point_at_center(self):
        x = np.array([0.2, 0.4, 0.7])
        design = build_design(x, KernelBank(widths=(0.05, 0.1)))
        row = build_cross_design([0.4], design)[0]
        assert row[0] == 1.0
        assert row[1 + 1] == 1.0 and row[1 + 3 + 1] == 1.0

    def test_prediction_grid_shape(self):
        x = np.random.default_rng(7).uniform(size=100)
        design = build_design(x)
        grid = np.linspace(0.0, 1.0, 1000)
        assert build_cross_design(grid, design).shape == (1000, 1001)

    def test_missing_centers(self):
        design = build_design([0.1, 0.2])
        stripped = type(design)(design.matrix, design.group_of_column, None, design.bank)
        with pytest.raises(DomainError):
            build_cross_design([0.3], stripped)
