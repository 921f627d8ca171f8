"""Unit tests for forward operators, data-fit energies and residual gradients."""

import numpy as np
import pytest

from errors import ConfigurationError, ShapeError
from operators import (
    TIERS,
    AndPairs,
    BoxInpaint,
    DataFit,
    Downsample,
    GaussianBlur,
    Hdr,
    Identity,
    ImageGrid,
    Inpaint,
    Measurement,
    MotionBlur,
    XorPairs,
    centered_box,
    data_fit_value,
    gaussian_kernel,
    load_kernel,
    load_mask,
    random_inpaint_mask,
    random_pairs,
    residual_gradient,
    simulate_measurement,
)


# asymmetric and even-sized, so the uneven padding split matters
MOTION_KERNEL = np.array([[1.0, 2.0, 0.5], [0.3, 1.0, 2.5]])


def all_operators(grid, rng):
    return [
        Identity(grid),
        Inpaint(grid, random_inpaint_mask(grid, 0.5, rng)),
        BoxInpaint(grid, (1, 1, 2, 2)),
        XorPairs(grid, random_pairs(grid, 5, rng)),
        AndPairs(grid, random_pairs(grid, 5, rng)),
        GaussianBlur(grid, 3, 1.0),
        MotionBlur(grid, MOTION_KERNEL),
        Downsample(grid, 2),
        Hdr(grid),
    ]


class TestImageGrid:
    """Test the flattening convention."""

    def test_channel_major_layout(self):
        grid = ImageGrid(2, 3, 2)
        assert grid.size == 12
        img = grid.to_image(np.arange(12.0))
        assert img.shape == (2, 2, 3)
        assert img[1, 0, 0] == 6.0

    def test_rejects_bad_sizes(self):
        with pytest.raises(ShapeError):
            ImageGrid(0, 3)
        with pytest.raises(ShapeError):
            ImageGrid(2, 2).to_image(np.zeros(5))


class TestLinearOperators:
    """Test apply and the adjoint of every linear operator."""

    @pytest.mark.parametrize("channels", [1, 3])
    def test_adjoint_identity(self, rng, channels):
        grid = ImageGrid(4, 4, channels)
        ops = [op for op in all_operators(grid, rng) if op.linear]
        for op in ops:
            x = rng.normal(size=grid.size)
            u = rng.normal(size=op.output_dim)
            assert np.dot(op.apply(x), u) == pytest.approx(np.dot(x, op.adjoint(u)), rel=1e-10), op.kind

    @pytest.mark.parametrize("shape", [(2, 3), (1, 4), (3, 2), (4, 1)])
    def test_motion_blur_adjoint_for_uneven_kernels(self, rng, shape):
        grid = ImageGrid(5, 6, 2)
        op = MotionBlur(grid, rng.uniform(0.1, 1.0, size=shape))
        x = rng.normal(size=grid.size)
        u = rng.normal(size=grid.size)
        assert np.dot(op.apply(x), u) == pytest.approx(np.dot(x, op.adjoint(u)), rel=1e-9)

    def test_inpaint_keeps_observed_pixels(self):
        grid = ImageGrid(2, 2)
        op = Inpaint(grid, np.array([[True, False], [False, True]]))
        np.testing.assert_array_equal(op.apply(np.array([1.0, 2.0, 3.0, 4.0])), [1.0, 4.0])
        np.testing.assert_array_equal(op.visualize(np.array([1.0, 4.0])).ravel(), [1.0, 0.5, 0.5, 4.0])

    def test_box_inpaint_hides_rectangle(self):
        grid = ImageGrid(4, 4)
        op = BoxInpaint(grid, (1, 0, 2, 3))
        assert op.output_dim == 16 - 6
        assert not op.observed[0:3, 1:3].any()
        with pytest.raises(ShapeError):
            BoxInpaint(grid, (3, 0, 2, 2))

    def test_blur_preserves_constant_images(self):
        grid = ImageGrid(6, 6)
        x = np.full(grid.size, 0.3)
        np.testing.assert_allclose(GaussianBlur(grid, 5, 1.5).apply(x), x, atol=1e-12)

    def test_blur_kernel_wider_than_image(self):
        grid = ImageGrid(4, 4)
        op = GaussianBlur(grid, 61, 3.0)
        x = np.linspace(0, 1, grid.size)
        assert op.apply(x).shape == (grid.size,)
        u = np.linspace(-1, 1, grid.size)
        assert np.dot(op.apply(x), u) == pytest.approx(np.dot(x, op.adjoint(u)), rel=1e-10)

    def test_gaussian_kernel_is_normalized_and_symmetric(self):
        k = gaussian_kernel(7, 2.0)
        assert k.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(k, k.T)
        np.testing.assert_allclose(k, k[::-1, ::-1])
        with pytest.raises(ConfigurationError):
            gaussian_kernel(0, 1.0)

    def test_downsample_block_average(self):
        grid = ImageGrid(4, 4)
        op = Downsample(grid, 2)
        x = np.arange(16.0)
        np.testing.assert_allclose(op.apply(x), [2.5, 4.5, 10.5, 12.5])
        assert op.output_shape == (1, 2, 2)
        with pytest.raises(ShapeError):
            Downsample(grid, 3)


class TestNonlinearOperators:
    """Test pair operators and the HDR tone map."""

    def test_xor_and_on_binary_inputs(self):
        grid = ImageGrid(1, 4)
        pairs = np.array([[0, 1], [2, 3], [0, 3]])
        x = np.array([1.0, 0.0, 1.0, 1.0])
        np.testing.assert_array_equal(XorPairs(grid, pairs).apply(x), [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(AndPairs(grid, pairs).apply(x), [0.0, 1.0, 1.0])
        np.testing.assert_array_equal(XorPairs(grid, pairs).apply_relaxed(x), [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(AndPairs(grid, pairs).apply_relaxed(x), [0.0, 1.0, 1.0])

    def test_pairs_validation(self):
        grid = ImageGrid(1, 4)
        with pytest.raises(ConfigurationError):
            XorPairs(grid, np.array([[1, 1]]))
        with pytest.raises(ShapeError):
            XorPairs(grid, np.array([[0, 4]]))

    def test_hdr_clips(self):
        op = Hdr(ImageGrid(1, 4))
        np.testing.assert_allclose(op.apply(np.array([0.0, 0.25, 0.5, 1.0])), [0.0, 0.0, 0.5, 1.0])

    def test_nonlinear_operators_have_no_adjoint(self):
        with pytest.raises(TypeError):
            Hdr(ImageGrid(1, 2)).adjoint(np.zeros(2))


class TestResidualGradient:
    """Test the data-fit gradient against central differences."""

    @pytest.mark.parametrize("fit", [DataFit(l1=0.0, l2=0.7), DataFit(l1=1.3, l2=0.2)])
    def test_matches_finite_differences(self, rng, fit):
        grid = ImageGrid(4, 4)
        h = 1e-4
        for op in all_operators(grid, rng):
            x = rng.uniform(0.3, 0.7, size=grid.size)
            # residuals kept away from zero, where the l1 term has a kink
            offset = rng.choice([-1.0, 1.0], size=op.output_dim) * rng.uniform(0.05, 0.2, size=op.output_dim)
            y = Measurement(op.apply_relaxed(x) + offset, 0.1, op)
            g = residual_gradient(op, x, y, fit)
            fd = np.array(
                [-(data_fit_value(op, x + h * e, y, fit) - data_fit_value(op, x - h * e, y, fit)) / (2 * h) for e in np.eye(grid.size)]
            )
            assert np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-5, op.kind

    def test_gaussian_data_fit_weights(self):
        fit = DataFit.gaussian(0.5)
        assert (fit.l1, fit.l2) == (0.0, 2.0)
        with pytest.raises(ConfigurationError):
            DataFit.gaussian(0.0)
        with pytest.raises(ConfigurationError):
            DataFit(l1=-1.0)

    def test_measurement_shape(self):
        op = Identity(ImageGrid(2, 2))
        with pytest.raises(ShapeError):
            Measurement(np.zeros(3), 0.1, op)
        with pytest.raises(ValueError):
            Measurement(np.zeros(4), -0.1, op)

    def test_noiseless_simulation_is_exact(self, rng):
        op = Downsample(ImageGrid(4, 4), 2)
        x = rng.uniform(size=16)
        y = simulate_measurement(op, x, 0.0, rng)
        np.testing.assert_array_equal(y.values, op.apply(x))
        assert data_fit_value(op, x, y, DataFit()) == 0.0


class TestTiersAndFiles:
    """Test difficulty tiers, masks, kernels and pair sampling."""

    def test_tier_table(self):
        assert (TIERS["easy"].mask_fraction, TIERS["easy"].sigma, TIERS["easy"].box_side) == (0.5, 0.0, 8)
        assert (TIERS["medium"].mask_fraction, TIERS["medium"].sigma, TIERS["medium"].box_side) == (0.7, 0.05, 12)
        assert (TIERS["hard"].mask_fraction, TIERS["hard"].sigma, TIERS["hard"].box_side) == (0.85, 0.1, 16)

    def test_random_mask_hides_requested_fraction(self, rng):
        mask = random_inpaint_mask(ImageGrid(8, 8), 0.7, rng)
        assert mask.shape == (8, 8)
        assert int((~mask).sum()) == 45
        with pytest.raises(ConfigurationError):
            random_inpaint_mask(ImageGrid(8, 8), 1.0, rng)

    def test_centered_box_scales_with_height(self):
        assert centered_box(ImageGrid(32, 32), 12) == (10, 10, 12, 12)
        assert centered_box(ImageGrid(8, 8), 12) == (2, 2, 3, 3)

    def test_random_pairs_are_distinct(self, rng):
        pairs = random_pairs(ImageGrid(3, 3), 20, rng)
        assert pairs.shape == (20, 2)
        assert np.all(pairs[:, 0] != pairs[:, 1])

    def test_load_kernel(self, tmp_path):
        path = tmp_path / "k.txt"
        path.write_text("1 3\n1 2 1\n")
        np.testing.assert_allclose(load_kernel(path), [[0.25, 0.5, 0.25]])
        op = MotionBlur.from_file(ImageGrid(3, 3), path)
        assert op.kind == "motion_blur"
        path.write_text("2 2\n1 2 3\n")
        with pytest.raises(ConfigurationError):
            load_kernel(path)

    def test_load_mask(self, tmp_path):
        path = tmp_path / "mask.txt"
        path.write_text("1 0\n0 1\n")
        np.testing.assert_array_equal(load_mask(path, ImageGrid(2, 2)), [[True, False], [False, True]])
        with pytest.raises(ShapeError):
            load_mask(path, ImageGrid(3, 2))
        path.write_text("1 2\n0 1\n")
        with pytest.raises(ConfigurationError):
            load_mask(path, ImageGrid(2, 2))
