"""Unit tests for forward corruption kernels and the Bayes posterior kernel."""

import numpy as np
import pytest

from corruption import CorruptionProcess, NoiseSchedule, masked_matrix, uniform_matrix
from errors import ConfigurationError, ShapeError
from streams import substream
from tokenspace import VocabSpec


@pytest.fixture
def uniform_process():
    return CorruptionProcess("uniform", VocabSpec.ordinal(3), NoiseSchedule("cosine"))


@pytest.fixture
def masked_process():
    return CorruptionProcess("masked", VocabSpec.ordinal(3, masked=True), NoiseSchedule("linear"))


class TestNoiseSchedule:
    """Test alpha(t) for every schedule kind."""

    @pytest.mark.parametrize("kind", ["linear", "cosine", "loglinear"])
    def test_endpoints_and_monotonicity(self, kind):
        sched = NoiseSchedule(kind, floor=1e-3)
        assert sched.alpha(0.0) == 1.0
        assert sched.alpha(1.0) == pytest.approx(1e-3)
        values = [sched.alpha(t) for t in np.linspace(0, 1, 21)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_rejects_bad_settings(self):
        with pytest.raises(ConfigurationError):
            NoiseSchedule("quadratic")
        with pytest.raises(ConfigurationError):
            NoiseSchedule("linear", floor=0.6)
        with pytest.raises(ConfigurationError):
            NoiseSchedule("loglinear", floor=0.0)

    def test_rejects_time_outside_unit_interval(self):
        with pytest.raises(ValueError):
            NoiseSchedule().alpha(1.5)


class TestClosedForms:
    """Test the closed-form masked and uniform kernels."""

    def test_uniform_two_step_composition(self):
        a, b, K = 0.7, 0.4, 5
        composite = uniform_matrix(a, K) @ uniform_matrix(b, K)
        np.testing.assert_allclose(composite, uniform_matrix(a * b, K), atol=1e-12)
        assert composite[0, 0] == pytest.approx(a * b + (1 - a * b) / K, abs=1e-12)

    def test_masked_two_step_composition(self):
        composite = masked_matrix(0.8, 3) @ masked_matrix(0.5, 3)
        np.testing.assert_allclose(composite, masked_matrix(0.4, 3), atol=1e-12)

    def test_matrices_are_row_stochastic(self):
        for q in (masked_matrix(0.3, 4), uniform_matrix(0.3, 4)):
            np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(q >= 0)

    def test_mask_is_absorbing(self):
        q = masked_matrix(0.2, 3)
        assert q[3].tolist() == [0.0, 0.0, 0.0, 1.0]


class TestCorruptionProcess:
    """Test process construction, kernels and sampling."""

    def test_vocab_must_match_kind(self):
        with pytest.raises(ConfigurationError):
            CorruptionProcess("masked", VocabSpec.ordinal(2))
        with pytest.raises(ConfigurationError):
            CorruptionProcess("uniform", VocabSpec.ordinal(2, masked=True))
        with pytest.raises(ConfigurationError):
            CorruptionProcess("generic", VocabSpec.ordinal(2))

    def test_chapman_kolmogorov(self, uniform_process, masked_process, rng):
        for proc in (uniform_process, masked_process):
            for _ in range(20):
                s, t = sorted(rng.uniform(0.01, 1.0, size=2))
                z0 = rng.integers(0, proc.vocab.K, size=4)
                chained = proc.cumulative_matrix(s)[z0] @ proc.conditional_matrix(s, t)
                np.testing.assert_allclose(chained, proc.marginal_kernel(z0, t), atol=1e-12)

    def test_posterior_kernel_rows_sum_to_one(self, uniform_process, masked_process, rng):
        for proc in (uniform_process, masked_process):
            z0 = rng.integers(0, proc.vocab.K, size=6)
            zt = proc.sample_forward(z0, 0.8, rng)
            rows = proc.posterior_kernel(zt, z0, 0.3, 0.8)
            np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)

    def test_posterior_kernel_matches_direct_bayes(self, uniform_process):
        z0, zt, s, t = np.array([0, 2]), np.array([1, 2]), 0.2, 0.6
        proc = uniform_process
        expected = proc.cumulative_matrix(s)[z0] * proc.conditional_matrix(s, t)[:, zt].T
        expected /= expected.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(proc.posterior_kernel(zt, z0, s, t), expected, atol=1e-15)

    def test_masked_posterior_keeps_unmasked_tokens(self, masked_process):
        z0 = np.array([0, 2, 1])
        zt = np.array([0, 3, 3])
        rows = masked_process.posterior_kernel(zt, z0, 0.4, 0.7)
        assert rows[0].tolist() == [1.0, 0.0, 0.0, 0.0]
        assert rows[1, 2] + rows[1, 3] == pytest.approx(1.0)

    def test_posterior_kernel_errors(self, masked_process):
        with pytest.raises(ValueError):
            masked_process.posterior_kernel(np.array([0]), np.array([0]), 0.5, 0.5)
        with pytest.raises(ValueError, match="unreachable"):
            masked_process.posterior_kernel(np.array([1]), np.array([0]), 0.2, 0.5)
        with pytest.raises(ShapeError):
            masked_process.posterior_kernel(np.array([0, 1]), np.array([0]), 0.2, 0.5)

    def test_conditional_requires_ordered_times(self, uniform_process):
        with pytest.raises(ValueError):
            uniform_process.conditional_matrix(0.7, 0.3)

    def test_step_matrices_multiply_to_cumulative(self, uniform_process):
        out = np.eye(3)
        for q in uniform_process.step_matrices(8):
            out = out @ q
        np.testing.assert_allclose(out, uniform_process.cumulative_matrix(1.0), atol=1e-12)

    def test_generic_process_uses_grid(self):
        vocab = VocabSpec.ordinal(2)
        q = np.array([[0.9, 0.1], [0.2, 0.8]])
        proc = CorruptionProcess("generic", vocab, transition_matrices=[q, q, q, q])
        np.testing.assert_allclose(proc.cumulative_matrix(0.5), q @ q, atol=1e-15)
        np.testing.assert_allclose(proc.conditional_matrix(0.25, 1.0), q @ q @ q, atol=1e-15)
        with pytest.raises(ValueError):
            proc.cumulative_matrix(0.3)

    def test_generic_process_validates_matrices(self):
        with pytest.raises(ConfigurationError):
            CorruptionProcess("generic", VocabSpec.ordinal(2), transition_matrices=[np.array([[0.5, 0.4], [0.5, 0.5]])])
        with pytest.raises(ShapeError):
            CorruptionProcess("generic", VocabSpec.ordinal(2), transition_matrices=[np.eye(3)])

    def test_terminal_and_renoise(self, masked_process, uniform_process):
        z = masked_process.terminal_sample(5, substream(0))
        assert z.tolist() == [3] * 5
        u = uniform_process.terminal_sample(100, substream(0))
        assert set(u.tolist()) <= {0, 1, 2}
        z0 = np.array([0, 1, 2])
        np.testing.assert_array_equal(uniform_process.renoise(z0, 0.0, substream(0)), z0)

    def test_sample_forward_frequencies(self, masked_process):
        z0 = np.zeros(20000, dtype=np.int64)
        zt = masked_process.sample_forward(z0, 0.25, substream(9))
        assert np.mean(zt == 3) == pytest.approx(0.25, abs=0.02)
