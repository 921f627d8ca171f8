"""Unit tests for the empirical-Bayes and external-logits denoisers."""

import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from corruption import CorruptionProcess, NoiseSchedule
from errors import ConfigurationError, DegenerateWeightsError, ShapeError, UnsupportedModeError
from logits_io import write_records
from prior import WEIGHT_CACHE_SIZE, DenoiserOutput, EmpiricalBayesDenoiser, ExternalLogitsDenoiser, sample_clean
from streams import substream
from tokenspace import VocabSpec

DATA = np.array(
    [
        [0, 0, 1, 1],
        [1, 0, 1, 0],
        [1, 1, 1, 0],
        [0, 1, 0, 1],
        [0, 0, 0, 0],
    ]
)


@pytest.fixture
def process():
    return CorruptionProcess("uniform", VocabSpec.ordinal(2), NoiseSchedule("linear"))


def brute_force_posterior(process, data, zt, t):
    """p(z0 | zt) by summing the forward kernel over the dataset."""
    qbar = process.cumulative_matrix(t)
    weights = np.array([np.prod(qbar[x, zt]) for x in data]) / len(data)
    out = {}
    for x, w in zip(data, weights):
        out[tuple(x)] = out.get(tuple(x), 0.0) + w
    total = sum(out.values())
    return {k: v / total for k, v in out.items()}


class TestDenoiserOutput:
    """Test the logits container."""

    def test_probabilities_and_entropy(self):
        out = DenoiserOutput(np.log(np.array([[0.5, 0.5], [1.0, 1e-300]])))
        np.testing.assert_allclose(out.probs.sum(axis=1), 1.0)
        assert out.entropy()[0] == pytest.approx(np.log(2))
        assert out.entropy()[1] == pytest.approx(0.0, abs=1e-12)

    def test_negative_infinity_is_allowed(self):
        out = DenoiserOutput(np.array([[0.0, -np.inf]]))
        assert out.probs.tolist() == [[1.0, 0.0]]
        assert out.entropy()[0] == 0.0

    def test_rejects_invalid_logits(self):
        with pytest.raises(ShapeError):
            DenoiserOutput(np.zeros(3))
        with pytest.raises(ValueError):
            DenoiserOutput(np.array([[np.nan, 0.0]]))
        with pytest.raises(ValueError):
            DenoiserOutput(np.array([[np.inf, 0.0]]))

    def test_sample_clean(self):
        out = DenoiserOutput(np.log(np.array([[0.1, 0.9], [0.8, 0.2]])))
        assert sample_clean(out, substream(0)).tolist() == [1, 0]
        assert sample_clean(out, substream(0), "ancestral").shape == (2,)
        with pytest.raises(ValueError):
            sample_clean(out, substream(0), "greedy")


class TestEmpiricalBayesDenoiser:
    """Test the exact denoiser over a finite dataset."""

    def test_exact_joint_matches_enumerated_bayes_posterior(self, process):
        prior = EmpiricalBayesDenoiser(DATA, process, smoothing=0.0)
        zt, t = np.array([1, 0, 1, 1]), 0.6
        posterior = brute_force_posterior(process, DATA, zt, t)
        for z0 in itertools.product([0, 1], repeat=4):
            got = prior.joint_log_prob(np.array(z0), zt, t, mode="exact")
            expected = np.log(posterior.get(z0, 0.0)) if z0 in posterior else -np.inf
            if np.isfinite(expected):
                assert got == pytest.approx(expected, abs=1e-10)
            else:
                assert got == -np.inf

    def test_exact_joint_sums_to_one_with_smoothing(self, process):
        prior = EmpiricalBayesDenoiser(DATA, process, smoothing=1e-3)
        zt, t = np.array([0, 0, 1, 0]), 0.4
        logs = [prior.joint_log_prob(np.array(z), zt, t, mode="exact") for z in itertools.product([0, 1], repeat=4)]
        assert logsumexp(logs) == pytest.approx(0.0, abs=1e-12)
        assert all(np.isfinite(logs))

    def test_factorized_joint_is_sum_of_marginal_logs(self, process):
        prior = EmpiricalBayesDenoiser(DATA, process)
        zt, t, z0 = np.array([1, 1, 0, 0]), 0.5, np.array([0, 1, 1, 0])
        marg = prior.marginals(zt, t)
        np.testing.assert_allclose(marg.sum(axis=1), 1.0)
        expected = np.log(marg[np.arange(4), z0]).sum()
        assert prior.joint_log_prob(z0, zt, t) == pytest.approx(expected)

    def test_item_weights_are_cached(self, process):
        prior = EmpiricalBayesDenoiser(DATA, process)
        zt = np.array([1, 1, 0, 0])
        assert prior.item_weights(zt, 0.5) is prior.item_weights(zt, 0.5)
        assert not prior.item_weights(zt, 0.5).flags.writeable

    def test_weight_cache_is_bounded(self, process):
        prior = EmpiricalBayesDenoiser(DATA, process)
        zt = np.array([1, 1, 0, 0])
        for t in np.linspace(0.01, 0.99, WEIGHT_CACHE_SIZE + 50):
            prior.item_weights(zt, t)
        assert prior._weights.cache_info().currsize == WEIGHT_CACHE_SIZE

    def test_dataset_order_does_not_matter(self, process, rng):
        perm = rng.permutation(len(DATA))
        a = EmpiricalBayesDenoiser(DATA, process, smoothing=1e-3)
        b = EmpiricalBayesDenoiser(DATA[perm], process, smoothing=1e-3)
        for zt, t in [(np.array([1, 1, 0, 0]), 0.3), (np.array([0, 1, 1, 1]), 0.8)]:
            np.testing.assert_allclose(a.denoise(zt, t).probs, b.denoise(zt, t).probs, atol=1e-14)
            np.testing.assert_allclose(b.item_weights(zt, t), a.item_weights(zt, t)[perm], atol=1e-14)
            for z0 in DATA:
                for mode in ("factorized", "exact"):
                    assert a.joint_log_prob(z0, zt, t, mode) == pytest.approx(b.joint_log_prob(z0, zt, t, mode), abs=1e-12)

    def test_clean_time_recovers_dataset_item(self, process):
        prior = EmpiricalBayesDenoiser(DATA, process, smoothing=0.0)
        w = prior.item_weights(DATA[2], 0.0)
        assert w.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]

    def test_degenerate_weights(self):
        proc = CorruptionProcess("masked", VocabSpec.ordinal(2, masked=True))
        prior = EmpiricalBayesDenoiser(np.array([[0, 0]]), proc)
        with pytest.raises(DegenerateWeightsError):
            prior.item_weights(np.array([1, 1]), 0.0)

    def test_validation(self, process):
        with pytest.raises(ConfigurationError):
            EmpiricalBayesDenoiser(np.zeros((0, 4), dtype=int), process)
        with pytest.raises(ConfigurationError):
            EmpiricalBayesDenoiser(DATA, process, prior_weights=np.ones(5))
        with pytest.raises(ConfigurationError):
            EmpiricalBayesDenoiser(DATA, process, smoothing=2.0)
        with pytest.raises(ShapeError):
            EmpiricalBayesDenoiser(DATA, process).item_weights(np.array([0, 1]), 0.5)

    def test_unknown_mode(self, process):
        prior = EmpiricalBayesDenoiser(DATA, process)
        with pytest.raises(ValueError):
            prior.joint_log_prob(DATA[0], DATA[0], 0.5, mode="joint")


class TestExternalLogitsDenoiser:
    """Test the table-driven denoiser."""

    def test_step_index_maps_time_to_row(self):
        den = ExternalLogitsDenoiser(np.zeros((4, 3, 2)), VocabSpec.ordinal(2))
        assert den.steps == 4
        assert den.step_index(1.0) == 3
        assert den.step_index(0.25) == 0
        assert den.step_index(0.0) == 0

    def test_from_file_and_denoise(self, tmp_path):
        table = np.random.default_rng(0).normal(size=(2, 3, 2)).astype(np.float32)
        path = write_records(tmp_path / "prior.dlps", [table])
        den = ExternalLogitsDenoiser.from_file(path, VocabSpec.ordinal(2))
        out = den.denoise(np.array([0, 1, 1]), 1.0)
        np.testing.assert_allclose(out.logits, table[1])
        assert den.joint_log_prob(np.array([0, 0, 1]), np.array([0, 1, 1]), 1.0) == pytest.approx(
            out.factorized_log_prob(np.array([0, 0, 1]))
        )

    def test_exact_mode_unsupported(self):
        den = ExternalLogitsDenoiser(np.zeros((1, 2, 2)), VocabSpec.ordinal(2))
        with pytest.raises(UnsupportedModeError):
            den.joint_log_prob(np.array([0, 1]), np.array([0, 1]), 1.0, mode="exact")

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            ExternalLogitsDenoiser(np.zeros((1, 2, 3)), VocabSpec.ordinal(2))
        den = ExternalLogitsDenoiser(np.zeros((1, 2, 2)), VocabSpec.ordinal(2))
        with pytest.raises(ShapeError):
            den.denoise(np.array([0, 1, 1]), 1.0)
