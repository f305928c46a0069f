"""Tests for Langevin purification and expectation-over-transformation voting."""

import numpy as np
import pytest

from stochsec.autodiff import build_network
from stochsec.classifier import ClassifierModel
from stochsec.defense import (
    DefenseConfig,
    DefenseTrialError,
    average_logits,
    eot_defend,
    paper_defense_config,
    purify,
)
from stochsec.energy import AnalyticEnergy, SgldConfig
from stochsec.nets import dense_classifier_spec


def _toy_model(seed=0, dim=2, n_classes=2):
    spec = dense_classifier_spec(dim, n_classes, (8,))
    return ClassifierModel(spec, build_network(spec, seed), n_classes)


def _quadratic_ebm(dim=2, center=0.5, stiffness=1.0):
    return AnalyticEnergy(
        energy_fn=lambda x: 0.5 * stiffness * np.sum((x - center) ** 2, axis=1),
        grad_fn=lambda x: stiffness * (x - center),
        dim=dim,
    )


class TestDefenseConfig:
    def test_trial_count_validated(self):
        with pytest.raises(ValueError, match="at least one"):
            DefenseConfig(chain=SgldConfig(5, 0.01, 0.01), n_trials=0)

    def test_langevin_steps_exposes_chain_length(self):
        cfg = DefenseConfig(chain=SgldConfig(7, 0.01, 0.01), n_trials=2)
        assert cfg.langevin_steps == 7

    def test_full_scale_settings(self):
        cfg = paper_defense_config()
        assert cfg.n_trials == 150
        assert cfg.chain.n_steps == 1500
        assert cfg.chain.step_size == 0.01
        assert cfg.chain.noise_scale == 0.01


class TestPurify:
    def test_zero_steps_is_identity(self):
        ebm = _quadratic_ebm()
        x = np.random.default_rng(0).uniform(size=(4, 2))
        out = purify(ebm, x, SgldConfig(0, 0.01, 0.01), np.random.default_rng(1))
        assert np.array_equal(out, x)

    def test_chain_drifts_toward_low_energy(self):
        ebm = _quadratic_ebm(stiffness=4.0)
        x = np.full((32, 2), 0.9)
        out = purify(ebm, x, SgldConfig(200, 0.01, 0.01), np.random.default_rng(2))
        assert np.abs(out - 0.5).mean() < np.abs(x - 0.5).mean()


class TestEotDefend:
    def test_averaging_is_order_invariant(self):
        rng = np.random.default_rng(3)
        per_trial = [rng.normal(size=(4, 3)) for _ in range(9)]
        base = average_logits(per_trial)
        permuted = average_logits([per_trial[i] for i in rng.permutation(9)])
        assert np.array_equal(base, permuted)

    def test_deterministic_given_rng_seed(self):
        model = _toy_model()
        ebm = _quadratic_ebm()
        cfg = DefenseConfig(chain=SgldConfig(10, 0.01, 0.01), n_trials=4)
        x = np.random.default_rng(4).uniform(size=(3, 2))
        a_logits, a_labels = eot_defend(ebm, model, x, cfg, np.random.default_rng(5))
        b_logits, b_labels = eot_defend(ebm, model, x, cfg, np.random.default_rng(5))
        assert np.array_equal(a_logits, b_logits)
        assert np.array_equal(a_labels, b_labels)

    def test_labels_are_argmax_of_average(self):
        model = _toy_model(seed=2)
        ebm = _quadratic_ebm()
        cfg = DefenseConfig(chain=SgldConfig(5, 0.01, 0.01), n_trials=3)
        x = np.random.default_rng(6).uniform(size=(5, 2))
        logits, labels = eot_defend(ebm, model, x, cfg, np.random.default_rng(7))
        assert np.array_equal(labels, np.argmax(logits, axis=1))

    def test_vote_variance_shrinks_like_one_over_trials(self):
        # The averaged logit is a mean of i.i.d. trial logits, so its
        # variance across independent defenses must scale as 1/m.  A 4x
        # trial increase should cut variance by 4, checked to a factor 2.
        model = _toy_model(seed=8)
        ebm = _quadratic_ebm(stiffness=2.0)
        x = np.array([[0.6, 0.4]])
        repeats = 48
        variances = {}
        for m in (4, 16, 64):
            cfg = DefenseConfig(chain=SgldConfig(8, 0.05, 0.05), n_trials=m)
            master = np.random.default_rng(100 + m)
            first_logit = [
                eot_defend(ebm, model, x, cfg, child)[0][0, 0]
                for child in master.spawn(repeats)
            ]
            variances[m] = np.var(first_logit)
        ratio_a = variances[4] / variances[16]
        ratio_b = variances[16] / variances[64]
        assert 2.0 < ratio_a < 8.0
        assert 2.0 < ratio_b < 8.0

    def test_failed_trial_reports_index(self):
        def boom(x):
            raise FloatingPointError("synthetic gradient failure")

        broken = AnalyticEnergy(
            energy_fn=lambda x: np.zeros(x.shape[0]), grad_fn=boom, dim=2)
        model = _toy_model()
        cfg = DefenseConfig(chain=SgldConfig(3, 0.01, 0.01), n_trials=2)
        with pytest.raises(DefenseTrialError, match="trial 0") as info:
            eot_defend(broken, model, np.zeros((1, 2)), cfg, np.random.default_rng(0))
        assert info.value.trial == 0
