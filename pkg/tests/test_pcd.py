"""Tests for persistent-chain energy-model training."""

import numpy as np
import pytest

from stochsec.autodiff import build_network
from stochsec.data import generate_toy_dataset
from stochsec.energy import SgldConfig
from stochsec.nets import conv_energy_spec_32x32, dense_energy_spec
from stochsec.pcd import (
    EbmTrainConfig,
    TrainingDivergedError,
    desk_ebm_config,
    paper_ebm_config,
    train_ebm,
)
from stochsec.rng import substream


def _small_config(**kw):
    base = dict(
        spec=dense_energy_spec(2, (16,)),
        total_batches=40,
        batch_size=25,
        chain=SgldConfig(n_steps=10, step_size=0.01, noise_scale=0.01),
        learning_rates=(1e-3, 5e-4),
        switch_batch=20,
        buffer_capacity=200,
        seed=0,
    )
    base.update(kw)
    return EbmTrainConfig(**base)


@pytest.fixture(scope="module")
def toy_data():
    return generate_toy_dataset("gauss-mix-2d", 200, 20, seed=0).train_inputs


class TestConfig:
    def test_phase_switches_optimizer(self):
        cfg = _small_config()
        assert cfg.phase(0) == ("adam", 1e-3)
        assert cfg.phase(19) == ("adam", 1e-3)
        assert cfg.phase(20) == ("sgd", 5e-4)

    def test_beta_defaults_to_chain_implied_value(self):
        cfg = _small_config()
        assert abs(cfg.resolved_beta - 200.0) < 1e-12

    def test_explicit_beta_wins(self):
        cfg = _small_config(beta=7.0)
        assert cfg.resolved_beta == 7.0

    def test_switch_must_lie_in_range(self):
        with pytest.raises(ValueError, match="switch_batch"):
            _small_config(switch_batch=100)

    def test_negative_jitter_rejected(self):
        with pytest.raises(ValueError, match="data_jitter"):
            _small_config(data_jitter=-0.1)

    def test_full_scale_schedule(self):
        cfg = paper_ebm_config(n_steps=100)
        assert cfg.total_batches == 250_000
        assert cfg.batch_size == 100
        assert cfg.switch_batch == 125_000
        assert cfg.optimizer_modes == ("adam", "sgd")
        assert cfg.learning_rates == (1e-4, 5e-5)
        assert cfg.buffer_capacity == 10_000
        assert cfg.reinit_prob == 0.0
        assert cfg.data_jitter == 0.005
        assert cfg.chain.n_steps == 100
        assert cfg.chain.step_size == 0.01
        assert cfg.chain.noise_scale == 0.01
        assert cfg.spec is not None and cfg.spec == conv_energy_spec_32x32()

    def test_full_scale_budgets_enforced(self):
        with pytest.raises(ValueError, match="50, 75, 100, 150, 200"):
            paper_ebm_config(n_steps=42)

    def test_desk_schedule_keeps_shape(self):
        cfg = desk_ebm_config(dense_energy_spec(2, (16,)), n_steps=20)
        assert cfg.optimizer_modes == ("adam", "sgd")
        assert cfg.switch_batch == cfg.total_batches // 2
        assert cfg.chain.step_size == 0.01 and cfg.chain.noise_scale == 0.01


class TestTraining:
    def test_deterministic_given_seed(self, toy_data):
        r1 = train_ebm(_small_config(), toy_data)
        r2 = train_ebm(_small_config(), toy_data)
        for a, b in zip(r1.model.params, r2.model.params):
            assert np.array_equal(a, b)

    def test_zero_learning_rates_leave_init_untouched(self, toy_data):
        cfg = _small_config(learning_rates=(0.0, 0.0))
        result = train_ebm(cfg, toy_data)
        init = build_network(cfg.spec, substream(cfg.seed, "ebm", "init").integers(2 ** 31))
        for got, want in zip(result.model.params, init):
            assert np.array_equal(got, want)

    def test_energy_gap_shrinks(self, toy_data):
        cfg = _small_config(total_batches=300, batch_size=50,
                            chain=SgldConfig(20, 0.01, 0.01), switch_batch=150,
                            buffer_capacity=500, spec=dense_energy_spec(2, (32,)))
        result = train_ebm(cfg, toy_data)
        gaps = np.array([abs(e.data_energy - e.sample_energy) for e in result.log])
        early = gaps[:30].mean()
        late = gaps[-30:].mean()
        assert late < 0.5 * early

    def test_log_follows_schedule(self, toy_data):
        cfg = _small_config()
        result = train_ebm(cfg, toy_data)
        assert len(result.log) == cfg.total_batches
        assert result.log[0].mode == "adam" and result.log[0].lr == 1e-3
        assert result.log[-1].mode == "sgd" and result.log[-1].lr == 5e-4
        assert result.jitter_scale == cfg.data_jitter

    def test_buffer_persists_and_stays_in_domain(self, toy_data):
        result = train_ebm(_small_config(), toy_data)
        assert result.buffer is not None
        samples = result.buffer.samples
        assert samples.shape == (200, 2)
        assert samples.min() >= 0.0 and samples.max() <= 1.0

    def test_divergence_guard_reports_batch(self, toy_data):
        cfg = _small_config(divergence_bound=1e-12)
        with pytest.raises(TrainingDivergedError, match="batch 0") as info:
            train_ebm(cfg, toy_data)
        assert info.value.batch == 0

    def test_empty_data_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train_ebm(_small_config(), np.zeros((0, 2)))

    def test_out_of_domain_data_rejected(self):
        with pytest.raises(ValueError, match="domain"):
            train_ebm(_small_config(), np.array([[1.5, 0.0]]))

    def test_grad_norms_are_finite_and_logged(self, toy_data):
        result = train_ebm(_small_config(), toy_data)
        norms = np.array([e.grad_norm for e in result.log])
        assert np.isfinite(norms).all() and (norms >= 0).all()
