"""Tests for flowmix.model.condgen"""

import numpy as np
import pytest

from flowmix.exceptions import ContractViolation, DivergedError, FreezeViolation
from flowmix.model import condgen
from flowmix.model.condgen import CondConfig, fit_cond_mlp, generate_for_re, train_cond
from flowmix.model.gmvae import GmvaeModel, model_to_bytes, save_model
from flowmix.model.numkit import Rng


@pytest.fixture
def grid_model() -> GmvaeModel:
    """Untrained model sized for ``tiny_dataset``."""
    return GmvaeModel.create(n_features=48, latent_dim=2, rng=Rng(1), hidden=(8,), grid=(4, 4))


# ── fit_cond_mlp ──────────────────────────────────────────────────────

class TestFitCondMlp:

    def test_single_sample(self):
        mlp = fit_cond_mlp([500.0], [[0.3, -0.7]], CondConfig(steps=2000, lr=5e-3))
        np.testing.assert_allclose(mlp.predict([500.0]), [[0.3, -0.7]], atol=1e-3)
        assert mlp.re_std == 1.0

    def test_linear_targets(self):
        re = np.linspace(100.0, 2000.0, 40)
        scaled = (re - re.mean()) / re.std()
        targets = np.column_stack([0.8 * scaled, -0.5 * scaled + 0.2])
        mlp = fit_cond_mlp(re, targets, CondConfig(steps=1500, lr=5e-3))
        mse = float(np.mean((mlp.predict(re) - targets) ** 2))
        assert mse < targets.var() / 10

    def test_deterministic(self):
        re = [120.0, 480.0, 900.0]
        targets = [[0.0, 1.0], [0.5, 0.2], [1.0, -0.4]]
        a = fit_cond_mlp(re, targets, CondConfig(steps=50, seed=4))
        b = fit_cond_mlp(re, targets, CondConfig(steps=50, seed=4))
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].value, b.params[name].value)

    def test_normalisation_constants(self):
        mlp = fit_cond_mlp([100.0, 300.0], [[0.0], [1.0]], CondConfig(steps=1))
        assert (mlp.re_mean, mlp.re_std, mlp.re_min, mlp.re_max) == (200.0, 100.0, 100.0, 300.0)
        assert mlp.latent_dim == 1

    def test_target_rows_must_match(self):
        with pytest.raises(ContractViolation):
            fit_cond_mlp([1.0, 2.0], [[0.0, 0.0]], CondConfig(steps=1))

    def test_non_finite_loss(self):
        with pytest.raises(DivergedError) as info:
            fit_cond_mlp([1.0, 2.0], [[0.0], [np.inf]], CondConfig(steps=5))
        assert info.value.term == "cond_loss"

    def test_config_validation(self):
        with pytest.raises(ContractViolation):
            CondConfig(steps=0)


# ── train_cond ────────────────────────────────────────────────────────

class TestTrainCond:

    def test_gmvae_stays_frozen(self, grid_model, tiny_dataset):
        before = model_to_bytes(grid_model)
        mlp = train_cond(grid_model, tiny_dataset, CondConfig(steps=30))
        assert model_to_bytes(grid_model) == before
        assert mlp.latent_dim == 2
        assert mlp.re_min == pytest.approx(tiny_dataset.re.min(), rel=1e-6)

    def test_detects_tampering(self, monkeypatch, grid_model, tiny_dataset):
        real = condgen.fit_cond_mlp

        def tampering(re, targets, config, rng=None):
            grid_model.decoder.assign("out_log_var", 1.0)
            return real(re, targets, config, rng)

        monkeypatch.setattr(condgen, "fit_cond_mlp", tampering)
        with pytest.raises(FreezeViolation):
            train_cond(grid_model, tiny_dataset, CondConfig(steps=2))

    def test_feature_mismatch(self, tiny_dataset):
        model = GmvaeModel.create(n_features=12, latent_dim=2, rng=Rng(0), hidden=(4,))
        with pytest.raises(ContractViolation):
            train_cond(model, tiny_dataset, CondConfig(steps=2))


# ── generate_for_re ───────────────────────────────────────────────────

class TestGenerateForRe:

    def test_field_shape(self, grid_model, tiny_dataset, caplog):
        mlp = train_cond(grid_model, tiny_dataset, CondConfig(steps=5))
        field = generate_for_re(mlp, grid_model, float(np.median(tiny_dataset.re)))
        assert field.shape == (3, 4, 4)
        assert np.all(np.isfinite(field))
        assert "outside the training range" not in caplog.text

    def test_out_of_range_warns(self, grid_model, tiny_dataset, caplog):
        mlp = train_cond(grid_model, tiny_dataset, CondConfig(steps=5))
        generate_for_re(mlp, grid_model, 5000.0)
        assert "outside the training range" in caplog.text

    def test_matches_manual_composition(self, grid_model, tiny_dataset):
        from flowmix.model.gmvae import decode

        mlp = train_cond(grid_model, tiny_dataset, CondConfig(steps=5))
        z = mlp.predict([300.0])
        expected = decode(grid_model, z).mean.value.reshape(3, 4, 4)
        np.testing.assert_array_equal(generate_for_re(mlp, grid_model, 300.0), expected)


# ── bundle ────────────────────────────────────────────────────────────

class TestBundle:

    def test_round_trip(self, tmp_path, grid_model, tiny_dataset):
        mlp = train_cond(grid_model, tiny_dataset, CondConfig(steps=5))
        path = tmp_path / "bundle.gmvm"
        condgen.save_bundle(path, grid_model, mlp)
        model, loaded = condgen.load_bundle(path)
        assert model_to_bytes(model) == model_to_bytes(grid_model)
        assert (loaded.re_mean, loaded.re_std, loaded.re_min, loaded.re_max) == (
            mlp.re_mean, mlp.re_std, mlp.re_min, mlp.re_max
        )
        np.testing.assert_array_equal(loaded.predict([250.0, 800.0]), mlp.predict([250.0, 800.0]))

    def test_plain_model_has_no_conditional_network(self, tmp_path, grid_model):
        path = tmp_path / "plain.gmvm"
        save_model(path, grid_model)
        with pytest.raises(ContractViolation):
            condgen.load_bundle(path)
