import math

import numpy as np
import pytest

from bevcv.errors import DegenerateBatch, ShapeMismatch, ValidationError
from bevcv.loss import LossConfig
from bevcv.net.heads import head_forward
from bevcv.net.model import init_head_weights
from bevcv.train import Adam, ReduceLROnPlateau, TrainerConfig, _batches, train_heads

FAST = TrainerConfig(lr=1e-2, epochs=12, batch_size=8)


def separable(seed, n=24, pov_c=6, aer_c=10, latent=4):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, latent))
    pov = z @ rng.standard_normal((latent, pov_c)) + 0.01 * rng.standard_normal((n, pov_c))
    aer = z @ rng.standard_normal((latent, aer_c)) + 0.01 * rng.standard_normal((n, aer_c))
    return pov, aer


class TestConfig:
    @pytest.mark.parametrize("kw, field", [({"lr": 0}, "lr"), ({"epochs": 0}, "epochs"),
                                           ({"batch_size": 1}, "batch_size"), ({"beta1": 1.0}, "beta1"),
                                           ({"plateau_factor": 1.0}, "plateau_factor"),
                                           ({"plateau_patience": -1}, "plateau_patience")])
    def test_validation(self, kw, field):
        with pytest.raises(ValidationError) as exc:
            TrainerConfig(**kw)
        assert exc.value.field == field

    def test_defaults(self):
        cfg = TrainerConfig()
        assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.epochs) == (1e-4, 0.9, 0.999, 80)
        assert (cfg.plateau_factor, cfg.plateau_patience) == (0.5, 5)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # bias correction makes the first step exactly lr * sign(g)
        p = {"w": np.array([1.0, -2.0, 0.5])}
        opt = Adam(p, lr=0.1, eps=0.0)
        opt.step(p, {"w": np.array([3.0, -0.2, 1e-3])})
        assert np.allclose(p["w"], [0.9, -1.9, 0.4], atol=1e-12)

    def test_reference_recurrence(self):
        rng = np.random.default_rng(0)
        p = {"w": rng.standard_normal(4)}
        ref = p["w"].copy()
        m = v = np.zeros(4)
        opt = Adam(p, lr=0.01)
        for t in range(1, 6):
            g = rng.standard_normal(4)
            opt.step(p, {"w": g})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(p["w"], ref, rtol=1e-13, atol=1e-15)

    def test_minimises_quadratic(self):
        p = {"w": np.array([5.0, -3.0])}
        opt = Adam(p, lr=0.1)
        for _ in range(500):
            opt.step(p, {"w": 2 * p["w"]})
        assert np.abs(p["w"]).max() < 1e-2


class TestPlateau:
    def test_halves_after_patience(self):
        s = ReduceLROnPlateau(factor=0.5, patience=2)
        lrs = []
        lr = 1.0
        for m in [1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5]:
            lr = s.step(m, lr)
            lrs.append(lr)
        assert lrs == [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.25]

    def test_improvement_resets(self):
        s = ReduceLROnPlateau(patience=1)
        lr = 1.0
        for m in [3.0, 2.0, 1.0, 0.5]:
            lr = s.step(m, lr)
        assert lr == 1.0

    def test_threshold_is_relative(self):
        s = ReduceLROnPlateau(patience=0, threshold=0.1)
        assert s.step(1.0, 1.0) == 1.0
        assert s.step(0.95, 1.0) == 0.5  # 5% better is below the 10% threshold

    def test_min_lr(self):
        s = ReduceLROnPlateau(factor=0.1, patience=0, min_lr=0.05)
        lr = 1.0
        for _ in range(5):
            lr = s.step(1.0, lr)
        assert lr == 0.05


class TestBatches:
    @pytest.mark.parametrize("n, b", [(10, 4), (9, 4), (5, 32), (64, 32), (33, 32)])
    def test_partition(self, n, b):
        out = _batches(n, b, np.random.default_rng(0))
        flat = np.concatenate(out)
        assert sorted(flat.tolist()) == list(range(n))
        assert all(len(x) >= 2 for x in out)
        assert all(len(x) <= b + 1 for x in out)

    def test_batch_clamped_to_dataset(self):
        assert [len(x) for x in _batches(5, 32, np.random.default_rng(0))] == [5]


class TestTrainHeads:
    @pytest.mark.parametrize("variant, floor", [("paper-exact", math.log(7)), ("standard", math.log(8))])
    def test_identical_pairs_sit_at_floor(self, variant, floor):
        # every pair identical: both heads collapse the batch to one embedding,
        # so each per-pair loss is log of the count of denominator terms
        pov = np.tile(np.linspace(-1, 1, 6), (8, 1))
        aer = np.tile(np.linspace(1, -1, 10), (8, 1))
        w = init_head_weights(np.random.default_rng(0), 6, 10)
        w["proj_pov.fc.bias"] = np.linspace(0.1, 0.6, 6)
        w["proj_aer.fc.bias"] = np.linspace(0.6, 0.1, 6)
        res = train_heads(pov, aer, TrainerConfig(lr=1e-2, epochs=50, batch_size=8),
                          LossConfig(temperature=0.1, variant=variant), weights=w, embed_dim=6)
        assert len(res.losses) == 50
        assert all(b <= a + 1e-12 for a, b in zip(res.losses, res.losses[1:]))
        assert abs(res.losses[-1] - floor) < 1e-9

    def test_loss_decreases_on_separable_data(self):
        pov, aer = separable(0)
        res = train_heads(pov, aer, FAST, LossConfig(temperature=0.1), embed_dim=6)
        assert res.losses[-1] < res.losses[0]

    def test_triplet_loss_trains(self):
        pov, aer = separable(1)
        res = train_heads(pov, aer, FAST, LossConfig(kind="triplet", margin=0.5), embed_dim=6)
        assert res.losses[-1] < res.losses[0]

    def test_same_seed_same_trace(self):
        pov, aer = separable(2)
        a = train_heads(pov, aer, FAST, embed_dim=6)
        b = train_heads(pov, aer, FAST, embed_dim=6)
        assert a.losses == b.losses and a.lrs == b.lrs
        assert all(a.weights[k].tobytes() == b.weights[k].tobytes() for k in a.weights)

    def test_seed_changes_trace(self):
        pov, aer = separable(2)
        a = train_heads(pov, aer, FAST, embed_dim=6)
        b = train_heads(pov, aer, TrainerConfig(lr=1e-2, epochs=12, batch_size=8, seed=1), embed_dim=6)
        assert a.losses != b.losses

    def test_trace_rows_and_dtypes(self):
        pov, aer = separable(3)
        res = train_heads(pov, aer, TrainerConfig(epochs=3, batch_size=8), embed_dim=6)
        assert [r[0] for r in res.trace_rows()] == [1, 2, 3]
        assert all(v.dtype == np.float32 for k, v in res.weights.items() if k.startswith("proj_"))

    def test_spatial_features_are_pooled(self):
        pov, aer = separable(4, n=8)
        spatial_p = np.zeros((8, 6, 2, 2))
        spatial_p[:, :, 1, 0] = pov
        spatial_a = np.full((8, 10, 3, 3), -1e3)
        spatial_a[:, :, 2, 2] = aer
        cfg = TrainerConfig(epochs=2, batch_size=4)
        flat = train_heads(np.maximum(pov, 0), aer, cfg, embed_dim=6)
        pooled = train_heads(spatial_p, spatial_a, cfg, embed_dim=6)
        assert flat.losses == pooled.losses

    def test_starts_from_given_weights(self):
        pov, aer = separable(5)
        first = train_heads(pov, aer, FAST, embed_dim=6)
        resumed = train_heads(pov, aer, FAST, weights=first.weights, embed_dim=6)
        assert resumed.losses[0] < first.losses[0]
        emb, _ = head_forward(pov, {k: v.astype(np.float64) for k, v in resumed.weights.items()}, "pov")
        assert np.allclose(np.linalg.norm(emb, axis=1), 1.0)

    def test_zero_pre_embedding_is_finite(self):
        # zero shift and bias on constant inputs give z == 0 before normalisation
        res = train_heads(np.ones((4, 6)), np.ones((4, 10)), TrainerConfig(epochs=2, batch_size=4), embed_dim=6)
        assert all(np.isfinite(v).all() for v in res.weights.values())
        assert all(math.isfinite(x) for x in res.losses)

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            train_heads(np.ones((3, 6)), np.ones((4, 10)))
        with pytest.raises(DegenerateBatch):
            train_heads(np.ones((1, 6)), np.ones((1, 10)))
