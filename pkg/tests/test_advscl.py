import math

import numpy as np
import pytest

from padaforge.advscl import (
    AdvsclConfig,
    ContrastiveBatch,
    LabeledExampleSet,
    build_encoder,
    embed_pool,
    load_examples,
    make_views,
    normalize_rows_t,
    sample_contrastive_batch,
    save_examples,
    supcon_loss,
    supcon_loss_t,
    train_encoder,
)
from padaforge.autodiff import Tensor
from padaforge.errors import NoPositives, ShapeMismatch
from padaforge.nnkit import Mlp, grad_check
from padaforge.numerics import make_rng

from oracles import supcon_ref


def unit_rows(rows):
    rows = np.asarray(rows, dtype=float)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def two_blob_examples(rng, n_per=30, dim=6, gap=8.0):
    a = rng.gen.normal(size=(n_per, dim))
    b = rng.gen.normal(size=(n_per, dim))
    b[:, 0] += gap
    ids = ["jab"] * n_per + ["hook"] * n_per
    return LabeledExampleSet(ids, np.vstack([a, b]))


class TestSupconLoss:
    def test_identical_views_uniform_case(self):
        z = unit_rows(np.tile([1.0, 1.0, 0.0], (4, 1)))
        batch = ContrastiveBatch(z, ["a", "a", "b", "b"], temperature=1.0)
        assert supcon_loss(batch) == pytest.approx(4 * math.log(3), abs=1e-12)

    def test_aligned_positives_below_uniform(self):
        # positives colinear, negatives opposed: loss must beat the uniform case
        z = np.array([
            [1.0, 0.0], [1.0, 0.0],
            [-1.0, 0.0], [-1.0, 0.0],
        ])
        batch = ContrastiveBatch(z, ["a", "a", "b", "b"], temperature=1.0)
        assert supcon_loss(batch) < 4 * math.log(3)

    def test_matches_double_loop_reference(self):
        rng = make_rng(1)
        z = unit_rows(rng.gen.normal(size=(8, 5)))
        ids = ["a", "a", "b", "b", "c", "c", "a", "b"]
        batch = ContrastiveBatch(z, ids, temperature=0.1)
        assert supcon_loss(batch) == pytest.approx(
            supcon_ref(z, ids, 0.1), abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_reference_agreement_random_batches(self, seed):
        rng = make_rng(seed + 10)
        n_pairs = int(rng.gen.integers(2, 6))
        z = unit_rows(rng.gen.normal(size=(2 * n_pairs, 4)))
        ids = []
        for k in range(n_pairs):
            ids += [f"atk{k % 3}"] * 2
        tau = float(rng.gen.uniform(0.05, 1.0))
        batch = ContrastiveBatch(z, ids, temperature=tau)
        assert supcon_loss(batch) == pytest.approx(
            supcon_ref(z, ids, tau), abs=1e-10)

    def test_no_positives_raises(self):
        z = unit_rows(make_rng(2).gen.normal(size=(4, 3)))
        with pytest.raises(NoPositives):
            supcon_loss(ContrastiveBatch(z, ["a", "a", "b", "c"], temperature=0.1))

    def test_monotone_in_positive_similarity(self):
        # rotating one positive toward its anchor lowers the loss
        def batch_with_angle(angle):
            z = np.array([
                [1.0, 0.0],
                [math.cos(angle), math.sin(angle)],
                [-1.0, 0.2], [-1.0, -0.2],
            ])
            return ContrastiveBatch(unit_rows(z), ["a", "a", "b", "b"], 0.5)

        losses = [supcon_loss(batch_with_angle(a)) for a in (1.2, 0.6, 0.1)]
        assert losses[0] > losses[1] > losses[2]

    def test_gradient_against_finite_differences(self):
        rng = make_rng(3)
        enc = build_encoder(4, AdvsclConfig(enc_hidden=(8,), enc_out=4,
                                            proj_hidden=(8,), proj_out=6), rng)[0]
        views = make_rng(4).gen.normal(size=(8, 4))
        ids = ["a", "a", "b", "b", "a", "a", "b", "b"]

        def build(lifted):
            z = normalize_rows_t(enc.apply(Tensor(views), lifted))
            return supcon_loss_t(z, ids, 0.1)

        assert grad_check(build, enc.params(), make_rng(5)) < 1e-4


class TestTrainEncoder:
    def test_distant_attacks_become_separable(self):
        rng = make_rng(6)
        data = two_blob_examples(rng)
        cfg = AdvsclConfig(epochs=8, batch_pairs=16, enc_hidden=(32,), enc_out=8,
                           proj_hidden=(16,), proj_out=8)
        enc, proj = train_encoder(data, cfg, make_rng(7))

        # held-out split from the same generator
        holdout = two_blob_examples(make_rng(8))
        emb = enc.forward(holdout.examples)
        ids = np.array(holdout.attack_ids)
        centroids = {a: emb[ids == a].mean(axis=0) for a in ("jab", "hook")}
        correct = 0
        for row, attack in zip(emb, ids):
            nearest = min(centroids, key=lambda a: np.linalg.norm(row - centroids[a]))
            correct += nearest == attack
        assert correct / len(ids) >= 0.95

    def test_zero_epochs_leaves_parameters_at_init(self):
        rng = make_rng(9)
        data = two_blob_examples(rng)
        cfg = AdvsclConfig(epochs=0)
        enc, proj = train_encoder(data, cfg, make_rng(10))
        enc0, proj0 = build_encoder(data.dim, cfg, make_rng(10))
        for a, b in zip(enc.params() + proj.params(), enc0.params() + proj0.params()):
            assert np.array_equal(a, b)

    def test_same_seed_identical_parameters(self):
        data = two_blob_examples(make_rng(11))
        cfg = AdvsclConfig(epochs=2, batch_pairs=8)
        enc1, proj1 = train_encoder(data, cfg, make_rng(12))
        enc2, proj2 = train_encoder(data, cfg, make_rng(12))
        for a, b in zip(enc1.params() + proj1.params(), enc2.params() + proj2.params()):
            assert np.array_equal(a, b)

    def test_heldout_loss_improves(self):
        data = two_blob_examples(make_rng(13))
        cfg = AdvsclConfig(epochs=6, batch_pairs=16)
        enc0, proj0 = build_encoder(data.dim, cfg, make_rng(14))
        before = supcon_loss(sample_contrastive_batch(data, enc0, proj0, cfg, make_rng(15)))
        enc, proj = train_encoder(data, cfg, make_rng(14))
        after = supcon_loss(sample_contrastive_batch(data, enc, proj, cfg, make_rng(15)))
        assert after < before

    def test_needs_two_attacks(self):
        data = LabeledExampleSet(["solo"] * 4, make_rng(16).gen.normal(size=(4, 3)))
        with pytest.raises(NoPositives):
            train_encoder(data, AdvsclConfig(epochs=1), make_rng(17))


class TestEmbedPool:
    def test_identity_encoder_preserves_features(self):
        data = two_blob_examples(make_rng(18), n_per=5, dim=3)
        enc = Mlp([3, 3], [np.eye(3)], [np.zeros(3)], ["identity"])
        pool = embed_pool(enc, data)
        assert pool.attack_ids() == ["jab", "hook"]
        assert np.array_equal(pool.domains[0].features, data.examples[:5])

    def test_counts_preserved(self):
        rng = make_rng(19)
        ids = ["a"] * 4 + ["b"] * 6 + ["c"] * 2
        data = LabeledExampleSet(ids, rng.gen.normal(size=(12, 4)))
        enc = build_encoder(4, AdvsclConfig(), make_rng(20))[0]
        pool = embed_pool(enc, data)
        assert [d.count for d in pool.domains] == [4, 6, 2]
        assert pool.dim == AdvsclConfig().enc_out

    def test_dim_mismatch(self):
        data = two_blob_examples(make_rng(21), dim=6)
        enc = build_encoder(5, AdvsclConfig(), make_rng(22))[0]
        with pytest.raises(ShapeMismatch):
            embed_pool(enc, data)


class TestExamplesIo:
    def test_round_trip(self, tmp_path):
        data = two_blob_examples(make_rng(23), n_per=4, dim=3)
        path = tmp_path / "examples.csv"
        save_examples(data, path)
        loaded = load_examples(path)
        assert loaded.attack_ids == data.attack_ids
        assert np.array_equal(loaded.examples, data.examples)
