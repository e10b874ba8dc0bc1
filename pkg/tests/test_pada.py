import numpy as np
import pytest

from padaforge.autodiff import Tensor
from padaforge.divergence import MmdConfig, mmd2
from padaforge.errors import EmptyBatch, ShapeMismatch
from padaforge.nnkit import Mlp, grad_check
from padaforge.numerics import make_rng
from padaforge.pada import (
    MudaBatch,
    MudaConfig,
    MudaModel,
    PadaTrainConfig,
    SourceDomain,
    SourceDomainSet,
    build_muda_model,
    detect,
    detect_scores,
    load_muda,
    muda_losses,
    muda_losses_t,
    save_muda,
    train_pada,
    write_trace_csv,
)

from oracles import cross_entropy_ref, mmd2_ref, softmax_ref
from padaforge.divergence import bandwidth_ladder


FIXED_MMD = MmdConfig(kernel_count=3, bandwidth_base=1.5, bandwidth_step=2.0)


def toy_batch(rng, k=3, n=8, dim=4):
    xs, ys = [], []
    for i in range(k):
        x = rng.gen.normal(size=(n, dim)) + i
        y = np.array([0, 1] * (n // 2))
        xs.append(x)
        ys.append(y)
    proxy = rng.gen.normal(size=(n, dim)) + 0.5
    return MudaBatch(xs, ys, proxy)


def toy_model(rng, k=3, dim=4, lambda_=1.0, gamma=1.0):
    cfg = MudaConfig(lambda_=lambda_, gamma=gamma, mmd=FIXED_MMD,
                     branch_hidden=(6,), branch_out=4, q_hidden=(6,), q_out=4)
    return build_muda_model(dim, k, cfg, rng)


def reference_losses(model, batch):
    """Independent recomputation of all four losses from plain forwards."""
    k = model.k

    def r(x):
        return np.concatenate([model.s_net.forward(x), model.f_net.forward(x)], axis=1)

    proxy_r = r(batch.proxy_x)
    l_cls = 0.0
    l_d = 0.0
    probs = []
    for i in range(k):
        src_q = model.q_nets[i].forward(r(batch.source_x[i]))
        logits = model.c_nets[i].forward(src_q)
        l_cls += cross_entropy_ref(logits, batch.source_y[i])
        proxy_q = model.q_nets[i].forward(proxy_r)
        bws = bandwidth_ladder(src_q, proxy_q, model.mmd_cfg)
        l_d += mmd2_ref(src_q, proxy_q, bws)
        probs.append(softmax_ref(model.c_nets[i].forward(proxy_q)))
    l_cls /= k
    l_d /= k
    l_disc = 0.0
    for j in range(k - 1):
        for i in range(j + 1, k):
            l_disc += float(np.mean(np.abs(probs[i] - probs[j])))
    l_disc *= 2.0 / (k * (k - 1))
    return l_cls, l_d, l_disc, l_cls + model.lambda_ * l_d + model.gamma * l_disc


def planted_source_set(rng, k=3, n=40, dim=6, radius=4.0):
    """Benign at origin, adversarial families in distinct directions."""
    dirs = rng.gen.normal(size=(k, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    sources = []
    for i in range(k):
        benign = rng.gen.normal(size=(n, dim))
        adv = radius * dirs[i] + rng.gen.normal(size=(n, dim))
        sources.append(SourceDomain(f"atk{i}", benign, adv))
    proxy_parts = [rng.gen.normal(size=(n // 2, dim))]
    for i in range(k):
        proxy_parts.append(radius * dirs[i] + rng.gen.normal(size=(n // 2, dim)))
    proxy = np.vstack(proxy_parts)
    # an unseen target: rotated mixture of the family directions
    target_adv = []
    for i in range(k):
        shifted = radius * dirs[i] + 0.8 * rng.gen.normal(size=(n, dim))
        target_adv.append(shifted)
    target_adv = np.vstack(target_adv)
    target_benign = rng.gen.normal(size=(k * n, dim))
    return SourceDomainSet(sources, proxy), target_benign, target_adv


class TestMudaLosses:
    def test_identical_nets_and_batches_vanish(self):
        rng = make_rng(0)
        model = toy_model(rng, k=2)
        model.q_nets[1] = model.q_nets[0].copy()
        model.c_nets[1] = model.c_nets[0].copy()
        x = make_rng(1).gen.normal(size=(8, 4))
        y = np.array([0, 1] * 4)
        batch = MudaBatch([x.copy(), x.copy()], [y.copy(), y.copy()], x.copy())
        l_cls, l_d, l_disc, l_total = muda_losses(model, batch)
        assert l_d <= 1e-9
        assert l_disc == 0.0

    def test_zero_tradeoffs_reduce_to_classification(self):
        rng = make_rng(2)
        model = toy_model(rng, lambda_=0.0, gamma=0.0)
        batch = toy_batch(make_rng(3))
        l_cls, l_d, l_disc, l_total = muda_losses(model, batch)
        assert l_total == l_cls

    def test_matches_reference_computation(self):
        rng = make_rng(4)
        model = toy_model(rng)
        batch = toy_batch(make_rng(5))
        ours = muda_losses(model, batch)
        ref = reference_losses(model, batch)
        for a, b in zip(ours, ref):
            assert a == pytest.approx(b, abs=1e-10)

    def test_gradients_pass_finite_differences(self):
        rng = make_rng(6)
        model = toy_model(rng)
        batch = toy_batch(make_rng(7), n=6)

        def build_total(lifted):
            return muda_losses_t(model, lifted, batch)[3]

        assert grad_check(build_total, model.params(), make_rng(8)) < 1e-4

    def test_each_term_gradient(self):
        # each term is checked against the parameters it actually depends on:
        # zero-influence coordinates only compare rounding noise
        rng = make_rng(9)
        model = toy_model(rng)
        batch = toy_batch(make_rng(10), n=6)
        shared = model.s_net.params() + model.f_net.params()
        q_params = [p for q in model.q_nets for p in q.params()]
        c_params = [p for c in model.c_nets for p in c.params()]
        dependents = {
            0: shared + q_params + c_params,   # classification
            1: shared + q_params,              # alignment (no classifiers)
            2: shared + q_params + c_params,   # discrepancy
        }
        n_all = len(model.params())
        for idx, params in dependents.items():
            mask = [any(p is q for q in params) for p in model.params()]

            def build(lifted, idx=idx, mask=mask):
                full = []
                it = iter(lifted)
                for j, keep in enumerate(mask):
                    full.append(next(it) if keep else Tensor(model.params()[j]))
                assert len(full) == n_all
                return muda_losses_t(model, full, batch)[idx]

            assert grad_check(build, params, make_rng(11 + idx),
                              min_coords=50) < 1e-4

    def test_disc_symmetric_under_source_swap(self):
        rng = make_rng(14)
        model = toy_model(rng, k=3)
        batch = toy_batch(make_rng(15))
        base = muda_losses(model, batch)[2]
        swapped_model = MudaModel(
            model.s_net, model.f_net,
            [model.q_nets[2], model.q_nets[0], model.q_nets[1]],
            [model.c_nets[2], model.c_nets[0], model.c_nets[1]],
            model.lambda_, model.gamma, model.mmd_cfg,
        )
        swapped_batch = MudaBatch(
            [batch.source_x[2], batch.source_x[0], batch.source_x[1]],
            [batch.source_y[2], batch.source_y[0], batch.source_y[1]],
            batch.proxy_x,
        )
        assert abs(muda_losses(swapped_model, swapped_batch)[2] - base) < 1e-12

    def test_alignment_invariant_to_batch_permutation(self):
        rng = make_rng(16)
        model = toy_model(rng)
        batch = toy_batch(make_rng(17))
        base = muda_losses(model, batch)[1]
        perm = make_rng(18).gen.permutation(batch.source_x[0].shape[0])
        shuffled = MudaBatch(
            [batch.source_x[0][perm]] + batch.source_x[1:],
            [batch.source_y[0][perm]] + batch.source_y[1:],
            batch.proxy_x,
        )
        assert abs(muda_losses(model, shuffled)[1] - base) < 1e-12

    def test_total_linear_in_tradeoffs(self):
        rng = make_rng(19)
        batch = toy_batch(make_rng(20))
        values = {}
        for lam, gam in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (2.0, 3.0)]:
            model = toy_model(make_rng(19), lambda_=lam, gamma=gam)
            l_cls, l_d, l_disc, l_total = muda_losses(model, batch)
            values[(lam, gam)] = (l_cls, l_d, l_disc, l_total)
        l_cls, l_d, l_disc, _ = values[(2.0, 3.0)]
        assert values[(2.0, 3.0)][3] == pytest.approx(l_cls + 2 * l_d + 3 * l_disc, abs=1e-12)
        assert values[(0.0, 0.0)][3] == pytest.approx(l_cls, abs=1e-12)

    def test_single_class_batch_rejected(self):
        with pytest.raises(EmptyBatch):
            MudaBatch([np.zeros((4, 2))], [np.zeros(4, dtype=int)], np.zeros((4, 2)))


class TestTrainPada:
    def test_planted_sources_reach_high_target_accuracy(self):
        data, target_benign, target_adv = planted_source_set(make_rng(21))
        model = build_muda_model(6, 3, MudaConfig(), make_rng(22))
        cfg = PadaTrainConfig(epochs=60, batch=32, lr=0.05)
        result = train_pada(data, model, cfg, make_rng(23))
        scores_adv = detect_scores(result.model, target_adv)
        scores_ben = detect_scores(result.model, target_benign)
        accuracy = 0.5 * (np.mean(scores_adv > 0.5) + np.mean(scores_ben <= 0.5))
        assert accuracy >= 0.90

    def test_heldout_total_improves(self):
        data, _, _ = planted_source_set(make_rng(24))
        model = build_muda_model(6, 3, MudaConfig(), make_rng(25))
        cfg = PadaTrainConfig(epochs=15, batch=32)
        result = train_pada(data, model, cfg, make_rng(26))
        assert result.heldout_final < result.heldout_initial

    def test_trace_recorded_per_epoch(self):
        data, _, _ = planted_source_set(make_rng(27), n=12)
        model = build_muda_model(6, 3, MudaConfig(), make_rng(28))
        cfg = PadaTrainConfig(epochs=5, batch=8)
        result = train_pada(data, model, cfg, make_rng(29))
        assert len(result.trace) == 5
        assert [row[0] for row in result.trace] == list(range(5))

    def test_same_seed_identical_parameters(self):
        data, _, _ = planted_source_set(make_rng(30), n=16)
        cfg = PadaTrainConfig(epochs=3, batch=8)
        r1 = train_pada(data, build_muda_model(6, 3, MudaConfig(), make_rng(31)),
                        cfg, make_rng(32))
        r2 = train_pada(data, build_muda_model(6, 3, MudaConfig(), make_rng(31)),
                        cfg, make_rng(32))
        for a, b in zip(r1.model.params(), r2.model.params()):
            assert np.array_equal(a, b)

    def test_trace_csv(self, tmp_path):
        trace = [(0, 1.0, 0.5, 0.25, 1.75), (1, 0.9, 0.4, 0.2, 1.5)]
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "epoch,l_cls,l_d,l_disc,l_total"
        assert len(lines) == 3


class TestDetect:
    def make_forced_model(self, logit_pairs, dim=3):
        """K classifiers with constant logits via zero weights and set biases."""
        k = len(logit_pairs)
        s = Mlp([dim, 2], [np.zeros((dim, 2))], [np.zeros(2)], ["identity"])
        f = Mlp([dim, 2], [np.zeros((dim, 2))], [np.zeros(2)], ["identity"])
        q_nets = [Mlp([4, 2], [np.zeros((4, 2))], [np.zeros(2)], ["identity"])
                  for _ in range(k)]
        c_nets = [Mlp([2, 2], [np.zeros((2, 2))], [np.array(b, dtype=float)], ["identity"])
                  for b in logit_pairs]
        return MudaModel(s, f, q_nets, c_nets, 1.0, 1.0, FIXED_MMD)

    def test_unanimous_benign(self):
        model = self.make_forced_model([[50.0, 0.0], [50.0, 0.0]])
        results = detect(model, np.zeros((3, 3)))
        for label, score in results:
            assert label == "benign"
            assert score == pytest.approx(0.0, abs=1e-12)

    def test_split_vote_resolves_benign(self):
        model = self.make_forced_model([[50.0, 0.0], [0.0, 50.0]])
        results = detect(model, np.zeros((2, 3)))
        for label, score in results:
            assert score == pytest.approx(0.5, abs=1e-12)
            assert label == "benign"

    def test_matches_hand_averaged_probabilities(self):
        rng = make_rng(33)
        model = toy_model(rng, k=2)
        x = make_rng(34).gen.normal(size=(10, 4))
        r = np.concatenate([model.s_net.forward(x), model.f_net.forward(x)], axis=1)
        expected = np.zeros(10)
        for q, c in zip(model.q_nets, model.c_nets):
            expected += softmax_ref(c.forward(q.forward(r)))[:, 1]
        expected /= 2
        assert np.allclose(detect_scores(model, x), expected, atol=1e-12)

    def test_shape_mismatch(self):
        model = toy_model(make_rng(35))
        with pytest.raises(ShapeMismatch):
            detect(model, np.zeros(4))


class TestPersistence:
    def test_muda_round_trip(self, tmp_path):
        rng = make_rng(36)
        model = toy_model(rng, k=3, lambda_=0.5, gamma=2.0)
        path = tmp_path / "model.padm"
        save_muda(model, path)
        loaded = load_muda(path)
        assert loaded.k == 3
        assert loaded.lambda_ == 0.5
        assert loaded.gamma == 2.0
        assert loaded.mmd_cfg == FIXED_MMD
        for a, b in zip(model.params(), loaded.params()):
            assert np.array_equal(a, b)
