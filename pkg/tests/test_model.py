import numpy as np
import pytest

import sehgnn.model as model_mod
from sehgnn.model import (
    ModelConfig,
    ModelParams,
    OptimizerState,
    adam_step,
    forward,
    fuse_weighted_sum,
    grad_check,
    init_params,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
)

SPECS = [("x:P", 5), ("x:PA", 6), ("y:PAP", 4)]


def tiny_setup(seed=0, fusion="transformer", n_nodes=9, num_classes=4, dropout=0.0):
    rng = np.random.default_rng(seed + 1000)
    cfg = ModelConfig(hidden_dim=8, num_classes=num_classes, fusion=fusion, dropout=dropout)
    params = init_params(SPECS, cfg, seed)
    mats = [rng.standard_normal((n_nodes, d)) for _, d in SPECS]
    labels = rng.integers(0, num_classes, size=n_nodes)
    rows = np.arange(0, n_nodes, 2)
    return params, mats, rows, labels


def reference_forward(params, mats, rows):
    """Straight-line per-node re-implementation (oracle; no shared code with
    the vectorized forward)."""
    t = params.tensors
    cfg = params.config
    n_paths = len(params.path_ids)

    def project(pid, x):
        z = t[f"proj:{pid}:w1"].T @ x + t[f"proj:{pid}:b1"]
        mu = z.mean()
        var = ((z - mu) ** 2).mean()
        xhat = (z - mu) / np.sqrt(var + 1e-5)
        n = t[f"proj:{pid}:ln_g"] * xhat + t[f"proj:{pid}:ln_b"]
        a = np.where(n > 0, n, 0.0)
        return t[f"proj:{pid}:w2"].T @ a + t[f"proj:{pid}:b2"]

    projected = [
        [project(pid, mats[k][r]) for k, pid in enumerate(params.path_ids)] for r in rows
    ]

    if cfg.fusion == "weighted-sum":
        # metapath scores are averaged over the whole batch
        scores = np.zeros(n_paths)
        for hs in projected:
            for i, h in enumerate(hs):
                scores[i] += float(t["fuse:qa"] @ np.tanh(t["fuse:wa"].T @ h + t["fuse:ba"]))
        scores /= len(rows)
        e = np.exp(scores - scores.max())
        weights = e / e.sum()

    out = []
    for hs in projected:
        if cfg.fusion == "transformer":
            qs = [t["fuse:wq"].T @ h for h in hs]
            ks = [t["fuse:wk"].T @ h for h in hs]
            vs = [t["fuse:wv"].T @ h for h in hs]
            fused = []
            for i in range(n_paths):
                logits = np.array([qs[i] @ ks[j] for j in range(n_paths)])
                if cfg.attn_scale:
                    logits = logits / np.sqrt(cfg.attn_dim)
                e = np.exp(logits - logits.max())
                alpha = e / e.sum()
                mix = sum(alpha[j] * vs[j] for j in range(n_paths))
                fused.append(float(t["fuse:beta"]) * mix + hs[i])
            head_in = np.concatenate(fused)
        else:
            head_in = sum(weights[i] * hs[i] for i in range(n_paths))
        z = t["head:w1"].T @ head_in + t["head:b1"]
        mu = z.mean()
        var = ((z - mu) ** 2).mean()
        xhat = (z - mu) / np.sqrt(var + 1e-5)
        n = t["head:ln_g"] * xhat + t["head:ln_b"]
        a = np.where(n > 0, n, 0.0)
        logits = t["head:w2"].T @ a + t["head:b2"]
        e = np.exp(logits - logits.max())
        out.append(e / e.sum())
    return np.stack(out)


class TestInit:
    def test_same_seed_identical(self):
        cfg = ModelConfig(hidden_dim=8, num_classes=3)
        a = init_params(SPECS, cfg, 5)
        b = init_params(SPECS, cfg, 5)
        for k in a.tensors:
            np.testing.assert_array_equal(a.tensors[k], b.tensors[k])

    def test_different_seeds_differ(self):
        cfg = ModelConfig(hidden_dim=8, num_classes=3)
        a = init_params(SPECS, cfg, 1)
        b = init_params(SPECS, cfg, 2)
        assert any(not np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)

    def test_attention_dim_is_quarter(self):
        assert ModelConfig(hidden_dim=64, num_classes=3).attn_dim == 16

    def test_hidden_dim_divisibility(self):
        with pytest.raises(ValueError):
            ModelConfig(hidden_dim=10, num_classes=3)


class TestForward:
    def test_matches_reference_both_modes(self):
        for fusion in ("transformer", "weighted-sum"):
            for seed in (0, 1):
                params, mats, rows, _ = tiny_setup(seed, fusion=fusion, n_nodes=4)
                probs, _ = forward(params, mats, np.arange(4))
                expected = reference_forward(params, mats, np.arange(4))
                np.testing.assert_allclose(probs, expected, atol=1e-12, rtol=0)

    def test_matches_reference_with_attn_scale(self):
        params, mats, rows, _ = tiny_setup(3, n_nodes=4)
        params = ModelParams(
            ModelConfig(hidden_dim=8, num_classes=4, dropout=0.0, attn_scale=True),
            params.path_ids, params.in_dims, params.tensors,
        )
        probs, _ = forward(params, mats, np.arange(4))
        np.testing.assert_allclose(probs, reference_forward(params, mats, np.arange(4)),
                                   atol=1e-12, rtol=0)

    def test_single_metapath_alpha_is_one(self):
        rng = np.random.default_rng(0)
        cfg = ModelConfig(hidden_dim=8, num_classes=3, dropout=0.0)
        params = init_params([("x:P", 5)], cfg, 0)
        mats = [rng.standard_normal((6, 5))]
        _, cache = forward(params, mats, np.arange(6))
        f = cache["fuse"]
        np.testing.assert_array_equal(f["alpha"], np.ones_like(f["alpha"]))
        expected = params.tensors["fuse:beta"] * f["v"] + f["h"]
        np.testing.assert_array_equal(params.tensors["fuse:beta"] * f["attn"] + f["h"], expected)

    def test_identical_metapaths_share_attention(self):
        rng = np.random.default_rng(0)
        cfg = ModelConfig(hidden_dim=8, num_classes=3, dropout=0.0)
        params = init_params([("x:A", 5), ("x:B", 5)], cfg, 0)
        for suffix in ("w1", "b1", "ln_g", "ln_b", "w2", "b2"):
            params.tensors[f"proj:x:B:{suffix}"] = params.tensors[f"proj:x:A:{suffix}"].copy()
        x = rng.standard_normal((5, 5))
        _, cache = forward(params, [x, x], np.arange(5))
        np.testing.assert_array_equal(cache["fuse"]["alpha"],
                                      np.full_like(cache["fuse"]["alpha"], 0.5))

    def test_attention_rows_sum_to_one(self):
        for seed in range(5):
            params, mats, rows, _ = tiny_setup(seed)
            _, cache = forward(params, mats, rows)
            alpha = cache["fuse"]["alpha"]
            np.testing.assert_allclose(alpha.sum(axis=2), 1.0, atol=1e-6)
            assert np.all(alpha >= 0) and np.all(alpha <= 1)

    def test_mismatched_matrices_rejected(self):
        params, mats, rows, _ = tiny_setup(0)
        with pytest.raises(ValueError):
            forward(params, mats[:2], rows)
        with pytest.raises(ValueError):
            forward(params, [mats[0], mats[2], mats[1]], rows)

    def test_forward_deterministic(self):
        params, mats, rows, _ = tiny_setup(0, dropout=0.5)
        p1, _ = forward(params, mats, rows, train_mode=True, rng=np.random.default_rng(7))
        p2, _ = forward(params, mats, rows, train_mode=True, rng=np.random.default_rng(7))
        np.testing.assert_array_equal(p1, p2)

    def test_dropout_needs_rng(self):
        params, mats, rows, _ = tiny_setup(0, dropout=0.5)
        with pytest.raises(ValueError, match="rng"):
            forward(params, mats, rows, train_mode=True)

    def test_beta_zero_decouples_attention(self):
        params, mats, rows, labels = tiny_setup(0)
        params.tensors["fuse:beta"] = np.asarray(0.0)
        _, cache = forward(params, mats, rows)
        k, b = len(params.path_ids), rows.size
        fused = cache["fuse"]["attn"] * 0.0 + cache["fuse"]["h"]
        np.testing.assert_array_equal(
            params.tensors["fuse:beta"] * cache["fuse"]["attn"] + cache["fuse"]["h"],
            cache["fuse"]["h"],
        )
        _, grads = loss_and_grad(params, mats, rows, labels, train_mode=False)
        for name in ("fuse:wq", "fuse:wk", "fuse:wv"):
            assert np.all(grads[name] == 0.0)


class TestLoss:
    def test_softmax_ce_identity(self):
        """Logit gradient equals (probabilities - one-hot) / batch."""
        params, mats, rows, labels = tiny_setup(0)
        probs, cache = forward(params, mats, rows)
        y = labels[rows]
        expected = probs.copy()
        expected[np.arange(rows.size), y] -= 1.0
        expected /= rows.size
        # recover the logit gradient through the head block's second linear
        _, grads = loss_and_grad(params, mats, rows, labels, train_mode=False)
        dpd = cache["head"]["dpd"]
        np.testing.assert_allclose(grads["head:b2"], expected.sum(axis=0), atol=1e-12)
        np.testing.assert_allclose(grads["head:w2"], dpd.T @ expected, atol=1e-12)

    def test_uniform_probs_loss_ln_c(self):
        params, mats, rows, labels = tiny_setup(0, num_classes=4)
        # zero the last layer: logits all equal -> uniform probabilities
        params.tensors["head:w2"] = np.zeros_like(params.tensors["head:w2"])
        params.tensors["head:b2"] = np.zeros_like(params.tensors["head:b2"])
        loss, _ = loss_and_grad(params, mats, rows, labels, train_mode=False)
        assert loss == pytest.approx(np.log(4.0), abs=1e-12)

    def test_one_hot_probs_loss_zero(self):
        params, mats, rows, labels = tiny_setup(0)
        probs = np.zeros((rows.size, 4))
        probs[np.arange(rows.size), labels[rows]] = 1.0
        loss = float(-np.log(probs[np.arange(rows.size), labels[rows]]).mean())
        assert loss == 0.0
        # and the softmax-CE gradient p - y vanishes there
        np.testing.assert_array_equal(probs - probs, np.zeros_like(probs))

    def test_unlabeled_row_rejected(self):
        params, mats, rows, labels = tiny_setup(0)
        labels = labels.copy()
        labels[rows[0]] = -1
        with pytest.raises(ValueError, match="unlabeled"):
            loss_and_grad(params, mats, rows, labels)

    def test_training_dropout_reproducible(self):
        params, mats, rows, labels = tiny_setup(0, dropout=0.5)
        l1, g1 = loss_and_grad(params, mats, rows, labels, rng=np.random.default_rng(3))
        l2, g2 = loss_and_grad(params, mats, rows, labels, rng=np.random.default_rng(3))
        assert l1 == l2
        for k in g1:
            np.testing.assert_array_equal(g1[k], g2[k])


class TestGradCheck:
    @pytest.mark.parametrize("fusion", ["transformer", "weighted-sum"])
    def test_tiny_models_pass(self, fusion):
        for seed in range(2):
            params, mats, rows, labels = tiny_setup(seed, fusion=fusion, n_nodes=6)
            assert grad_check(params, mats, rows, labels) <= 1e-4

    def test_detects_corrupted_backward(self, monkeypatch):
        params, mats, rows, labels = tiny_setup(0)
        real = model_mod.loss_and_grad

        def corrupted(*args, **kwargs):
            loss, grads = real(*args, **kwargs)
            grads["fuse:wv"] = -grads["fuse:wv"]
            return loss, grads

        monkeypatch.setattr(model_mod, "loss_and_grad", corrupted)
        assert model_mod.grad_check(params, mats, rows, labels) > 1e-2

    def test_larger_step_grows_but_bounded(self):
        params, mats, rows, labels = tiny_setup(1)
        fine = grad_check(params, mats, rows, labels, step=1e-5)
        coarse = grad_check(params, mats, rows, labels, step=1e-3)
        assert coarse >= fine
        assert coarse <= 1e-2

    def test_requires_f64(self):
        params, mats, rows, labels = tiny_setup(0)
        cfg32 = ModelConfig(hidden_dim=8, num_classes=4, dropout=0.0, dtype=np.float32)
        p32 = init_params(SPECS, cfg32, 0)
        with pytest.raises(ValueError):
            grad_check(p32, mats, rows, labels)


class TestWeightedSumFusion:
    def test_single_metapath_passthrough(self):
        rng = np.random.default_rng(0)
        cfg = ModelConfig(hidden_dim=8, num_classes=3, fusion="weighted-sum", dropout=0.0)
        params = init_params([("x:P", 5)], cfg, 0)
        h = rng.standard_normal((1, 6, 8))
        fused, _ = fuse_weighted_sum(params, h)
        np.testing.assert_array_equal(fused, h[0])

    def test_equal_scores_average(self):
        cfg = ModelConfig(hidden_dim=8, num_classes=3, fusion="weighted-sum", dropout=0.0)
        params = init_params([("x:A", 5), ("x:B", 5)], cfg, 0)
        h = np.stack([np.ones((4, 8)), 3.0 * np.ones((4, 8))])
        # zero the scoring tensors: all scores equal -> weights 0.5/0.5
        params.tensors["fuse:qa"] = np.zeros_like(params.tensors["fuse:qa"])
        fused, cache = fuse_weighted_sum(params, h)
        np.testing.assert_array_equal(cache["weights"], [0.5, 0.5])
        np.testing.assert_allclose(fused, 2.0 * np.ones((4, 8)), rtol=1e-15)


class TestPermutationEquivariance:
    def test_permuting_metapaths_permutes_outputs(self):
        params, mats, rows, labels = tiny_setup(0, n_nodes=6)
        perm = [2, 0, 1]
        d = params.config.hidden_dim
        specs_p = [(params.path_ids[i], params.in_dims[i]) for i in perm]
        tensors_p = {}
        for pid, _ in specs_p:
            for suffix in ("w1", "b1", "ln_g", "ln_b", "w2", "b2"):
                tensors_p[f"proj:{pid}:{suffix}"] = params.tensors[f"proj:{pid}:{suffix}"]
        for name in ("fuse:wq", "fuse:wk", "fuse:wv", "fuse:beta",
                     "head:b1", "head:ln_g", "head:ln_b", "head:w2", "head:b2"):
            tensors_p[name] = params.tensors[name]
        w1 = params.tensors["head:w1"]
        blocks = [w1[i * d:(i + 1) * d] for i in range(len(perm))]
        tensors_p["head:w1"] = np.concatenate([blocks[i] for i in perm], axis=0)
        params_p = ModelParams(params.config,
                               tuple(p for p, _ in specs_p),
                               tuple(dd for _, dd in specs_p), tensors_p)

        probs, cache = forward(params, mats, rows)
        probs_p, cache_p = forward(params_p, [mats[i] for i in perm], rows)
        np.testing.assert_allclose(probs_p, probs, atol=1e-12)
        loss, _ = loss_and_grad(params, mats, rows, labels, train_mode=False)
        loss_p, _ = loss_and_grad(params_p, [mats[i] for i in perm], rows, labels,
                                  train_mode=False)
        assert loss_p == pytest.approx(loss, rel=1e-12)
        # fused per-metapath outputs permute identically
        fused = params.tensors["fuse:beta"] * cache["fuse"]["attn"] + cache["fuse"]["h"]
        fused_p = params.tensors["fuse:beta"] * cache_p["fuse"]["attn"] + cache_p["fuse"]["h"]
        for new_i, old_i in enumerate(perm):
            np.testing.assert_allclose(fused_p[new_i], fused[old_i], atol=1e-12)


class TestAdam:
    def test_zero_gradient_no_change(self):
        params, mats, rows, labels = tiny_setup(0)
        state = OptimizerState.for_params(params, lr=0.1)
        before = {k: v.copy() for k, v in params.tensors.items()}
        zero = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        adam_step(params, zero, state)
        for k in before:
            np.testing.assert_array_equal(params.tensors[k], before[k])

    def test_first_step_is_signed_lr(self):
        cfg = ModelConfig(hidden_dim=4, num_classes=2)
        params = ModelParams(cfg, ("w",), (2,), {"w": np.array([1.0, -2.0, 0.5])})
        g = {"w": np.array([0.3, -0.7, 2.0])}
        state = OptimizerState.for_params(params, lr=0.01)
        adam_step(params, g, state)
        delta = params.tensors["w"] - np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(delta, -0.01 * np.sign(g["w"]), rtol=1e-6)

    def test_quadratic_convergence(self):
        """Closed-form minimizer oracle: argmin of sum((w - c)^2) is c."""
        c = np.array([0.7, -0.4])
        cfg = ModelConfig(hidden_dim=4, num_classes=2)
        params = ModelParams(cfg, ("w",), (2,), {"w": c - 0.1})
        state = OptimizerState.for_params(params, lr=0.015)
        for _ in range(100):
            g = {"w": 2.0 * (params.tensors["w"] - c)}
            adam_step(params, g, state)
        np.testing.assert_allclose(params.tensors["w"], c, atol=1e-3)

    def test_decoupled_weight_decay_shrinks(self):
        cfg = ModelConfig(hidden_dim=4, num_classes=2)
        params = ModelParams(cfg, ("w",), (2,), {"w": np.array([10.0])})
        state = OptimizerState.for_params(params, lr=0.1, weight_decay=0.5)
        adam_step(params, {"w": np.zeros(1)}, state)
        np.testing.assert_allclose(params.tensors["w"], [10.0 - 0.1 * 0.5 * 10.0])


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params, _, _, _ = tiny_setup(0)
        save_checkpoint(params, tmp_path / "m.ckpt")
        loaded = load_checkpoint(tmp_path / "m.ckpt")
        assert loaded.path_ids == params.path_ids
        assert loaded.in_dims == params.in_dims
        assert loaded.config.fusion == params.config.fusion
        assert loaded.config.hidden_dim == params.config.hidden_dim
        for k in params.tensors:
            np.testing.assert_array_equal(loaded.tensors[k], params.tensors[k])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + b"\0" * 40)
        with pytest.raises(Exception):
            load_checkpoint(tmp_path / "bad.ckpt")


class TestPrecision32:
    def test_f32_forward_runs(self):
        rng = np.random.default_rng(0)
        cfg = ModelConfig(hidden_dim=8, num_classes=3, dropout=0.0, dtype=np.float32)
        params = init_params([("x:P", 5)], cfg, 0)
        mats = [rng.standard_normal((6, 5))]
        probs, cache = forward(params, mats, np.arange(6))
        assert probs.dtype == np.float32
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)
        np.testing.assert_allclose(cache["fuse"]["alpha"].sum(axis=2), 1.0, atol=1e-3)
