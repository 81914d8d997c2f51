"""Layers, losses, optimizer, gradient checking, and checkpoints."""
import numpy as np
import pytest

from stbf import (
    DataError,
    LayerSpec,
    MtlBatch,
    Network,
    NumericError,
    ParameterError,
    ShapeError,
    grad_check,
    load_checkpoint,
    mtl_loss,
    save_checkpoint,
    sgd_step,
    train_step,
)
from stbf.neural import freeze_non_lhuc, lhuc_scale, softmax

from oracles import quadratic_optimum, softmax_ce_grad


def single_head_batch(x, labels, speakers=None):
    return MtlBatch(
        inputs=x,
        labels={"h": np.asarray(labels)},
        weights={"h": 1.0},
        speakers=speakers,
    )


class TestActivations:
    def test_softmax_of_zeros_is_uniform(self):
        out = softmax(np.zeros((1, 3)))
        np.testing.assert_allclose(out, np.full((1, 3), 1.0 / 3.0), atol=1e-15)

    def test_softmax_rows_normalized(self):
        rng = np.random.default_rng(0)
        out = softmax(rng.standard_normal((50, 7)) * 20)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
        assert (out >= 0).all()

    def test_relu_clamps_negatives(self):
        net = Network([LayerSpec("ReLU", 2, 2)], [("h", 2)], seed=0)
        out = net.trunk_output(np.array([[-1.0, 2.0]]))
        np.testing.assert_array_equal(out, [[0.0, 2.0]])


class TestNetworkStructure:
    def test_head_shapes_for_wide_classifier(self):
        from stbf.classifier import ClassifierConfig, build_classifier_trunk

        trunk = build_classifier_trunk(410, ClassifierConfig())
        net = Network(trunk, [("intel", 5), ("spkr", 29)], seed=1, dtype=np.float32)
        probs = net.forward(np.random.default_rng(2).standard_normal((3, 410)))
        assert probs["intel"].shape == (3, 5)
        assert probs["spkr"].shape == (3, 29)
        for p in probs.values():
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_dim_chain_validated(self):
        with pytest.raises(ParameterError):
            Network([LayerSpec("Affine", 4, 8), LayerSpec("ReLU", 6, 6)], [("h", 2)])

    def test_skip_source_must_precede(self):
        spec = [
            LayerSpec("Affine", 4, 4),
            LayerSpec("SkipJunction", 4, 4, source=1),
        ]
        with pytest.raises(ParameterError):
            Network(spec, [("h", 2)])

    def test_bottleneck_must_narrow(self):
        with pytest.raises(ParameterError):
            LayerSpec("LinearBottleneckProjection", 8, 8)

    def test_dropout_rate_range(self):
        with pytest.raises(ParameterError):
            LayerSpec("Dropout", 4, 4, rate=1.0)

    def test_input_dim_mismatch(self):
        net = Network([LayerSpec("Affine", 3, 2)], [("h", 2)])
        with pytest.raises(ShapeError):
            net.forward(np.zeros((2, 4)))

    def test_non_finite_input_raises(self):
        net = Network([LayerSpec("Affine", 3, 2)], [("h", 2)])
        x = np.array([[1.0, np.inf, 0.0]])
        with pytest.raises(NumericError):
            net.forward(x)


class TestBatchNorm:
    def test_train_mode_normalizes_batch(self):
        net = Network(
            [LayerSpec("Affine", 6, 5), LayerSpec("BatchNorm", 5, 5)],
            [("h", 2)],
            seed=3,
        )
        x = np.random.default_rng(4).standard_normal((64, 6)) * 3.0 + 1.0
        net.forward(x, train=True)
        bn_out = net._fwd_outputs[1]  # gamma=1, beta=0 at init
        assert np.abs(bn_out.mean(axis=0)).max() <= 1e-6
        np.testing.assert_allclose(bn_out.var(axis=0), 1.0, atol=1e-5)

    def test_eval_uses_running_stats(self):
        net = Network([LayerSpec("BatchNorm", 3, 3)], [("h", 2)], seed=0)
        x = np.random.default_rng(5).standard_normal((8, 3)) + 7.0
        # fresh running stats are mean 0 / var 1, so eval mode is identity
        out = net.trunk_output(x)
        np.testing.assert_allclose(out, x, atol=1e-4)

    def test_running_stats_frozen_when_asked(self):
        net = Network([LayerSpec("BatchNorm", 3, 3)], [("h", 2)], seed=0)
        before = {k: v.copy() for k, v in net.stats.items()}
        x = np.random.default_rng(6).standard_normal((16, 3)) + 2.0
        net.forward(x, train=True, update_stats=False)
        for k, v in net.stats.items():
            np.testing.assert_array_equal(v, before[k])
        net.forward(x, train=True)
        assert any((net.stats[k] != before[k]).any() for k in before)


class TestLhuc:
    def test_zero_vector_is_identity(self):
        h = np.random.default_rng(7).standard_normal((4, 6))
        np.testing.assert_array_equal(lhuc_scale(h, np.zeros(6)), h)

    def test_sigmoid_limits(self):
        h = np.ones((1, 3))
        np.testing.assert_allclose(lhuc_scale(h, np.full(3, 40.0)), 2.0, atol=1e-12)
        np.testing.assert_allclose(lhuc_scale(h, np.full(3, -40.0)), 0.0, atol=1e-12)

    def test_fresh_lhuc_network_matches_plain_network_bitwise(self):
        base = [
            LayerSpec("Affine", 5, 8),
            LayerSpec("ReLU", 8, 8),
            LayerSpec("BatchNorm", 8, 8),
        ]
        plain = Network(base, [("h", 3)], seed=9)
        scaled = Network(
            base + [LayerSpec("LHUCScale", 8, 8)], [("h", 3)], seed=9
        )
        x = np.random.default_rng(10).standard_normal((6, 5))
        out_plain = plain.forward(x)["h"]
        out_scaled = scaled.forward(x, speakers=["s0"] * 6)["h"]
        assert out_plain.tobytes() == out_scaled.tobytes()

    def test_forward_requires_speakers(self):
        net = Network(
            [LayerSpec("Affine", 3, 4), LayerSpec("LHUCScale", 4, 4)],
            [("h", 2)],
        )
        with pytest.raises(DataError):
            net.forward(np.zeros((2, 3)))

    def test_gradient_against_finite_differences(self):
        net = Network(
            [LayerSpec("Affine", 4, 4), LayerSpec("LHUCScale", 4, 4)],
            [("h", 3)],
            seed=11,
            dtype=np.float64,
        )
        rng = np.random.default_rng(12)
        batch = single_head_batch(
            rng.standard_normal((6, 4)),
            rng.integers(0, 3, size=6),
            speakers=["s0", "s1"] * 3,
        )
        report = grad_check(net, batch)
        lhuc_errs = [e for p, e in report["per_tensor"].items() if ".lhuc." in p]
        assert lhuc_errs, "no per-speaker scaling vectors were checked"
        assert max(lhuc_errs) <= 1e-4
        assert report["max_rel_err"] <= 1e-4


class TestMtlLoss:
    def test_perfect_predictions_negligible_loss(self):
        probs = {"h": np.eye(4)}
        batch = single_head_batch(np.zeros((4, 1)), np.arange(4))
        loss, _ = mtl_loss(probs, batch)
        assert loss <= 1e-9

    def test_uniform_five_way_is_log_five(self):
        probs = {"h": np.full((10, 5), 0.2)}
        batch = single_head_batch(np.zeros((10, 1)), np.zeros(10, dtype=int))
        loss, _ = mtl_loss(probs, batch)
        np.testing.assert_allclose(loss, np.log(5.0), atol=1e-12)

    def test_two_head_weighting(self):
        probs = {
            "a": np.full((4, 2), 0.5),
            "b": np.eye(4),
        }
        batch = MtlBatch(
            inputs=np.zeros((4, 1)),
            labels={"a": np.zeros(4, dtype=int), "b": np.arange(4)},
            weights={"a": 0.25, "b": 0.75},
        )
        loss, _ = mtl_loss(probs, batch)
        np.testing.assert_allclose(loss, 0.25 * np.log(2.0), atol=1e-12)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ParameterError):
            MtlBatch(np.zeros((2, 1)), {"h": np.zeros(2, int)}, {"h": 0.7})

    def test_label_out_of_range(self):
        probs = {"h": np.full((2, 3), 1 / 3)}
        batch = single_head_batch(np.zeros((2, 1)), [0, 3])
        with pytest.raises(ParameterError):
            mtl_loss(probs, batch)

    def test_head_gradient_matches_closed_form(self):
        # For a softmax head, dLoss/dlogits = (p - onehot)/B, so the head
        # weight gradient must equal trunk_outᵀ @ (p - onehot)/B.
        rng = np.random.default_rng(13)
        net = Network([LayerSpec("Affine", 3, 4)], [("h", 5)], seed=14, dtype=np.float64)
        x = rng.standard_normal((8, 3))
        labels = rng.integers(0, 5, size=8)
        probs = net.forward(x)
        loss, dprobs = mtl_loss(probs, single_head_batch(x, labels))
        net.backward(dprobs)
        h = net.trunk_output(x)
        logits = h @ net.params["head.h.W"] + net.params["head.h.b"]
        ref_loss, dlogits = softmax_ce_grad(logits, labels)
        np.testing.assert_allclose(loss, ref_loss, atol=1e-12)
        np.testing.assert_allclose(net.grads["head.h.W"], h.T @ dlogits, atol=1e-12)
        np.testing.assert_allclose(net.grads["head.h.b"], dlogits.sum(axis=0), atol=1e-12)


class TestSgd:
    def make_net(self):
        return Network([LayerSpec("Affine", 2, 1)], [("h", 2)], seed=15, dtype=np.float64)

    def test_zero_lr_keeps_parameters(self):
        net = self.make_net()
        before = {k: v.tobytes() for k, v in net.params.items()}
        net.grads = {k: np.ones_like(v) for k, v in net.params.items()}
        sgd_step(net, lr=0.0, momentum=0.5)
        assert {k: v.tobytes() for k, v in net.params.items()} == before

    def test_plain_step_moves_by_lr_times_gradient(self):
        net = self.make_net()
        w0 = net.params["trunk.0.W"].copy()
        g = np.full_like(w0, 3.0)
        net.grads = {"trunk.0.W": g}
        sgd_step(net, lr=0.1, momentum=0.0)
        np.testing.assert_allclose(net.params["trunk.0.W"], w0 - 0.3, atol=1e-15)

    def test_l2_applies_to_weights_not_biases(self):
        net = self.make_net()
        w0 = net.params["trunk.0.W"].copy()
        b0 = net.params["head.h.b"].copy()
        net.grads = {
            "trunk.0.W": np.zeros_like(w0),
            "head.h.b": np.zeros_like(b0),
        }
        sgd_step(net, lr=1.0, momentum=0.0, l2=0.5)
        np.testing.assert_allclose(net.params["trunk.0.W"], 0.5 * w0, atol=1e-15)
        np.testing.assert_array_equal(net.params["head.h.b"], b0)

    def test_freeze_predicate(self):
        net = self.make_net()
        w0 = net.params["trunk.0.W"].copy()
        net.grads = {k: np.ones_like(v) for k, v in net.params.items()}
        sgd_step(net, lr=0.1, momentum=0.0, freeze=lambda p: p.endswith(".W"))
        np.testing.assert_array_equal(net.params["trunk.0.W"], w0)
        assert freeze_non_lhuc("trunk.2.W")
        assert not freeze_non_lhuc("trunk.2.lhuc.spk01")

    def test_invalid_hyperparameters(self):
        net = self.make_net()
        net.grads = {}
        with pytest.raises(ParameterError):
            sgd_step(net, lr=-0.1)
        with pytest.raises(ParameterError):
            sgd_step(net, lr=0.1, momentum=1.0)

    def test_quadratic_converges_to_solver_optimum(self):
        # Minimize 0.5 p'Ap - b'p by driving the optimizer with exact
        # gradients; the fixed point must match the linear-solve optimum.
        a = np.array([[2.0, 0.3], [0.3, 1.0]])
        b = np.array([0.7, -1.1])
        target = quadratic_optimum(a, b)
        net = Network([LayerSpec("Affine", 2, 1)], [("h", 2)], seed=16, dtype=np.float64)
        p = net.params["trunk.0.W"]  # shape (2, 1), used as the variable
        for _ in range(10_000):
            grad = a @ p[:, 0] - b
            net.grads = {"trunk.0.W": grad[:, None]}
            sgd_step(net, lr=0.1, momentum=0.0)
            if np.abs(p[:, 0] - target).max() < 1e-6:
                break
        assert np.abs(p[:, 0] - target).max() < 1e-6


class TestGradCheck:
    def test_linear_regression_net_is_tight(self):
        net = Network([LayerSpec("Affine", 5, 4)], [("h", 3)], seed=17, dtype=np.float64)
        rng = np.random.default_rng(18)
        batch = single_head_batch(rng.standard_normal((8, 5)), rng.integers(0, 3, 8))
        assert grad_check(net, batch)["max_rel_err"] <= 1e-7

    def test_requires_double_precision(self):
        net = Network([LayerSpec("Affine", 3, 2)], [("h", 2)], dtype=np.float32)
        batch = single_head_batch(np.zeros((2, 3)), [0, 1])
        with pytest.raises(ParameterError):
            grad_check(net, batch)


class TestTraining:
    def test_loss_decreases_on_separable_toy(self):
        rng = np.random.default_rng(19)
        x = np.concatenate(
            [
                rng.normal(-2.0, 0.5, size=(32, 2)),
                rng.normal(2.0, 0.5, size=(32, 2)),
            ]
        )
        y = np.repeat([0, 1], 32)
        net = Network(
            [LayerSpec("Affine", 2, 16), LayerSpec("ReLU", 16, 16)],
            [("h", 2)],
            seed=20,
            dtype=np.float64,
        )
        batch = single_head_batch(x, y)
        losses = [train_step(net, batch, lr=0.1, momentum=0.0) for _ in range(51)]
        diffs = np.diff(losses)
        assert diffs.max() <= 1e-3
        assert losses[-1] < losses[0]


class TestCheckpoint:
    def test_round_trip_preserves_everything(self, tmp_path):
        net = Network(
            [
                LayerSpec("Affine", 4, 6),
                LayerSpec("ReLU", 6, 6),
                LayerSpec("BatchNorm", 6, 6),
                LayerSpec("LHUCScale", 6, 6),
            ],
            [("intel", 3), ("spkr", 2)],
            seed=21,
            dtype=np.float32,
        )
        x = np.random.default_rng(22).standard_normal((5, 4)).astype(np.float32)
        net.forward(x, train=True, speakers=["a", "b", "a", "b", "a"])
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, net, extra={"note": "round-trip"})
        loaded, extra = load_checkpoint(path)
        assert extra == {"note": "round-trip"}
        assert [s.to_dict() for s in loaded.trunk] == [s.to_dict() for s in net.trunk]
        assert loaded.heads == net.heads
        assert set(loaded.params) == set(net.params)
        for k in net.params:
            assert loaded.params[k].tobytes() == net.params[k].tobytes()
        for k in net.stats:
            assert loaded.stats[k].tobytes() == net.stats[k].tobytes()
        out_a = net.forward(x, speakers=["a"] * 5)
        out_b = loaded.forward(x, speakers=["a"] * 5)
        for name in out_a:
            assert out_a[name].tobytes() == out_b[name].tobytes()
