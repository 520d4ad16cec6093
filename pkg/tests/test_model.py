import numpy as np
import pytest

from conftest import assert_close, central_diff
from phenoseq.layers import softmax
from phenoseq.lstm import GATES, LstmState, lstm_step
from phenoseq.model import (
    CnnClassifier,
    CnnLstmModel,
    ConvBlockConfig,
    FeatureExtractorConfig,
    ModelConfig,
    cross_entropy_loss,
    load_checkpoint,
    one_hot,
    save_checkpoint,
)
from phenoseq.tensor import RngStream, ShapeMismatchError

TOY = ModelConfig(
    extractor=FeatureExtractorConfig(blocks=(ConvBlockConfig(4), ConvBlockConfig(8))),
    image_size=8,
    hidden_dense=6,
    lstm_hidden=4,
)


@pytest.fixture
def cnn():
    return CnnClassifier.init(TOY, RngStream(11))


@pytest.fixture
def cnn_lstm():
    return CnnLstmModel.init(TOY, RngStream(12))


class TestCnnForward:
    def test_probabilities_sum_to_one(self, cnn, rng):
        p = cnn.forward(rng.random((3, 8, 8)))
        assert p.shape == (3,)
        assert abs(p.sum() - 1.0) <= 1e-12

    def test_zero_output_layer_gives_uniform(self, cnn, rng):
        cnn.out.weights[:] = 0.0
        cnn.out.bias[:] = 0.0
        p = cnn.forward(rng.random((3, 8, 8)))
        assert np.allclose(p, 1.0 / 3.0, atol=1e-15)

    def test_wrong_shape_rejected(self, cnn, rng):
        with pytest.raises(ShapeMismatchError):
            cnn.forward(rng.random((3, 9, 8)))
        with pytest.raises(ShapeMismatchError):
            cnn.forward(rng.random((1, 8, 8)))

    def test_flip_symmetric_extractor_gives_identical_features(self, cnn, rng):
        # symmetrize every kernel under horizontal flip; pooling windows tile
        # the even-sized maps symmetrically, so GAP features must match
        for layer in cnn.conv_layers:
            layer.kernels[:] = 0.5 * (layer.kernels + layer.kernels[..., ::-1])
        image = rng.random((3, 8, 8))
        f1, _, _ = cnn.extract_features(image)
        f2, _, _ = cnn.extract_features(image[..., ::-1].copy())
        assert_close(f1, f2, rtol=1e-12, atol=1e-12, label="flip-symmetric features")


class TestCnnLstmForward:
    def test_probabilities_sum_to_one(self, cnn_lstm, rng):
        p = cnn_lstm.forward(rng.random((5, 3, 8, 8)))
        assert abs(p.sum() - 1.0) <= 1e-12

    def test_t1_is_extractor_step_head_composition(self, cnn_lstm, rng):
        frame = rng.random((3, 8, 8))
        p = cnn_lstm.forward(frame[None])
        feats, _, _ = cnn_lstm.extract_features(frame)
        state, _ = lstm_step(cnn_lstm.lstm_params, feats,
                             LstmState.zeros(cnn_lstm.config.lstm_hidden))
        logits, _ = cnn_lstm.head_forward(state.h)
        assert np.allclose(p, softmax(logits), atol=1e-15)

    def test_duplicated_final_frame_with_severed_recurrence(self, cnn_lstm, rng):
        # recurrence severed = zero U *and* closed forget gate (the cell path
        # carries history regardless of U); only the last frame reaches h_T
        for g in GATES:
            cnn_lstm.lstm_params.U[g][:] = 0.0
        cnn_lstm.lstm_params.b["f"][:] = -50.0
        frames = rng.random((4, 3, 8, 8))
        extended = np.concatenate([frames, frames[-1:]], axis=0)
        l1 = cnn_lstm.forward_logits(frames)
        l2 = cnn_lstm.forward_logits(extended)
        assert_close(l1, l2, rtol=1e-12, atol=1e-12, label="duplicate-final-frame logits")

    def test_empty_sequence_rejected(self, cnn_lstm):
        with pytest.raises((ValueError, ShapeMismatchError)):
            cnn_lstm.forward(np.zeros((0, 3, 8, 8)))

    def test_heterogeneous_frames_rejected(self, cnn_lstm, rng):
        frames = [rng.random((3, 8, 8)), rng.random((3, 4, 4))]
        with pytest.raises(ShapeMismatchError):
            cnn_lstm.forward(frames)

    def test_sequence_longer_than_32_rejected(self, cnn_lstm, rng):
        with pytest.raises(ValueError):
            cnn_lstm.forward(rng.random((33, 3, 8, 8)))

    def test_extractor_weights_are_shared_storage(self, cnn_lstm, rng):
        # one parameter storage referenced at every timestep: the params dict
        # exposes the very arrays inside the layers, and a duplicated frame
        # yields an identical feature row
        params = cnn_lstm.params()
        assert params["conv0.kernels"] is cnn_lstm.conv_layers[0].kernels
        frame = rng.random((3, 8, 8))
        feats, _, _ = cnn_lstm.extract_features(np.stack([frame, frame]))
        assert np.array_equal(feats[0], feats[1])


class TestCrossEntropy:
    def test_perfect_prediction(self):
        assert cross_entropy_loss(np.array([1.0, 0.0, 0.0]), one_hot(0)) <= 1e-12

    def test_uniform_prediction(self):
        loss = cross_entropy_loss(np.full(3, 1.0 / 3.0), one_hot(1))
        assert abs(loss - 1.0986122886681096914) < 1e-12

    def test_direct_formula(self):
        loss = cross_entropy_loss(np.array([0.7, 0.2, 0.1]), one_hot(0))
        assert abs(loss - 0.35667494393873237891) < 1e-12

    def test_rejects_non_onehot(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(np.full(3, 1 / 3), np.array([0.5, 0.5, 0.0]))
        with pytest.raises(ValueError):
            cross_entropy_loss(np.full(3, 1 / 3), np.array([1.0, 1.0, 0.0]))


class TestGradients:
    def test_softmax_ce_logit_gradient_identity(self, rng):
        # gradient of CE(softmax(z), y) composed from the two public pieces
        # must equal softmax(z) - y
        for _ in range(10):
            z = rng.standard_normal(3) * 4
            y = one_hot(int(rng.integers(0, 3)))
            p = softmax(z)
            dce_dp = -y / np.maximum(p, 1e-12)
            dsm = p[:, None] * (np.eye(3) - p[None, :])  # dsoftmax_j/dz_i at [i, j]
            composed = dsm @ dce_dp
            assert_close(composed, p - y, rtol=1e-12, atol=1e-12,
                         label="softmax+CE gradient identity")

    def test_frozen_extractor_returns_no_conv_grads(self, cnn_lstm, rng):
        seqs = [rng.random((3, 3, 8, 8))]
        _, grads = cnn_lstm.loss_and_grads(seqs, [0], freeze_extractor=True)
        assert not any(k.startswith("conv") for k in grads)
        _, grads = cnn_lstm.loss_and_grads(seqs, [0], freeze_extractor=False)
        assert any(k.startswith("conv") for k in grads)

    def test_cnn_gradients_match_finite_differences(self, cnn, rng):
        images = rng.random((2, 3, 8, 8))
        labels = [0, 2]
        _, grads = cnn.loss_and_grads(images, labels)
        params = cnn.params()
        for name in ["conv0.kernels", "conv1.bias", "hidden.weights", "out.weights", "out.bias"]:
            ref = params[name]

            def f(v, _name=name, _ref=ref):
                saved = _ref.copy()
                _ref[...] = v
                loss, _ = cnn.loss_and_grads(images, labels)
                _ref[...] = saved
                return loss

            assert_close(grads[name], central_diff(f, ref.copy()), rtol=1e-4, atol=1e-8,
                         label=f"cnn grad {name}")

    def test_cnn_lstm_end_to_end_gradcheck(self, cnn_lstm, rng):
        # joint mode: every parameter participates, T=3 sequence of 8x8 frames
        seqs = [rng.random((3, 3, 8, 8)), rng.random((3, 3, 8, 8))]
        labels = [1, 2]
        _, grads = cnn_lstm.loss_and_grads(seqs, labels, freeze_extractor=False)
        params = cnn_lstm.params()
        assert set(grads) == set(params)
        for name in ["conv0.kernels", "conv1.kernels", "lstm.W_f", "lstm.U_o",
                     "lstm.b_c", "hidden.weights", "out.bias"]:
            ref = params[name]

            def f(v, _ref=ref):
                saved = _ref.copy()
                _ref[...] = v
                loss, _ = cnn_lstm.loss_and_grads(seqs, labels, freeze_extractor=False)
                _ref[...] = saved
                return loss

            assert_close(grads[name], central_diff(f, ref.copy()), rtol=1e-4, atol=1e-8,
                         label=f"cnn-lstm grad {name}")


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, cnn_lstm, tmp_path):
        path = tmp_path / "model.json"
        save_checkpoint(cnn_lstm, path, seed=42, epoch=7)
        loaded, seed, epoch = load_checkpoint(path)
        assert seed == 42 and epoch == 7
        assert loaded.kind == cnn_lstm.kind
        assert loaded.config == cnn_lstm.config
        for name, arr in cnn_lstm.params().items():
            assert np.array_equal(loaded.params()[name], arr), name

    def test_cnn_round_trip(self, cnn, tmp_path):
        path = tmp_path / "cnn.json"
        save_checkpoint(cnn, path)
        loaded, _, _ = load_checkpoint(path)
        assert loaded.kind == "cnn"
        for name, arr in cnn.params().items():
            assert np.array_equal(loaded.params()[name], arr), name

    def test_rejects_foreign_document(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            load_checkpoint(path)
