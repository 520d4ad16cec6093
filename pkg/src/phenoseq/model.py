"""The two network types: a time-invariant CNN classifier and a CNN-LSTM.

Both share the same extractor topology (stacked conv/relu/maxpool blocks
followed by global average pooling) and the same classification head (dense
hidden layer with ReLU, dense output layer, softmax over the three classes).
The CNN-LSTM applies one extractor - one set of weights - to every frame of
a sequence and feeds the final LSTM hidden state to the head.

Checkpoints are single JSON documents carrying the config, every parameter
tensor, the seed, and the epoch counter; save/load round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import layers as L
from .lstm import GATES, LstmCellParams, init_lstm_params, lstm_backward, lstm_forward
from .metrics import CLASSES
from .tensor import RngStream, ShapeMismatchError, glorot_uniform

__all__ = [
    "N_CLASSES",
    "MAX_TIMESTEPS",
    "ConvBlockConfig",
    "FeatureExtractorConfig",
    "ModelConfig",
    "CnnClassifier",
    "CnnLstmModel",
    "cross_entropy_loss",
    "one_hot",
    "save_checkpoint",
    "load_checkpoint",
]

N_CLASSES = len(CLASSES)
MAX_TIMESTEPS = 32
LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class ConvBlockConfig:
    channels: int
    kernel: int = 3
    pool: int = 2


@dataclass(frozen=True)
class FeatureExtractorConfig:
    """Conv blocks ending in global average pooling; output dim = last channels."""

    blocks: tuple = (
        ConvBlockConfig(8),
        ConvBlockConfig(16),
        ConvBlockConfig(32),
        ConvBlockConfig(64),
    )
    in_channels: int = 3

    @property
    def feature_dim(self) -> int:
        return self.blocks[-1].channels

    def as_dict(self) -> dict:
        return {"blocks": [asdict(b) for b in self.blocks], "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureExtractorConfig":
        return cls(
            blocks=tuple(ConvBlockConfig(**b) for b in d["blocks"]),
            in_channels=d["in_channels"],
        )


@dataclass(frozen=True)
class ModelConfig:
    extractor: FeatureExtractorConfig = FeatureExtractorConfig()
    image_size: int = 64
    hidden_dense: int = 128
    lstm_hidden: int = 64

    def as_dict(self) -> dict:
        return {
            "extractor": self.extractor.as_dict(),
            "image_size": self.image_size,
            "hidden_dense": self.hidden_dense,
            "lstm_hidden": self.lstm_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            extractor=FeatureExtractorConfig.from_dict(d["extractor"]),
            image_size=d["image_size"],
            hidden_dense=d["hidden_dense"],
            lstm_hidden=d["lstm_hidden"],
        )


def one_hot(class_index: int, n: int = N_CLASSES) -> np.ndarray:
    y = np.zeros(n)
    y[class_index] = 1.0
    return y


def cross_entropy_loss(pred: np.ndarray, true_onehot: np.ndarray) -> float:
    """Categorical cross-entropy -sum(y * log(y_hat)), clamping y_hat at 1e-12."""
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(true_onehot, dtype=np.float64)
    if pred.shape != y.shape:
        raise ShapeMismatchError(f"pred shape {pred.shape} != target shape {y.shape}")
    if not (np.all((y == 0.0) | (y == 1.0)) and np.isclose(y.sum(), 1.0)):
        raise ValueError(f"target must be one-hot, got {y}")
    return float(-(y * np.log(np.maximum(pred, LOG_CLAMP))).sum())


# ---------------------------------------------------------------------------
# feature extractor
# ---------------------------------------------------------------------------

def _init_extractor(config: FeatureExtractorConfig, rng: RngStream) -> list:
    conv_layers = []
    in_ch = config.in_channels
    for idx, block in enumerate(config.blocks):
        k = block.kernel
        fan_in = in_ch * k * k
        fan_out = block.channels * k * k
        kernels = glorot_uniform(
            rng.derive("conv", idx), fan_in, fan_out, (block.channels, in_ch, k, k)
        )
        conv_layers.append(
            L.Conv2dLayer(kernels=kernels, bias=np.zeros(block.channels), stride=1, padding=k // 2)
        )
        in_ch = block.channels
    return conv_layers


def _extractor_forward(conv_layers, config, x, want_cache: bool):
    """x: (3, H, W) or (N, 3, H, W) -> features (d,) or (N, d) plus caches."""
    caches = [] if want_cache else None
    cur = x
    for layer, block in zip(conv_layers, config.blocks):
        z, conv_cache = L.conv2d_forward(layer, cur)
        a = L.relu(z)
        p, pool_cache = L.maxpool2d(a, window=block.pool, stride=block.pool)
        if want_cache:
            caches.append((conv_cache, z, pool_cache))
        cur = p
    spatial = cur.shape[-2:]
    feats = L.global_average_pool(cur)
    return feats, caches, spatial


def _extractor_backward(conv_layers, config, caches, spatial, grad_feats):
    """Backward from GAP output gradients to per-layer parameter gradients."""
    grad = L.global_average_pool_backward(grad_feats, spatial)
    grads = {}
    for idx in range(len(conv_layers) - 1, -1, -1):
        conv_cache, z, pool_cache = caches[idx]
        grad = L.maxpool2d_backward(pool_cache, grad)
        grad = L.relu_backward(grad, z)
        grad, gk, gb = L.conv2d_backward(conv_layers[idx], conv_cache, grad)
        grads[f"conv{idx}.kernels"] = gk
        grads[f"conv{idx}.bias"] = gb
    return grads


def _init_dense(rng: RngStream, n_in: int, n_out: int, name: str) -> L.DenseLayer:
    w = glorot_uniform(rng.derive(name, "w"), n_in, n_out, (n_out, n_in))
    return L.DenseLayer(weights=w, bias=np.zeros(n_out))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class _ModelBase:
    """Shared extractor/head plumbing and the parameter dictionary."""

    kind = ""

    def __init__(self, config: ModelConfig, conv_layers, hidden: L.DenseLayer, out: L.DenseLayer):
        self.config = config
        self.conv_layers = conv_layers
        self.hidden = hidden
        self.out = out

    # -- parameters --------------------------------------------------------

    def params(self) -> dict:
        """Name -> live array. Updating an entry in place updates the model."""
        p = {}
        for idx, layer in enumerate(self.conv_layers):
            p[f"conv{idx}.kernels"] = layer.kernels
            p[f"conv{idx}.bias"] = layer.bias
        self._extra_params(p)
        p["hidden.weights"] = self.hidden.weights
        p["hidden.bias"] = self.hidden.bias
        p["out.weights"] = self.out.weights
        p["out.bias"] = self.out.bias
        return p

    def _extra_params(self, p: dict):
        pass

    # -- pieces --------------------------------------------------------------

    def _check_image(self, frame: np.ndarray):
        expected = (self.config.extractor.in_channels, self.config.image_size, self.config.image_size)
        if frame.shape[-3:] != expected:
            raise ShapeMismatchError(f"expected image shape {expected}, got {frame.shape}")

    def extract_features(self, x, want_cache: bool = False):
        return _extractor_forward(self.conv_layers, self.config.extractor, x, want_cache)

    def head_forward(self, feats):
        z1, c1 = L.dense_forward(self.hidden, feats)
        a1 = L.relu(z1)
        logits, c2 = L.dense_forward(self.out, a1)
        return logits, (c1, z1, c2)

    def head_backward(self, cache, grad_logits):
        c1, z1, c2 = cache
        grad_a1, gw2, gb2 = L.dense_backward(self.out, c2, grad_logits)
        grad_z1 = L.relu_backward(grad_a1, z1)
        grad_feats, gw1, gb1 = L.dense_backward(self.hidden, c1, grad_z1)
        grads = {
            "hidden.weights": gw1,
            "hidden.bias": gb1,
            "out.weights": gw2,
            "out.bias": gb2,
        }
        return grad_feats, grads


class CnnClassifier(_ModelBase):
    """Time-invariant classifier: one image in, one probability vector out."""

    kind = "cnn"

    @classmethod
    def init(cls, config: ModelConfig, rng: RngStream) -> "CnnClassifier":
        conv_layers = _init_extractor(config.extractor, rng)
        hidden = _init_dense(rng, config.extractor.feature_dim, config.hidden_dense, "hidden")
        out = _init_dense(rng, config.hidden_dense, N_CLASSES, "out")
        return cls(config, conv_layers, hidden, out)

    def forward_logits(self, image: np.ndarray):
        self._check_image(np.asarray(image))
        feats, _, _ = self.extract_features(image)
        logits, _ = self.head_forward(feats)
        return logits

    def forward(self, image: np.ndarray) -> np.ndarray:
        """Class probability vector; sums to 1."""
        return L.softmax(self.forward_logits(image))

    def predict(self, image: np.ndarray) -> int:
        return int(np.argmax(self.forward_logits(image), axis=-1))

    def loss_and_grads(self, images: np.ndarray, labels):
        """Mean cross-entropy over a batch plus gradients for every parameter."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        self._check_image(images)
        labels = np.asarray(labels, dtype=np.int64)
        n = images.shape[0]
        feats, caches, spatial = self.extract_features(images, want_cache=True)
        logits, head_cache = self.head_forward(feats)
        probs = L.softmax(logits)
        picked = np.maximum(probs[np.arange(n), labels], LOG_CLAMP)
        loss = float(-np.log(picked).mean())
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        grad_feats, grads = self.head_backward(head_cache, dlogits)
        grads.update(
            _extractor_backward(self.conv_layers, self.config.extractor, caches, spatial, grad_feats)
        )
        return loss, grads

    # -- Grad-CAM support ----------------------------------------------------

    def last_conv_activations(self, image: np.ndarray) -> np.ndarray:
        """Post-ReLU feature maps of the last conv layer: (K, u, v)."""
        self._check_image(np.asarray(image))
        cur = image
        for layer, block in zip(self.conv_layers[:-1], self.config.extractor.blocks[:-1]):
            z, _ = L.conv2d_forward(layer, cur)
            cur, _ = L.maxpool2d(L.relu(z), window=block.pool, stride=block.pool)
        z, _ = L.conv2d_forward(self.conv_layers[-1], cur)
        return L.relu(z)

    def logits_from_activations(self, activations: np.ndarray) -> np.ndarray:
        """Forward of the network tail: last pool -> GAP -> head. Pure in A."""
        block = self.config.extractor.blocks[-1]
        p, _ = L.maxpool2d(activations, window=block.pool, stride=block.pool)
        feats = L.global_average_pool(p)
        logits, _ = self.head_forward(feats)
        return logits

    def grad_logit_wrt_activations(self, activations: np.ndarray, class_index: int) -> np.ndarray:
        """d(pre-softmax score of class c) / d(last conv activations)."""
        if not 0 <= class_index < N_CLASSES:
            raise ValueError(f"class index {class_index} out of range for {N_CLASSES} classes")
        block = self.config.extractor.blocks[-1]
        p, pool_cache = L.maxpool2d(activations, window=block.pool, stride=block.pool)
        feats = L.global_average_pool(p)
        _, head_cache = self.head_forward(feats)
        grad_feats, _ = self.head_backward(head_cache, one_hot(class_index))
        grad_p = L.global_average_pool_backward(grad_feats, p.shape[-2:])
        return L.maxpool2d_backward(pool_cache, grad_p)


class CnnLstmModel(_ModelBase):
    """Sequence classifier: shared extractor per frame -> LSTM -> head."""

    kind = "cnn_lstm"

    def __init__(self, config, conv_layers, lstm_params: LstmCellParams, hidden, out):
        super().__init__(config, conv_layers, hidden, out)
        self.lstm_params = lstm_params

    @classmethod
    def init(cls, config: ModelConfig, rng: RngStream) -> "CnnLstmModel":
        conv_layers = _init_extractor(config.extractor, rng)
        lstm_params = init_lstm_params(
            rng.derive("lstm"), config.extractor.feature_dim, config.lstm_hidden
        )
        hidden = _init_dense(rng, config.lstm_hidden, config.hidden_dense, "hidden")
        out = _init_dense(rng, config.hidden_dense, N_CLASSES, "out")
        return cls(config, conv_layers, lstm_params, hidden, out)

    def _extra_params(self, p: dict):
        for g in GATES:
            p[f"lstm.W_{g}"] = self.lstm_params.W[g]
            p[f"lstm.U_{g}"] = self.lstm_params.U[g]
            p[f"lstm.b_{g}"] = self.lstm_params.b[g]

    def _check_frames(self, frames) -> np.ndarray:
        try:
            frames = np.asarray(frames, dtype=np.float64)
        except ValueError:
            raise ShapeMismatchError("all frames of a sequence must share one shape") from None
        if frames.ndim != 4:
            raise ShapeMismatchError(f"expected frames (T, C, H, W), got shape {frames.shape}")
        if frames.shape[0] < 1:
            raise ValueError("empty image sequence")
        if frames.shape[0] > MAX_TIMESTEPS:
            raise ValueError(f"sequence length {frames.shape[0]} exceeds {MAX_TIMESTEPS}")
        self._check_image(frames)
        return frames

    def forward_logits(self, frames):
        frames = self._check_frames(frames)
        feats, _, _ = self.extract_features(frames)  # (T, d)
        h_final, _ = lstm_forward(self.lstm_params, feats)
        logits, _ = self.head_forward(h_final)
        return logits

    def forward(self, frames) -> np.ndarray:
        """Probability vector for one image sequence."""
        return L.softmax(self.forward_logits(frames))

    def predict(self, frames) -> int:
        return int(np.argmax(self.forward_logits(frames), axis=-1))

    def loss_and_grads(self, sequences, labels, freeze_extractor: bool = True):
        """Mean cross-entropy over sequences plus parameter gradients.

        With ``freeze_extractor`` the returned dict holds no conv gradients
        and the extractor is treated as a fixed feature function.
        """
        labels = np.asarray(labels, dtype=np.int64)
        n = len(sequences)
        if n == 0:
            raise ValueError("empty batch")
        feats_list, ext_caches = [], []
        for frames in sequences:
            frames = self._check_frames(frames)
            feats, caches, spatial = self.extract_features(frames, want_cache=not freeze_extractor)
            feats_list.append(feats)
            ext_caches.append((frames, caches, spatial))

        h_finals, traces = [], []
        for feats in feats_list:
            h_final, trace = lstm_forward(self.lstm_params, feats)
            h_finals.append(h_final)
            traces.append(trace)
        h_stack = np.stack(h_finals)  # (n, h)
        logits, head_cache = self.head_forward(h_stack)
        probs = L.softmax(logits)
        picked = np.maximum(probs[np.arange(n), labels], LOG_CLAMP)
        loss = float(-np.log(picked).mean())

        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        grad_h, grads = self.head_backward(head_cache, dlogits)

        lstm_grads = None
        for i, trace in enumerate(traces):
            g, grad_xs = lstm_backward(self.lstm_params, trace, grad_h[i])
            if lstm_grads is None:
                lstm_grads = g
            else:
                for k in g:
                    lstm_grads[k] += g[k]
            if not freeze_extractor:
                frames, caches, spatial = ext_caches[i]
                ext = _extractor_backward(
                    self.conv_layers, self.config.extractor, caches, spatial, np.stack(grad_xs)
                )
                for k, v in ext.items():
                    if k in grads:
                        grads[k] += v
                    else:
                        grads[k] = v
        for k, v in lstm_grads.items():
            grads[f"lstm.{k}"] = v
        return loss, grads


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _params_to_doc(params: dict) -> dict:
    return {
        name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
        for name, arr in params.items()
    }


def _params_from_doc(doc: dict) -> dict:
    return {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc.items()
    }


def save_checkpoint(model, path, seed: int = 0, epoch: int = 0):
    """Single self-describing JSON document; round-trips bit-exactly."""
    doc = {
        "format": "phenoseq-checkpoint-v1",
        "kind": model.kind,
        "config": model.config.as_dict(),
        "seed": int(seed),
        "epoch": int(epoch),
        "params": _params_to_doc(model.params()),
    }
    with open(path, "w") as f:
        json.dump(doc, f, allow_nan=False)


def load_checkpoint(path):
    """Returns (model, seed, epoch)."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "phenoseq-checkpoint-v1":
        raise ValueError(f"not a phenoseq checkpoint: {path}")
    config = ModelConfig.from_dict(doc["config"])
    rng = RngStream(0)
    if doc["kind"] == "cnn":
        model = CnnClassifier.init(config, rng)
    elif doc["kind"] == "cnn_lstm":
        model = CnnLstmModel.init(config, rng)
    else:
        raise ValueError(f"unknown model kind {doc['kind']!r}")
    stored = _params_from_doc(doc["params"])
    live = model.params()
    if set(stored) != set(live):
        raise ValueError("checkpoint parameter names do not match model structure")
    for name, arr in stored.items():
        if live[name].shape != arr.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}")
        live[name][...] = arr
    return model, doc["seed"], doc["epoch"]
