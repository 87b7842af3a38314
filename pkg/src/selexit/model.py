"""Multi-exit classifier: a dense backbone with an exit head and a deferral
head attached after every layer."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import DenseLayer, ShapeError, activate, activate_grad, linear, sigmoid, softmax

CHECKPOINT_SCHEMA = "selexit.model/1"


@dataclass(frozen=True)
class LayerReadout:
    layer: int  # 1-based
    class_probs: np.ndarray
    confidence: float
    hardness: float

    @property
    def predicted(self) -> int:
        # np.argmax returns the first maximum: lowest class index wins ties
        return int(np.argmax(self.class_probs))


@dataclass
class ForwardCache:
    """Batch activations kept for the backward pass."""

    x: np.ndarray
    pre: list  # pre-activations z_i, each (m, w)
    hidden: list  # h_i, each (m, w)
    ec_logits: np.ndarray  # (m, n, C)
    dc_logits: np.ndarray  # (m, n)

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.ec_logits)

    @property
    def hardness(self) -> np.ndarray:
        return sigmoid(self.dc_logits)


class MultiExitModel:
    """Backbone layers ``L_1..L_n`` with per-layer exit and deferral heads.

    When ``shared_dc`` is set every entry of ``deferral_heads`` is the same
    ``DenseLayer`` object, so the tie survives in-place optimizer updates.
    """

    def __init__(self, backbone, exit_heads, deferral_heads, n_classes, shared_dc=False):
        if len(backbone) < 1:
            raise ShapeError("backbone needs at least one layer")
        if not (len(backbone) == len(exit_heads) == len(deferral_heads)):
            raise ShapeError("need exactly one exit head and one deferral head per layer")
        for i in range(1, len(backbone)):
            if backbone[i].in_width != backbone[i - 1].out_width:
                raise ShapeError(f"layer {i + 1} input width does not match layer {i} output")
        for i, (layer, eh, dh) in enumerate(zip(backbone, exit_heads, deferral_heads), 1):
            if eh.in_width != layer.out_width or eh.out_width != n_classes:
                raise ShapeError(f"exit head {i} has shape {eh.weights.shape}")
            if dh.in_width != layer.out_width or dh.out_width != 1:
                raise ShapeError(f"deferral head {i} has shape {dh.weights.shape}")
        if shared_dc and any(dh is not deferral_heads[0] for dh in deferral_heads):
            raise ValueError("shared_dc requires a single deferral head object")
        self.backbone = list(backbone)
        self.exit_heads = list(exit_heads)
        self.deferral_heads = list(deferral_heads)
        self.n_classes = int(n_classes)
        self.shared_dc = bool(shared_dc)

    @classmethod
    def build(
        cls,
        in_width: int,
        hidden_width: int,
        n_layers: int,
        n_classes: int,
        seed: int = 0,
        activation: str = "relu",
        shared_dc: bool = False,
        zero_heads: bool = False,
    ) -> "MultiExitModel":
        rng = np.random.default_rng(seed)
        backbone = []
        width = in_width
        for _ in range(n_layers):
            backbone.append(DenseLayer.init(rng, width, hidden_width, activation))
            width = hidden_width
        exits = [
            DenseLayer.init(rng, hidden_width, n_classes, zero=zero_heads) for _ in range(n_layers)
        ]
        if shared_dc:
            head = DenseLayer.init(rng, hidden_width, 1, zero=zero_heads)
            defers = [head] * n_layers
        else:
            defers = [DenseLayer.init(rng, hidden_width, 1, zero=zero_heads) for _ in range(n_layers)]
        return cls(backbone, exits, defers, n_classes, shared_dc)

    @property
    def n_layers(self) -> int:
        return len(self.backbone)

    @property
    def in_width(self) -> int:
        return self.backbone[0].in_width

    @property
    def hidden_width(self) -> int:
        return self.backbone[0].out_width

    def unique_deferral_heads(self) -> list[DenseLayer]:
        return self.deferral_heads[:1] if self.shared_dc else self.deferral_heads

    def ec_params(self) -> list[np.ndarray]:
        """Backbone and exit-head arrays, in a fixed order."""
        out = []
        for layer in self.backbone:
            out += layer.params()
        for head in self.exit_heads:
            out += head.params()
        return out

    def dc_params(self) -> list[np.ndarray]:
        out = []
        for head in self.unique_deferral_heads():
            out += head.params()
        return out

    def ec_param_names(self) -> list[str]:
        names = []
        for i in range(1, self.n_layers + 1):
            names += [f"backbone[{i}].weights", f"backbone[{i}].bias"]
        for i in range(1, self.n_layers + 1):
            names += [f"exit_head[{i}].weights", f"exit_head[{i}].bias"]
        return names

    def dc_param_names(self) -> list[str]:
        k = len(self.unique_deferral_heads())
        names = []
        for i in range(1, k + 1):
            names += [f"deferral_head[{i}].weights", f"deferral_head[{i}].bias"]
        return names

    # -- forward -----------------------------------------------------------

    def forward_batch(self, X) -> ForwardCache:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.in_width:
            raise ShapeError(
                f"layer 1: feature width {X.shape[1]} does not match model input width {self.in_width}"
            )
        pre, hidden = [], []
        h = X
        m, n = X.shape[0], self.n_layers
        ec_logits = np.empty((m, n, self.n_classes))
        dc_logits = np.empty((m, n))
        for i, layer in enumerate(self.backbone):
            z = linear(layer, h)
            h = activate(z, layer.activation)
            pre.append(z)
            hidden.append(h)
            ec_logits[:, i, :] = linear(self.exit_heads[i], h)
            dc_logits[:, i] = linear(self.deferral_heads[i], h)[:, 0]
        return ForwardCache(X, pre, hidden, ec_logits, dc_logits)

    def scores(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-layer (class probabilities, confidence, hardness) for a batch.

        Shapes are (m, n, C), (m, n), (m, n).
        """
        cache = self.forward_batch(X)
        probs = cache.probs
        return probs, probs.max(axis=2), cache.hardness

    def forward_all(self, x) -> tuple[list[LayerReadout], list[np.ndarray]]:
        """Readouts and hidden states for one sample, one entry per layer."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError("forward_all expects a single feature vector")
        cache = self.forward_batch(x)
        probs = cache.probs[0]
        hard = cache.hardness[0]
        readouts = [
            LayerReadout(i + 1, probs[i], float(probs[i].max()), float(hard[i]))
            for i in range(self.n_layers)
        ]
        return readouts, [h[0] for h in cache.hidden]

    def true_class_probs(self, X, y) -> np.ndarray:
        """P_i(y*|x) for every layer; (n,) for one sample, (m, n) for a batch."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        y = np.atleast_1d(np.asarray(y))
        if np.any((y < 0) | (y >= self.n_classes)) or not np.issubdtype(y.dtype, np.integer):
            raise ValueError(f"labels must be integers in [0, {self.n_classes})")
        probs = self.forward_batch(X).probs
        out = probs[np.arange(probs.shape[0]), :, y]
        return out[0] if single else out

    # -- backward ----------------------------------------------------------

    def backward_ec(self, cache: ForwardCache, d_ec_logits: np.ndarray) -> list[np.ndarray]:
        """Gradients of a loss w.r.t. ``ec_params()`` given dL/d(exit logits).

        ``d_ec_logits`` has shape (m, n, C).
        """
        n = self.n_layers
        g_exit = []
        dh_from_heads = []
        for i in range(n):
            d = d_ec_logits[:, i, :]
            h = cache.hidden[i]
            g_exit.append((d.T @ h, d.sum(axis=0)))
            dh_from_heads.append(d @ self.exit_heads[i].weights)
        g_back = [None] * n
        dh = np.zeros_like(cache.hidden[-1])
        for i in reversed(range(n)):
            layer = self.backbone[i]
            dh = dh + dh_from_heads[i]
            dz = dh * activate_grad(cache.pre[i], cache.hidden[i], layer.activation)
            h_in = cache.x if i == 0 else cache.hidden[i - 1]
            g_back[i] = (dz.T @ h_in, dz.sum(axis=0))
            dh = dz @ layer.weights
        grads = []
        for gw, gb in g_back:
            grads += [gw, gb]
        for gw, gb in g_exit:
            grads += [gw, gb]
        return grads

    def backward_dc(self, cache: ForwardCache, d_dc_logits: np.ndarray) -> list[np.ndarray]:
        """Gradients w.r.t. ``dc_params()`` given dL/d(deferral logits), shape (m, n)."""
        grads_w, grads_b = [], []
        for i in range(self.n_layers):
            d = d_dc_logits[:, i : i + 1]
            grads_w.append(d.T @ cache.hidden[i])
            grads_b.append(d.sum(axis=0))
        if self.shared_dc:
            return [sum(grads_w), sum(grads_b)]
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out += [gw, gb]
        return out

    # -- persistence -------------------------------------------------------

    def checksum(self, part: str = "all") -> str:
        """SHA-256 over raw parameter bytes; ``part`` is 'ec', 'dc' or 'all'."""
        arrays = []
        if part in ("ec", "all"):
            arrays += self.ec_params()
        if part in ("dc", "all"):
            arrays += self.dc_params()
        h = hashlib.sha256()
        for a in arrays:
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()

    def copy(self) -> "MultiExitModel":
        return MultiExitModel.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        def layer_dict(layer):
            return {
                "activation": layer.activation,
                "shape": list(layer.weights.shape),
                "weights": layer.weights.ravel().tolist(),
                "bias": layer.bias.tolist(),
            }

        return {
            "schema": CHECKPOINT_SCHEMA,
            "n_layers": self.n_layers,
            "in_width": self.in_width,
            "hidden_width": self.hidden_width,
            "n_classes": self.n_classes,
            "shared_dc": self.shared_dc,
            "backbone": [layer_dict(l) for l in self.backbone],
            "exit_heads": [layer_dict(l) for l in self.exit_heads],
            "deferral_heads": [layer_dict(l) for l in self.unique_deferral_heads()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MultiExitModel":
        if doc.get("schema") != CHECKPOINT_SCHEMA:
            raise ValueError(f"unsupported checkpoint schema {doc.get('schema')!r}")

        def load(d):
            w = np.array(d["weights"], dtype=np.float64).reshape(d["shape"])
            return DenseLayer(w, np.array(d["bias"], dtype=np.float64), d["activation"])

        backbone = [load(d) for d in doc["backbone"]]
        exits = [load(d) for d in doc["exit_heads"]]
        if doc["shared_dc"]:
            defers = [load(doc["deferral_heads"][0])] * len(backbone)
        else:
            defers = [load(d) for d in doc["deferral_heads"]]
        return cls(backbone, exits, defers, doc["n_classes"], doc["shared_dc"])

    def save(self, path) -> None:
        # json writes floats with repr(), which round-trips float64 exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "MultiExitModel":
        return cls.from_dict(json.loads(Path(path).read_text()))
