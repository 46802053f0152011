"""Desk-scale vision graph neural network: stem, Grapher+FFN blocks, classifier.

The model is a plain container of named weight arrays plus a config. Every
forward pass builds its own tape, and can capture each block's Grapher output
together with its tape node id so gradients at that activation are available
after backward().
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import aggregate_max_relative, aggregate_mean, knn_edges, pairwise_distance
from .tensor import Tape, Tensor

__all__ = [
    "ViGConfig",
    "ViGModel",
    "ActivationCapture",
    "BlockActivation",
    "ConfigError",
    "desk_config",
    "vig_ti_config",
    "init_random",
    "model_forward",
    "grapher_forward",
    "ffn_forward",
    "train_step",
    "softmax",
]


class ConfigError(ValueError):
    """Invalid model configuration or weight/config mismatch."""


@dataclass
class ViGConfig:
    """Architecture description; JSON config files use exactly these field names."""

    input_side: int
    stages: list  # [[block_count, channel_dim, spatial_side], ...]
    k_neighbors: int
    n_heads: int
    n_classes: int
    stem_channels: list
    activation: str = "gelu"
    ffn_hidden_ratio: int = 4
    grapher_residual: bool = True
    static_graph: bool = False
    aggregation: str = "max_relative"  # or "mean"
    degree_inverse_sqrt: bool = True
    capture_post_ffn: bool = False
    positional_embedding: bool = False
    # multiplier on the Xavier-uniform bound; >1 compensates for GELU shrinkage
    # in normalization-free stacks
    init_gain: float = 1.0

    def __post_init__(self):
        self.stages = [tuple(int(v) for v in s) for s in self.stages]
        if not self.stages:
            raise ConfigError("config needs at least one stage")
        if self.activation not in ("gelu", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.aggregation not in ("max_relative", "mean"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        for _, dim, side in self.stages:
            if dim % self.n_heads:
                raise ConfigError(f"channel dim {dim} not divisible by {self.n_heads} heads")
            if (2 * dim) % self.n_heads:
                raise ConfigError(f"2*{dim} not divisible by {self.n_heads} heads")
        for (_, _, a), (_, _, b) in zip(self.stages, self.stages[1:]):
            if a != 2 * b:
                raise ConfigError(f"stage spatial sides must halve, got {a} -> {b}")
        if not self.stem_channels:
            raise ConfigError("stem needs at least one conv")
        if self.stem_channels[-1] != self.stages[0][1]:
            raise ConfigError("last stem channel count must equal the first stage dim")
        grid = self.stages[0][2]
        if self.input_side % grid:
            raise ConfigError(f"input side {self.input_side} not divisible by patch grid {grid}")
        reduction = self.input_side // grid
        if reduction & (reduction - 1):
            raise ConfigError("input side / patch grid must be a power of two")
        if self.k_neighbors < 1 or self.k_neighbors > self.stages[-1][2] ** 2 - 1:
            raise ConfigError(f"k_neighbors={self.k_neighbors} out of range for the smallest stage")

    @property
    def patch_grid(self) -> int:
        return self.stages[0][2]

    def stem_strides(self) -> list:
        """3x3 stem convs: stride-2 convs first until the patch grid is reached."""
        reduction = self.input_side // self.patch_grid
        n_two = reduction.bit_length() - 1
        if n_two > len(self.stem_channels):
            raise ConfigError("not enough stem convs for the requested downsampling")
        return [2] * n_two + [1] * (len(self.stem_channels) - n_two)

    def weight_shapes(self) -> dict:
        """Canonical name -> shape map for every learnable tensor."""
        shapes = {}
        c_prev = 3
        for i, c in enumerate(self.stem_channels):
            shapes[f"stem.conv{i}"] = (c, c_prev, 3, 3)
            shapes[f"stem.conv{i}.bias"] = (c,)
            c_prev = c
        h = self.n_heads
        for s, (blocks, dim, side) in enumerate(self.stages):
            hidden = dim * self.ffn_hidden_ratio
            for b in range(blocks):
                p = f"stage{s}.block{b}."
                shapes[p + "grapher_in"] = (dim, dim)
                for g in range(h):
                    shapes[p + f"grapher_update{g}"] = (2 * dim // h, dim // h)
                shapes[p + "grapher_out"] = (dim, dim)
                shapes[p + "ffn1"] = (dim, hidden)
                shapes[p + "ffn1.bias"] = (hidden,)
                shapes[p + "ffn2"] = (hidden, dim)
                shapes[p + "ffn2.bias"] = (dim,)
            if self.positional_embedding:
                shapes[f"stage{s}.pos_embed"] = (side * side, dim)
            if s + 1 < len(self.stages):
                shapes[f"stage{s}.downsample"] = (self.stages[s + 1][1], dim, 3, 3)
                shapes[f"stage{s}.downsample.bias"] = (self.stages[s + 1][1],)
        shapes["classifier"] = (self.stages[-1][1], self.n_classes)
        shapes["classifier.bias"] = (self.n_classes,)
        return shapes

    def to_dict(self) -> dict:
        return {
            "input_side": self.input_side,
            "stages": [list(s) for s in self.stages],
            "k_neighbors": self.k_neighbors,
            "n_heads": self.n_heads,
            "n_classes": self.n_classes,
            "stem_channels": list(self.stem_channels),
            "activation": self.activation,
            "ffn_hidden_ratio": self.ffn_hidden_ratio,
            "grapher_residual": self.grapher_residual,
            "static_graph": self.static_graph,
            "aggregation": self.aggregation,
            "degree_inverse_sqrt": self.degree_inverse_sqrt,
            "capture_post_ffn": self.capture_post_ffn,
            "positional_embedding": self.positional_embedding,
            "init_gain": self.init_gain,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViGConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def desk_config(**overrides) -> ViGConfig:
    """Default desk-scale model: 32x32 input, two small stages, 4 classes."""
    base = dict(
        input_side=32,
        stages=[[1, 16, 8], [1, 32, 4]],
        k_neighbors=4,
        n_heads=2,
        n_classes=4,
        stem_channels=[8, 16, 16],
        init_gain=1.5,
    )
    base.update(overrides)
    return ViGConfig(**base)


def vig_ti_config(n_classes: int = 1000) -> ViGConfig:
    """The tiny published architecture shape: 224 input, stages ending at 7x7x384."""
    return ViGConfig(
        input_side=224,
        stages=[[2, 48, 56], [2, 96, 28], [6, 240, 14], [2, 384, 7]],
        k_neighbors=9,
        n_heads=4,
        n_classes=n_classes,
        stem_channels=[24, 48, 48],
    )


@dataclass
class ViGModel:
    config: ViGConfig
    weights: dict  # name -> np.ndarray (float32)
    rng_seed: int = 0

    def validate(self):
        expected = self.config.weight_shapes()
        missing = set(expected) - set(self.weights)
        extra = set(self.weights) - set(expected)
        if missing:
            raise ConfigError(f"missing weight tensors: {sorted(missing)}")
        if extra:
            raise ConfigError(f"unknown weight tensors: {sorted(extra)}")
        for name, shape in expected.items():
            if tuple(self.weights[name].shape) != tuple(shape):
                raise ConfigError(
                    f"weight {name!r} has shape {tuple(self.weights[name].shape)}, expected {tuple(shape)}")


@dataclass
class BlockActivation:
    """One block's captured Grapher output, grid-shaped, with its tape node id."""

    stage: int
    block: int
    tensor: Tensor          # (N, D) tracked
    side: int               # W^l == H^l
    channels: int

    def feature_grid(self) -> np.ndarray:
        """(W, H, D) view of the captured features."""
        return self.tensor.data.reshape(self.side, self.side, self.channels)

    def grad_grid(self, grads: dict) -> np.ndarray:
        """(W, H, D) gradient at this activation, from Tape.backward's result."""
        g = grads.get(self.tensor.node_id)
        if g is None:
            g = np.zeros_like(self.tensor.data)
        return np.asarray(g).reshape(self.side, self.side, self.channels)


@dataclass
class ActivationCapture:
    tape: Tape
    records: list = field(default_factory=list)

    def block(self, index: int) -> BlockActivation:
        return self.records[index]

    def __len__(self):
        return len(self.records)


def init_random(config: ViGConfig, seed: int = 0) -> ViGModel:
    """Xavier-uniform init, reproducible from the seed."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in config.weight_shapes().items():
        if name.endswith("pos_embed") or name.endswith(".bias"):
            weights[name] = np.zeros(shape, dtype=np.float32)
            continue
        if len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            fan_out = shape[0] * shape[2] * shape[3]
        else:
            fan_in, fan_out = shape[0], shape[1]
        bound = config.init_gain * np.sqrt(6.0 / (fan_in + fan_out))
        weights[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return ViGModel(config=config, weights=weights, rng_seed=seed)


def _activation(cfg: ViGConfig):
    return T.gelu if cfg.activation == "gelu" else T.relu


def grapher_forward(v: Tensor, weights: dict, cfg: ViGConfig, graph=None) -> Tensor:
    """One Grapher: project in, graph-convolve, nonlinearity, project out, residual.

    ``weights`` maps the short names (grapher_in, grapher_update{h}, grapher_out)
    to tracked weight tensors. If ``graph`` is None it is rebuilt from the
    projected features (dynamic graph).
    """
    act = _activation(cfg)
    n, dim = v.shape
    proj = T.matmul(v, weights["grapher_in"])
    if graph is None:
        graph = knn_edges(pairwise_distance(proj.data), cfg.k_neighbors)
    if cfg.aggregation == "max_relative":
        g = aggregate_max_relative(proj, graph)
    else:
        g = T.concat([proj, aggregate_mean(proj, graph, cfg.degree_inverse_sqrt)], axis=1)
    h = cfg.n_heads
    gw = 2 * dim // h
    parts = [T.matmul(T.narrow(g, 1, i * gw, gw), weights[f"grapher_update{i}"]) for i in range(h)]
    upd = parts[0] if h == 1 else T.concat(parts, axis=1)
    out = T.matmul(act(upd), weights["grapher_out"])
    if cfg.grapher_residual:
        out = T.add(out, v)
    return out


def ffn_forward(y: Tensor, w1: Tensor, w2: Tensor, cfg: ViGConfig,
                b1: Tensor | None = None, b2: Tensor | None = None) -> Tensor:
    act = _activation(cfg)
    h = T.matmul(y, w1)
    if b1 is not None:
        h = T.bias_add(h, b1, axis=1)
    z = T.matmul(act(h), w2)
    if b2 is not None:
        z = T.bias_add(z, b2, axis=1)
    return T.add(z, y)


def _grid_to_vertices(x: Tensor, side: int, dim: int) -> Tensor:
    # (D, W, H) -> (N, D), raster order over the grid
    return T.reshape(T.transpose(x, (1, 2, 0)), (side * side, dim))


def _vertices_to_grid(v: Tensor, side: int, dim: int) -> Tensor:
    return T.transpose(T.reshape(v, (side, side, dim)), (2, 0, 1))


def model_forward(model: ViGModel, image, capture: bool = False,
                  tape: Tape | None = None, weight_nodes: dict | None = None):
    """Run the network; returns (logits Tensor[C], ActivationCapture or None).

    A fresh tape is created unless one is passed in. When ``weight_nodes`` is a
    dict it is filled with name -> tape node id for every weight leaf (used by
    train_step to read weight gradients back).
    """
    cfg = model.config
    if tape is None:
        tape = Tape("single")
    img = np.asarray(image.data if isinstance(image, Tensor) else image)
    if img.shape != (3, cfg.input_side, cfg.input_side):
        raise T.ShapeError(f"expected image of shape (3, {cfg.input_side}, {cfg.input_side}), got {img.shape}")

    def leaf(name):
        t = tape.leaf(model.weights[name])
        if weight_nodes is not None:
            weight_nodes[name] = t.node_id
        return t

    act = _activation(cfg)
    # center [0,1] pixels so biasless early layers see a zero-mean signal
    x = tape.leaf(2.0 * img - 1.0)
    for i, stride in enumerate(cfg.stem_strides()):
        x = T.conv2d(x, leaf(f"stem.conv{i}"), stride=stride, padding=1)
        x = act(T.bias_add(x, leaf(f"stem.conv{i}.bias"), axis=0))

    cap = ActivationCapture(tape=tape) if capture else None
    for s, (blocks, dim, side) in enumerate(cfg.stages):
        v = _grid_to_vertices(x, side, dim)
        if cfg.positional_embedding:
            v = T.add(v, leaf(f"stage{s}.pos_embed"))
        static = None
        if cfg.static_graph:
            static = knn_edges(pairwise_distance(v.data), cfg.k_neighbors)
        for b in range(blocks):
            p = f"stage{s}.block{b}."
            names = {"grapher_in": leaf(p + "grapher_in"),
                     "grapher_out": leaf(p + "grapher_out")}
            for g in range(cfg.n_heads):
                names[f"grapher_update{g}"] = leaf(p + f"grapher_update{g}")
            y = grapher_forward(v, names, cfg, graph=static)
            z = ffn_forward(y, leaf(p + "ffn1"), leaf(p + "ffn2"), cfg,
                            b1=leaf(p + "ffn1.bias"), b2=leaf(p + "ffn2.bias"))
            if cap is not None:
                captured = z if cfg.capture_post_ffn else y
                cap.records.append(BlockActivation(stage=s, block=b, tensor=captured,
                                                   side=side, channels=dim))
            v = z
        x = _vertices_to_grid(v, side, dim)
        if s + 1 < len(cfg.stages):
            x = T.conv2d(x, leaf(f"stage{s}.downsample"), stride=2, padding=1)
            x = act(T.bias_add(x, leaf(f"stage{s}.downsample.bias"), axis=0))

    _, dim, side = cfg.stages[-1][0], cfg.stages[-1][1], cfg.stages[-1][2]
    pooled = T.reduce_mean(_grid_to_vertices(x, side, dim), axes=0)  # (D,)
    logits = T.matmul(T.reshape(pooled, (1, dim)), leaf("classifier"))
    logits = T.reshape(T.bias_add(logits, leaf("classifier.bias"), axis=1), (cfg.n_classes,))
    return logits, cap


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def train_step(model: ViGModel, batch, lr: float, max_grad_norm: float = 10.0) -> float:
    """One SGD step on cross-entropy over a batch of (image, label) pairs.

    The global gradient norm is clipped to max_grad_norm (pass None or 0 to
    disable); normalization-free stacks occasionally spike otherwise.
    """
    cfg = model.config
    grad_acc = {name: np.zeros_like(w, dtype=np.float64) for name, w in model.weights.items()}
    total_loss = 0.0
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    for image, label in batch:
        label = int(label)
        if not 0 <= label < cfg.n_classes:
            raise ValueError(f"label {label} out of range [0, {cfg.n_classes})")
        tape = Tape("single")
        weight_nodes: dict = {}
        logits, _ = model_forward(model, image, capture=False, tape=tape,
                                  weight_nodes=weight_nodes)
        probs = softmax(logits.data)
        total_loss += -float(np.log(max(probs[label], 1e-12)))
        seed = probs.astype(np.float32)
        seed[label] -= 1.0
        grads = tape.backward(logits, seed=seed)
        for name, nid in weight_nodes.items():
            g = grads.get(nid)
            if g is not None:
                grad_acc[name] += g
    if lr != 0.0:
        scale = 1.0 / n
        if max_grad_norm:
            gnorm = scale * np.sqrt(sum(float(np.sum(g * g)) for g in grad_acc.values()))
            if gnorm > max_grad_norm:
                scale *= max_grad_norm / gnorm
        for name in model.weights:
            model.weights[name] = (model.weights[name] - lr * scale * grad_acc[name]).astype(np.float32)
    return total_loss / n


def predict(model: ViGModel, image) -> tuple[int, np.ndarray]:
    """(argmax class, softmax probabilities) without gradient tracking."""
    logits, _ = model_forward(model, image, capture=False)
    p = softmax(logits.data)
    return int(np.argmax(p)), p
