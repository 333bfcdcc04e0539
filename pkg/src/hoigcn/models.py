"""GCN, GCN+GRU and SPGCN classifiers over the skeleton + scene graph."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff.io import dumps_state, loads_state
from .errors import ConfigError, ShapeError, StateError
from .graph import Adjacency, GraphSpec, model_adjacency

ARCHS = ("gcn", "gcn_gru", "spgcn")


@dataclass(frozen=True)
class GcnBlockConfig:
    out_channels: int
    stride: int = 1
    depth: int = 1
    temporal_kernel: int = 5

    def __post_init__(self):
        if self.stride not in (1, 2) or self.depth < 1 or self.out_channels < 1:
            raise ConfigError(f"invalid block config {self}")
        if self.temporal_kernel % 2 == 0:
            raise ConfigError(f"temporal kernel must be odd, got {self.temporal_kernel}")


DEFAULT_BLOCKS = (
    GcnBlockConfig(64, stride=1, depth=3),
    GcnBlockConfig(128, stride=2, depth=1),
    GcnBlockConfig(256, stride=2, depth=1),
)


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "gcn_gru"
    blocks: tuple[GcnBlockConfig, ...] = DEFAULT_BLOCKS
    gru_layers: int = 3
    gru_hidden: int = 256
    num_classes: int = 4
    multi_task: bool = False
    with_objects: bool = True
    link_mode: str = "full_links"
    dropout: float = 0.25
    in_channels: int = 2
    dtype: str = "float64"
    seed: int = 0
    # explicit normalized adjacency rows; overrides the graph spec when set
    adjacency: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.num_classes != 4:
            raise ConfigError("num_classes is fixed at 4")
        if self.in_channels != 2:
            raise ConfigError("inputs carry exactly 2 channels (x, y)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        object.__setattr__(self, "blocks", tuple(
            b if isinstance(b, GcnBlockConfig) else GcnBlockConfig(**b) for b in self.blocks))
        if self.adjacency is not None:
            object.__setattr__(self, "adjacency", tuple(tuple(float(v) for v in row) for row in self.adjacency))

    @property
    def graph_spec(self) -> GraphSpec:
        return GraphSpec.make(self.with_objects, self.link_mode)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [asdict(b) for b in self.blocks]
        d["adjacency"] = None if self.adjacency is None else [list(r) for r in self.adjacency]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# --------------------------------------------------------------- layer ops


def gcn_spatial_layer(x: ad.Tensor, adjacency: Adjacency, w: ad.Tensor) -> ad.Tensor:
    """Per-frame ``X'[:, t, :] = W^T X[:, t, :] A`` on ``[B, C, T, V]`` input."""
    if not adjacency.normalized:
        raise StateError("graph convolution needs a normalized adjacency")
    return ad.graph_conv(x, w, adjacency.matrix)


def _gru_update(gx: ad.Tensor, h: ad.Tensor, u_zr: ad.Tensor, u_h: ad.Tensor, hidden: int) -> ad.Tensor:
    gh = ad.matmul(h, u_zr)
    z = ad.sigmoid(ad.narrow(gx, 1, 0, hidden) + ad.narrow(gh, 1, 0, hidden))
    r = ad.sigmoid(ad.narrow(gx, 1, hidden, 2 * hidden) + ad.narrow(gh, 1, hidden, 2 * hidden))
    cand = ad.tanh(ad.narrow(gx, 1, 2 * hidden, 3 * hidden) + ad.matmul(r * h, u_h))
    return h + z * (cand - h)


def gru_cell_step(x_t: ad.Tensor, h_prev: ad.Tensor, w_ih: ad.Tensor, w_hh: ad.Tensor,
                  b: ad.Tensor) -> ad.Tensor:
    """One GRU step with gates packed as columns ``[z | r | candidate]``.

    ``z = sig(x Wz + h Uz + bz)``, ``r = sig(x Wr + h Ur + br)``,
    ``c = tanh(x Wh + (r*h) Uh + bh)``, ``h' = (1 - z) h + z c``.
    Accepts ``[D]``/``[H]`` vectors or row batches ``[N, D]``/``[N, H]``.
    """
    vector = x_t.ndim == 1
    if vector:
        x_t = ad.reshape(x_t, (1, -1))
        h_prev = ad.reshape(h_prev, (1, -1))
    hidden = h_prev.shape[1]
    if w_ih.shape != (x_t.shape[1], 3 * hidden) or w_hh.shape != (hidden, 3 * hidden) or b.shape != (3 * hidden,):
        raise ShapeError("GRU weights do not match input/hidden sizes")
    gx = ad.linear(x_t, w_ih, b)
    h = _gru_update(gx, h_prev, ad.narrow(w_hh, 1, 0, 2 * hidden), ad.narrow(w_hh, 1, 2 * hidden, 3 * hidden), hidden)
    return ad.reshape(h, (-1,)) if vector else h


def gru_sequence(x: ad.Tensor, w_ih: ad.Tensor, w_hh: ad.Tensor, b: ad.Tensor,
                 fused: bool = True) -> ad.Tensor:
    """Run a GRU over ``x`` [N, T, D] from a zero state; returns all states [N, T, H].

    ``fused=False`` steps the composed cell op by op (slow, used as a cross-check).
    """
    n, t, d = x.shape
    hidden = w_hh.shape[0]
    gx_all = ad.reshape(ad.linear(ad.reshape(x, (n * t, d)), w_ih, b), (n, t, 3 * hidden))
    if fused:
        return ad.gru_scan(gx_all, w_hh)
    u_zr = ad.narrow(w_hh, 1, 0, 2 * hidden)
    u_h = ad.narrow(w_hh, 1, 2 * hidden, 3 * hidden)
    h = ad.Tensor(np.zeros((n, hidden), dtype=x.dtype))
    states = []
    for step in range(t):
        h = _gru_update(ad.select(gx_all, 1, step), h, u_zr, u_h, hidden)
        states.append(h)
    return ad.stack(states, axis=1)


def per_node_gru(x: ad.Tensor, w_ih: ad.Tensor, w_hh: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Shared-weight GRU along frames for every node; ``[B, C, T, V]`` in and out."""
    bsz, c, t, v = x.shape
    hidden = w_hh.shape[0]
    seq = ad.reshape(ad.transpose(x, (0, 3, 2, 1)), (bsz * v, t, c))
    states = gru_sequence(seq, w_ih, w_hh, b)
    return ad.transpose(ad.reshape(states, (bsz, v, t, hidden)), (0, 3, 2, 1))


# ------------------------------------------------------------------- model


class GraphModel:
    """Parameters, buffers and forward pass for one architecture."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        if config.adjacency is not None:
            self.adjacency = Adjacency(np.asarray(config.adjacency, dtype=np.float64), normalized=True)
        else:
            self.adjacency = model_adjacency(config.graph_spec)
        self.params: dict[str, ad.Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True
        self.trace: list[tuple[int, ...]] = []
        self._rng = np.random.default_rng(config.seed)
        self._init_params()
        self._dropout_rng = np.random.default_rng([config.seed, 1])

    # ---------------------------------------------------------------- setup

    def _param(self, name: str, shape: Sequence[int], fan_in: int | None) -> ad.Parameter:
        if fan_in is None:
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            data = self._rng.uniform(-bound, bound, size=shape)
        p = ad.Parameter(data.astype(self.dtype), name)
        self.params[name] = p
        return p

    def _bn(self, name: str, channels: int) -> None:
        self.params[f"{name}.weight"] = ad.Parameter(np.ones(channels, dtype=self.dtype), f"{name}.weight")
        self.params[f"{name}.bias"] = ad.Parameter(np.zeros(channels, dtype=self.dtype), f"{name}.bias")
        self.buffers[f"{name}.running_mean"] = np.zeros(channels, dtype=self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(channels, dtype=self.dtype)

    def _gru(self, name: str, d: int, h: int) -> None:
        self._param(f"{name}.weight_ih", (d, 3 * h), d)
        self._param(f"{name}.weight_hh", (h, 3 * h), h)
        self._param(f"{name}.bias", (3 * h,), None)

    def _init_params(self) -> None:
        cfg = self.config
        c_in = cfg.in_channels
        for bi, block in enumerate(cfg.blocks, start=1):
            for li in range(block.depth):
                pre = f"block{bi}.layer{li}"
                src = c_in if li == 0 else block.out_channels
                k = block.temporal_kernel
                self._param(f"{pre}.spatial.weight", (src, block.out_channels), src)
                self._bn(f"{pre}.spatial_bn", block.out_channels)
                self._param(f"{pre}.temporal.weight", (block.out_channels, block.out_channels, k),
                            block.out_channels * k)
                self._bn(f"{pre}.temporal_bn", block.out_channels)
            if cfg.arch == "gcn_gru":
                self._gru(f"block{bi}.gru", block.out_channels, block.out_channels)
            c_in = block.out_channels
        features = c_in
        if cfg.arch == "spgcn":
            d = c_in
            for li in range(cfg.gru_layers):
                self._gru(f"head.gru{li}", d, cfg.gru_hidden)
                d = cfg.gru_hidden
            self._bn("head.bn", cfg.gru_hidden)
            features = cfg.gru_hidden
        self._param("action_head.weight", (features, cfg.num_classes), features)
        self._param("action_head.bias", (cfg.num_classes,), None)
        if cfg.multi_task:
            self._param("group_head.weight", (features, 2), features)
            self._param("group_head.bias", (2,), None)

    # ---------------------------------------------------------------- modes

    def train(self) -> "GraphModel":
        self.training = True
        return self

    def eval(self) -> "GraphModel":
        self.training = False
        return self

    def parameters(self) -> list[ad.Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @property
    def num_nodes(self) -> int:
        return self.adjacency.num_nodes

    # -------------------------------------------------------------- forward

    def _batch_norm(self, x: ad.Tensor, name: str) -> ad.Tensor:
        return ad.batch_norm(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"],
                             self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
                             training=self.training)

    def gcn_block(self, x: ad.Tensor, index: int) -> ad.Tensor:
        block = self.config.blocks[index - 1]
        for li in range(block.depth):
            pre = f"block{index}.layer{li}"
            stride = block.stride if li == block.depth - 1 else 1
            x = gcn_spatial_layer(x, self.adjacency, self.params[f"{pre}.spatial.weight"])
            x = ad.relu(self._batch_norm(x, f"{pre}.spatial_bn"))
            x = ad.temporal_conv1d(x, self.params[f"{pre}.temporal.weight"], stride)
            x = ad.relu(self._batch_norm(x, f"{pre}.temporal_bn"))
        return x

    def _gru_params(self, name):
        return (self.params[f"{name}.weight_ih"], self.params[f"{name}.weight_hh"], self.params[f"{name}.bias"])

    def forward(self, x, rng: np.random.Generator | None = None) -> tuple[ad.Tensor, ad.Tensor | None]:
        """Action logits [B, 4] and, for multi-task models, group logits [B, 2]."""
        if not isinstance(x, ad.Tensor):
            x = ad.Tensor(np.asarray(x, dtype=self.dtype))
        elif x.dtype != self.dtype:
            x = ad.Tensor(x.data.astype(self.dtype))
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected input [B, 2, T, V], got {x.shape}")
        if x.shape[3] != self.num_nodes:
            raise ShapeError(f"model expects {self.num_nodes} nodes, sample has {x.shape[3]}")
        cfg = self.config
        self.trace = [x.shape[1:]]
        for bi in range(1, len(cfg.blocks) + 1):
            x = self.gcn_block(x, bi)
            if cfg.arch == "gcn_gru":
                x = per_node_gru(x, *self._gru_params(f"block{bi}.gru"))
            self.trace.append(x.shape[1:])
        if cfg.arch == "spgcn":
            seq = ad.transpose(ad.mean(x, axis=3), (0, 2, 1))  # [B, T', C]
            for li in range(cfg.gru_layers):
                seq = gru_sequence(seq, *self._gru_params(f"head.gru{li}"))
            feat = ad.select(seq, 1, seq.shape[1] - 1)
            feat = self._batch_norm(feat, "head.bn")
            feat = ad.dropout(feat, cfg.dropout, rng if rng is not None else self._dropout_rng, self.training)
        else:
            feat = ad.mean(x, axis=(2, 3))
        action = ad.linear(feat, self.params["action_head.weight"], self.params["action_head.bias"])
        group = None
        if cfg.multi_task:
            group = ad.linear(feat, self.params["group_head.weight"], self.params["group_head.bias"])
        return action, group

    __call__ = forward

    # ------------------------------------------------------------ inference

    def logits(self, x: np.ndarray, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray | None]:
        actions, groups = [], []
        with ad.no_grad():
            for start in range(0, len(x), batch_size):
                a, g = self.forward(x[start:start + batch_size])
                actions.append(a.data)
                if g is not None:
                    groups.append(g.data)
        return np.concatenate(actions), (np.concatenate(groups) if groups else None)

    def predict(self, x: np.ndarray, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray | None]:
        """Action labels 1..4 (argmax, lowest index wins ties) and group labels 0..1."""
        if self.training:
            raise StateError("predict needs an eval-mode model")
        a, g = self.logits(x, batch_size)
        return predict_from_logits(a, g)

    # -------------------------------------------------------- serialization

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        items = [(n, p.data) for n, p in self.params.items()]
        items += list(self.buffers.items())
        return items

    def to_json(self, extra: dict | None = None) -> str:
        config = self.config.to_dict()
        if extra:
            config["train"] = extra
        return dumps_state(config, self.state_tensors())

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        Path(path).write_text(self.to_json(extra))

    @classmethod
    def from_json(cls, text: str) -> "GraphModel":
        config, arrays = loads_state(text)
        config = dict(config)
        config.pop("train", None)
        model = cls(ModelConfig.from_dict(config))
        expected = {n for n, _ in model.state_tensors()}
        if set(arrays) != expected:
            raise ConfigError(f"model file tensors do not match config: {sorted(set(arrays) ^ expected)[:5]}")
        for name, arr in arrays.items():
            arr = arr.astype(model.dtype)
            if name in model.params:
                if arr.shape != model.params[name].shape:
                    raise ConfigError(f"shape mismatch for {name}")
                model.params[name].data = arr
            else:
                model.buffers[name][...] = arr
        return model.eval()

    @classmethod
    def load(cls, path: str | Path) -> "GraphModel":
        return cls.from_json(Path(path).read_text())


def predict_from_logits(action: np.ndarray, group: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None]:
    labels = np.argmax(action, axis=1) + 1
    groups = None if group is None else np.argmax(group, axis=1)
    return labels, groups


def build_model(arch: str, **overrides) -> GraphModel:
    return GraphModel(ModelConfig(arch=arch, **overrides))


def downsized_config(arch: str, adjacency: np.ndarray, multi_task: bool = True, **kw) -> ModelConfig:
    """Small model for gradient checks: channels 4/8/16 on a custom graph."""
    blocks = (GcnBlockConfig(4, 1, 3), GcnBlockConfig(8, 2, 1), GcnBlockConfig(16, 2, 1))
    return ModelConfig(arch=arch, blocks=blocks, gru_hidden=kw.pop("gru_hidden", 6), multi_task=multi_task,
                       adjacency=tuple(map(tuple, np.asarray(adjacency))), **kw)
