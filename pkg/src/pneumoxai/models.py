"""CNN block families, preset networks, and weight checkpointing.

Two block families are provided: densely connected blocks with
compression/pooling transitions, and inverted-bottleneck blocks with a
squeeze-and-excitation gate. Presets are deliberately small so a full
train/explain cycle runs on a desktop CPU; the block mathematics matches
the full-size architectures they are modeled on.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, ShapeMismatchError
from .tensor import Tensor

CHECKPOINT_VERSION = 1
_MAGIC = b"PXAI"


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1


@dataclass(frozen=True)
class DenseBlock:
    growth_rate: int
    num_layers: int

    def __post_init__(self):
        if self.growth_rate < 1 or self.num_layers < 0:
            raise ConfigError("DenseBlock needs growth_rate >= 1 and num_layers >= 0")


@dataclass(frozen=True)
class Transition:
    compression: float

    def __post_init__(self):
        if not 0 < self.compression <= 1:
            raise ConfigError("Transition compression must be in (0, 1]")


@dataclass(frozen=True)
class MBConv:
    out_channels: int
    expansion: int = 4
    se_ratio: float = 0.25
    stride: int = 1

    def __post_init__(self):
        if self.expansion < 1 or not 0 < self.se_ratio <= 1:
            raise ConfigError("MBConv needs expansion >= 1 and se_ratio in (0, 1]")


@dataclass(frozen=True)
class Head:
    pass


_VARIANTS = {
    "conv": ConvBlock,
    "dense_block": DenseBlock,
    "transition": Transition,
    "mbconv": MBConv,
    "head": Head,
}


@dataclass(frozen=True)
class NetworkSpec:
    blocks: tuple  # ordered (name, block) pairs
    input_shape: tuple  # (C, H, W)
    gradcam_target: str
    preset: str | None = None

    def __post_init__(self):
        names = [n for n, _ in self.blocks]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate block names in spec")
        if self.gradcam_target not in names:
            raise ConfigError(
                f"gradcam target {self.gradcam_target!r} is not a block name"
            )
        if not self.blocks or not isinstance(self.blocks[-1][1], Head):
            raise ConfigError("spec must end with a Head block")

    def to_json(self):
        blocks = []
        for name, blk in self.blocks:
            kind = next(k for k, cls in _VARIANTS.items() if isinstance(blk, cls))
            blocks.append({"name": name, "kind": kind, **blk.__dict__})
        return {
            "blocks": blocks,
            "input_shape": list(self.input_shape),
            "gradcam_target": self.gradcam_target,
            "preset": self.preset,
        }

    @staticmethod
    def from_json(doc):
        blocks = []
        for b in doc["blocks"]:
            b = dict(b)
            cls = _VARIANTS[b.pop("kind")]
            name = b.pop("name")
            blocks.append((name, cls(**b)))
        return NetworkSpec(
            blocks=tuple(blocks),
            input_shape=tuple(doc["input_shape"]),
            gradcam_target=doc["gradcam_target"],
            preset=doc.get("preset"),
        )


def preset_spec(name):
    """Build the NetworkSpec for a shipped preset."""
    if name == "mini-dense":
        blocks = (
            ("stem", ConvBlock(16, kernel=4, stride=2, padding=1)),
            ("dense1", DenseBlock(growth_rate=8, num_layers=4)),
            ("trans1", Transition(compression=0.5)),
            ("dense2", DenseBlock(growth_rate=8, num_layers=4)),
            ("head", Head()),
        )
        return NetworkSpec(blocks, (3, 64, 64), "dense2", preset=name)
    if name == "mini-effnet":
        blocks = (
            ("stem", ConvBlock(16, kernel=4, stride=2, padding=1)),
            ("mb1", MBConv(16, expansion=4, se_ratio=0.25, stride=1)),
            ("mb2", MBConv(24, expansion=4, se_ratio=0.25, stride=2)),
            ("mb3", MBConv(24, expansion=4, se_ratio=0.25, stride=1)),
            ("top", ConvBlock(48, kernel=1, stride=1, padding=0)),
            ("head", Head()),
        )
        return NetworkSpec(blocks, (3, 64, 64), "top", preset=name)
    if name == "micro-dense":
        blocks = (
            ("stem", ConvBlock(4, kernel=4, stride=2, padding=1)),
            ("dense1", DenseBlock(growth_rate=2, num_layers=2)),
            ("trans1", Transition(compression=0.5)),
            ("head", Head()),
        )
        return NetworkSpec(blocks, (3, 16, 16), "dense1", preset=name)
    raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")


PRESETS = ("mini-dense", "mini-effnet", "micro-dense")


# ---------------------------------------------------------------------------
# shape chaining


def _block_out_shape(name, blk, shape):
    c, h, w = shape
    if isinstance(blk, ConvBlock):
        if (h + 2 * blk.padding - blk.kernel) % blk.stride or (
            w + 2 * blk.padding - blk.kernel
        ) % blk.stride:
            raise ShapeMismatchError(
                f"block {name!r}: conv output extent not integral for input {h}x{w}"
            )
        ho = (h + 2 * blk.padding - blk.kernel) // blk.stride + 1
        wo = (w + 2 * blk.padding - blk.kernel) // blk.stride + 1
        return (blk.out_channels, ho, wo)
    if isinstance(blk, DenseBlock):
        return (c + blk.num_layers * blk.growth_rate, h, w)
    if isinstance(blk, Transition):
        if h % 2 or w % 2:
            raise ShapeMismatchError(
                f"block {name!r}: transition needs even extents, got {h}x{w}"
            )
        return (int(blk.compression * c), h // 2, w // 2)
    if isinstance(blk, MBConv):
        if blk.stride == 1:
            return (blk.out_channels, h, w)
        # stride 2 downsamples with a 2x2 average pool after the depthwise
        # conv, so extents halve exactly
        if h % 2 or w % 2:
            raise ShapeMismatchError(
                f"block {name!r}: stride-2 block needs even extents, got {h}x{w}"
            )
        return (blk.out_channels, h // 2, w // 2)
    if isinstance(blk, Head):
        return (1,)
    raise ConfigError(f"unknown block variant {blk!r}")


def symbolic_shapes(spec):
    """Chain block output shapes without running a forward pass."""
    shape = spec.input_shape
    out = []
    for name, blk in spec.blocks:
        shape = _block_out_shape(name, blk, shape)
        out.append((name, shape))
    return out


# ---------------------------------------------------------------------------
# parameter initialization


def _he_conv(rng, o, cg, k):
    std = math.sqrt(2.0 / (cg * k * k))
    return (rng.standard_normal((o, cg, k, k)) * std).astype(np.float32)


def _he_dense(rng, fan_in, fan_out):
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal((fan_in, fan_out)) * std).astype(np.float32)


class Network:
    """A built block graph: spec + named parameters + activation cache."""

    def __init__(self, spec, params, buffers):
        self.spec = spec
        self.params = params  # name -> Tensor (requires_grad)
        self.buffers = buffers  # name -> ndarray (running stats)
        self.activations = {}  # block name -> Tensor, from the last forward

    # -- parameter plumbing

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def param_vector(self):
        return np.concatenate([self.params[k].data.ravel() for k in sorted(self.params)])

    def state_copy(self):
        return (
            {k: v.data.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def load_state(self, state):
        params, buffers = state
        for k, v in params.items():
            self.params[k].data[...] = v
        for k, v in buffers.items():
            self.buffers[k][...] = v

    # -- forward

    def forward(self, x, training=False):
        """Run the block graph; returns per-sample positive-class probability (N,)."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeMismatchError(
                f"input shape {tuple(x.shape[1:])} != spec input {self.spec.input_shape}"
            )
        self.activations = {}
        out = x
        for name, blk in self.spec.blocks:
            out = self._forward_block(name, blk, out, training)
            self.activations[name] = out
        return out

    def _forward_block(self, name, blk, x, training):
        P, B = self.params, self.buffers
        if isinstance(blk, ConvBlock):
            y = T.conv2d(x, P[f"{name}.w"], P[f"{name}.b"], stride=blk.stride, padding=blk.padding)
            y = T.batchnorm2d(y, P[f"{name}.gamma"], P[f"{name}.beta"],
                              B[f"{name}.rm"], B[f"{name}.rv"], training)
            return T.relu(y)
        if isinstance(blk, DenseBlock):
            feats = x
            for i in range(blk.num_layers):
                p = f"{name}.l{i}"
                y = T.batchnorm2d(feats, P[f"{p}.gamma"], P[f"{p}.beta"],
                                  B[f"{p}.rm"], B[f"{p}.rv"], training)
                y = T.relu(y)
                y = T.conv2d(y, P[f"{p}.w"], P[f"{p}.b"], stride=1, padding=1)
                feats = T.concat_channels([feats, y])
            return feats
        if isinstance(blk, Transition):
            y = T.batchnorm2d(x, P[f"{name}.gamma"], P[f"{name}.beta"],
                              B[f"{name}.rm"], B[f"{name}.rv"], training)
            y = T.conv2d(y, P[f"{name}.w"], P[f"{name}.b"], stride=1, padding=0)
            return T.pool2d(y, "avg", window=2, stride=2)
        if isinstance(blk, MBConv):
            return self._forward_mbconv(name, blk, x, training)
        if isinstance(blk, Head):
            pooled = T.pool2d(x, "global_avg")
            flat = T.reshape(pooled, (x.shape[0], x.shape[1]))
            logit = T.dense(flat, P[f"{name}.w"], P[f"{name}.b"])
            prob = T.sigmoid(logit)
            return T.reshape(prob, (x.shape[0],))
        raise ConfigError(f"unknown block variant {blk!r}")

    def _forward_mbconv(self, name, blk, x, training):
        P, B = self.params, self.buffers
        c = x.shape[1]
        e = blk.expansion * c
        y = T.conv2d(x, P[f"{name}.expand.w"], P[f"{name}.expand.b"])
        y = T.batchnorm2d(y, P[f"{name}.bn1.gamma"], P[f"{name}.bn1.beta"],
                          B[f"{name}.bn1.rm"], B[f"{name}.bn1.rv"], training)
        y = T.relu(y)
        y = T.conv2d(y, P[f"{name}.dw.w"], P[f"{name}.dw.b"], padding=1, groups=e)
        if blk.stride == 2:
            y = T.pool2d(y, "avg", window=2, stride=2)
        y = T.batchnorm2d(y, P[f"{name}.bn2.gamma"], P[f"{name}.bn2.beta"],
                          B[f"{name}.bn2.rm"], B[f"{name}.bn2.rv"], training)
        y = T.relu(y)
        # squeeze-and-excitation gate
        squeezed = T.reshape(T.pool2d(y, "global_avg"), (y.shape[0], e))
        se = T.dense(squeezed, P[f"{name}.se1.w"], P[f"{name}.se1.b"])
        se = T.relu(se)
        se = T.dense(se, P[f"{name}.se2.w"], P[f"{name}.se2.b"])
        se = T.sigmoid(se)
        y = T.scale_channels(y, se)
        y = T.conv2d(y, P[f"{name}.project.w"], P[f"{name}.project.b"])
        y = T.batchnorm2d(y, P[f"{name}.bn3.gamma"], P[f"{name}.bn3.beta"],
                          B[f"{name}.bn3.rm"], B[f"{name}.bn3.rv"], training)
        if blk.stride == 1 and blk.out_channels == c:
            y = T.add(y, x)
        return y


def _init_bn(params, buffers, prefix, c):
    params[f"{prefix}.gamma"] = Tensor(np.ones(c, dtype=np.float32), requires_grad=True)
    params[f"{prefix}.beta"] = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)
    buffers[f"{prefix}.rm"] = np.zeros(c, dtype=np.float32)
    buffers[f"{prefix}.rv"] = np.ones(c, dtype=np.float32)


def build_network(spec, rng=None, seed=0):
    """Initialize all parameters for a spec; deterministic given the seed."""
    if isinstance(spec, str):
        spec = preset_spec(spec)
    if rng is None:
        rng = np.random.default_rng(seed)
    symbolic_shapes(spec)  # raises on any shape-chain break before allocating
    params, buffers = {}, {}
    shape = spec.input_shape
    for name, blk in spec.blocks:
        c = shape[0]
        if isinstance(blk, ConvBlock):
            params[f"{name}.w"] = Tensor(_he_conv(rng, blk.out_channels, c, blk.kernel), requires_grad=True)
            params[f"{name}.b"] = Tensor(np.zeros(blk.out_channels, dtype=np.float32), requires_grad=True)
            _init_bn(params, buffers, name, blk.out_channels)
        elif isinstance(blk, DenseBlock):
            ci = c
            for i in range(blk.num_layers):
                p = f"{name}.l{i}"
                _init_bn(params, buffers, p, ci)
                params[f"{p}.w"] = Tensor(_he_conv(rng, blk.growth_rate, ci, 3), requires_grad=True)
                params[f"{p}.b"] = Tensor(np.zeros(blk.growth_rate, dtype=np.float32), requires_grad=True)
                ci += blk.growth_rate
        elif isinstance(blk, Transition):
            co = int(blk.compression * c)
            _init_bn(params, buffers, name, c)
            params[f"{name}.w"] = Tensor(_he_conv(rng, co, c, 1), requires_grad=True)
            params[f"{name}.b"] = Tensor(np.zeros(co, dtype=np.float32), requires_grad=True)
        elif isinstance(blk, MBConv):
            e = blk.expansion * c
            se_hidden = max(1, math.ceil(e * blk.se_ratio))
            params[f"{name}.expand.w"] = Tensor(_he_conv(rng, e, c, 1), requires_grad=True)
            params[f"{name}.expand.b"] = Tensor(np.zeros(e, dtype=np.float32), requires_grad=True)
            _init_bn(params, buffers, f"{name}.bn1", e)
            params[f"{name}.dw.w"] = Tensor(_he_conv(rng, e, 1, 3), requires_grad=True)
            params[f"{name}.dw.b"] = Tensor(np.zeros(e, dtype=np.float32), requires_grad=True)
            _init_bn(params, buffers, f"{name}.bn2", e)
            params[f"{name}.se1.w"] = Tensor(_he_dense(rng, e, se_hidden), requires_grad=True)
            params[f"{name}.se1.b"] = Tensor(np.zeros(se_hidden, dtype=np.float32), requires_grad=True)
            params[f"{name}.se2.w"] = Tensor(_he_dense(rng, se_hidden, e), requires_grad=True)
            params[f"{name}.se2.b"] = Tensor(np.zeros(e, dtype=np.float32), requires_grad=True)
            params[f"{name}.project.w"] = Tensor(_he_conv(rng, blk.out_channels, e, 1), requires_grad=True)
            params[f"{name}.project.b"] = Tensor(np.zeros(blk.out_channels, dtype=np.float32), requires_grad=True)
            _init_bn(params, buffers, f"{name}.bn3", blk.out_channels)
        elif isinstance(blk, Head):
            params[f"{name}.w"] = Tensor(_he_dense(rng, c, 1), requires_grad=True)
            params[f"{name}.b"] = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
        shape = _block_out_shape(name, blk, shape)
    return Network(spec, params, buffers)


def parameter_count(network):
    return int(sum(p.data.size for p in network.params.values()))


# ---------------------------------------------------------------------------
# checkpointing
#
# Layout: 4-byte magic, 4-byte little-endian header length, UTF-8 JSON
# header, then the raw little-endian float32 payload. The header lists
# every parameter and buffer with shape and byte offset, so files are
# inspectable and loads are bit-exact.


def save_checkpoint(network, path):
    entries = []
    chunks = []
    offset = 0
    for section, items in (
        ("params", {k: v.data for k, v in network.params.items()}),
        ("buffers", network.buffers),
    ):
        for name in sorted(items):
            arr = np.ascontiguousarray(items[name], dtype=np.float32)
            raw = arr.astype("<f4").tobytes()
            entries.append(
                {"section": section, "name": name, "shape": list(arr.shape), "offset": offset}
            )
            chunks.append(raw)
            offset += len(raw)
    header = json.dumps(
        {
            "format_version": CHECKPOINT_VERSION,
            "spec": network.spec.to_json(),
            "entries": entries,
            "payload_bytes": offset,
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for c in chunks:
            f.write(c)


def load_checkpoint(path, expected_spec=None):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8 : 8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {header.get('format_version')} "
            f"!= supported {CHECKPOINT_VERSION}"
        )
    payload = blob[8 + hlen :]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"truncated checkpoint: {len(payload)} payload bytes, "
            f"expected {header['payload_bytes']}"
        )
    spec = NetworkSpec.from_json(header["spec"])
    if expected_spec is not None and expected_spec.to_json() != header["spec"]:
        raise CheckpointError("checkpoint spec does not match the expected spec")
    net = build_network(spec, rng=np.random.default_rng(0))
    known = {("params", k) for k in net.params} | {("buffers", k) for k in net.buffers}
    seen = set()
    for e in header["entries"]:
        key = (e["section"], e["name"])
        if key not in known:
            raise CheckpointError(f"unknown parameter in checkpoint: {e['name']}")
        target = net.params[e["name"]].data if e["section"] == "params" else net.buffers[e["name"]]
        if list(target.shape) != e["shape"]:
            raise CheckpointError(
                f"shape mismatch for {e['name']}: file {e['shape']}, spec {list(target.shape)}"
            )
        nbytes = int(np.prod(e["shape"]) * 4) if e["shape"] else 4
        raw = payload[e["offset"] : e["offset"] + nbytes]
        target[...] = np.frombuffer(raw, dtype="<f4").reshape(target.shape)
        seen.add(key)
    missing = known - seen
    if missing:
        raise CheckpointError(f"checkpoint missing parameter: {sorted(missing)[0][1]}")
    return net
