"""Rotation-equivariant encoder-decoder network with hand-rolled reverse mode.

The layer chain starts with a single S2 correlation that lifts the input to
SO(3) while reducing the bandwidth; the encoder alternates SO(3) correlations
(PReLU + per-channel batch norm after every correlation) with spectral
pooling, the last encoder block adding dropout.  The decoder unpools, concats
the encoder activation of matching bandwidth, and correlates again; the head
zero-pads the spectrum back to the input bandwidth and integrates out the
gamma axis, producing per-class logits on the input S2 grid (softmax is left
to callers).

Gradients come from per-layer adjoint routines recorded on a
:class:`GradientTape`; every adjoint is validated against central finite
differences in the test suite.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import serialize
from .engine import (
    pool_half_bwd,
    pool_half_fwd,
    s2_conv_half_bwd,
    s2_conv_half_fwd,
    so3_conv_half_bwd,
    so3_conv_half_fwd,
    unpool_half_bwd,
    unpool_half_fwd,
)
from .errors import (
    BandwidthTooSmall,
    MalformedFile,
    NonFiniteActivation,
    ShapeMismatch,
    TapeMismatch,
)
from .projection import SphericalScan, scan_to_input
from .spectral_ops import S2KernelBank, SO3KernelBank, integrate_gamma_bwd, integrate_gamma_fwd
from .sphere import S2Signal, make_s2_grid

__all__ = [
    "LayerSpec",
    "SegNet",
    "GradientTape",
    "TrainState",
    "forward",
    "backward",
    "default_architecture",
    "build_network",
    "save_checkpoint",
    "load_checkpoint",
]

KINDS = (
    "s2conv",
    "so3conv",
    "pool",
    "unpool",
    "prelu",
    "batchnorm",
    "dropout",
    "skipconcat",
    "finalpad",
    "integrate",
)

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1
_PRELU_INIT = 0.25


@dataclass
class LayerSpec:
    """Declarative description of one layer in the chain."""

    kind: str
    in_channels: int
    out_channels: int
    bw_in: int
    bw_out: int
    dropout_rate: float = 0.0
    skip_source: int | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "bw_in": self.bw_in,
            "bw_out": self.bw_out,
            "dropout_rate": self.dropout_rate,
            "skip_source": self.skip_source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


class _Layer:
    """Uniform layer interface: forward/backward with an explicit cache."""

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def init_params(self, rng: np.random.Generator, dtype):
        pass

    def forward(self, x, mode, rng, cache):
        raise NotImplementedError

    def backward(self, gy, cache, grads):
        raise NotImplementedError


class _S2ConvLayer(_Layer):
    def __init__(self, spec):
        super().__init__(spec)
        self.bank: S2KernelBank | None = None
        self._dense = None
        self._dense_version = -1
        self.net = None

    def init_params(self, rng, dtype):
        self.bank = S2KernelBank.random(
            self.spec.out_channels, self.spec.in_channels, self.spec.bw_in, rng, dtype
        )
        self.params = {"re": self.bank.re, "im": self.bank.im}

    def _dense_kernels(self):
        if self._dense is None or self._dense_version != self.net.param_version:
            self.bank.re = self.params["re"]
            self.bank.im = self.params["im"]
            self._dense = self.bank.expand()
            self._dense_version = self.net.param_version
        return self._dense

    def forward(self, x, mode, rng, cache):
        y, xh = s2_conv_half_fwd(x, self._dense_kernels(), self.spec.bw_in, self.spec.bw_out)
        cache["xh"] = xh
        return y

    def backward(self, gy, cache, grads):
        gx, gdense = s2_conv_half_bwd(
            gy, self._dense_kernels(), cache["xh"], self.spec.bw_in, self.spec.bw_out
        )
        grads["re"], grads["im"] = self.bank.grad_from_dense(gdense)
        return gx


class _SO3ConvLayer(_Layer):
    def __init__(self, spec):
        super().__init__(spec)
        self.bank: SO3KernelBank | None = None
        self._dense = None
        self._dense_version = -1
        self.net = None

    def init_params(self, rng, dtype):
        self.bank = SO3KernelBank.random(
            self.spec.out_channels, self.spec.in_channels, self.spec.bw_in, rng, dtype
        )
        self.params = {"re": self.bank.re, "im": self.bank.im}

    def _dense_kernels(self):
        if self._dense is None or self._dense_version != self.net.param_version:
            self.bank.re = self.params["re"]
            self.bank.im = self.params["im"]
            self._dense = self.bank.expand()
            self._dense_version = self.net.param_version
        return self._dense

    def forward(self, x, mode, rng, cache):
        y, xh = so3_conv_half_fwd(x, self._dense_kernels(), self.spec.bw_in)
        cache["xh"] = xh
        return y

    def backward(self, gy, cache, grads):
        gx, gdense = so3_conv_half_bwd(gy, self._dense_kernels(), cache["xh"], self.spec.bw_in)
        grads["re"], grads["im"] = self.bank.grad_from_dense(gdense)
        return gx


class _PoolLayer(_Layer):
    def forward(self, x, mode, rng, cache):
        return pool_half_fwd(x, self.spec.bw_in, self.spec.bw_out)

    def backward(self, gy, cache, grads):
        return pool_half_bwd(gy, self.spec.bw_in, self.spec.bw_out)


class _UnpoolLayer(_Layer):
    def forward(self, x, mode, rng, cache):
        return unpool_half_fwd(x, self.spec.bw_in, self.spec.bw_out)

    def backward(self, gy, cache, grads):
        return unpool_half_bwd(gy, self.spec.bw_in, self.spec.bw_out)


class _PReLULayer(_Layer):
    def init_params(self, rng, dtype):
        self.params = {"slope": np.full(self.spec.in_channels, _PRELU_INIT, dtype=dtype)}

    def forward(self, x, mode, rng, cache):
        a = self.params["slope"].reshape((-1,) + (1,) * (x.ndim - 1))
        cache["x"] = x
        return np.where(x > 0, x, a * x)

    def backward(self, gy, cache, grads):
        x = cache["x"]
        a = self.params["slope"].reshape((-1,) + (1,) * (x.ndim - 1))
        neg = x <= 0
        grads["slope"] = np.where(neg, gy * x, 0).reshape(x.shape[0], -1).sum(axis=1)
        grads["slope"] = grads["slope"].astype(self.params["slope"].dtype)
        return np.where(neg, gy * a, gy)


class _BatchNormLayer(_Layer):
    """Per-channel normalization over all grid axes, with running statistics."""

    def init_params(self, rng, dtype):
        C = self.spec.in_channels
        self.params = {"scale": np.ones(C, dtype), "shift": np.zeros(C, dtype)}
        self.buffers = {"running_mean": np.zeros(C, dtype), "running_var": np.ones(C, dtype)}

    def forward(self, x, mode, rng, cache):
        C = x.shape[0]
        shp = (-1,) + (1,) * (x.ndim - 1)
        scale = self.params["scale"].reshape(shp)
        shift = self.params["shift"].reshape(shp)
        if mode == "train":
            flat = x.reshape(C, -1)
            mu = flat.mean(axis=1)
            var = flat.var(axis=1)
            istd = 1.0 / np.sqrt(var + _BN_EPS)
            xhat = (x - mu.reshape(shp)) * istd.reshape(shp)
            mom = _BN_MOMENTUM
            self.buffers["running_mean"] += (mom * (mu - self.buffers["running_mean"])).astype(
                self.buffers["running_mean"].dtype
            )
            # biased variance, matching the train-mode normalizer, so that on a
            # fixed batch eval-mode output converges to the train-mode output
            self.buffers["running_var"] += (
                mom * (var - self.buffers["running_var"])
            ).astype(self.buffers["running_var"].dtype)
            cache["xhat"] = xhat
            cache["istd"] = istd
            cache["train"] = True
        else:
            mu = self.buffers["running_mean"]
            istd = 1.0 / np.sqrt(self.buffers["running_var"] + _BN_EPS)
            xhat = (x - mu.reshape(shp)) * istd.reshape(shp)
            cache["xhat"] = xhat
            cache["istd"] = istd
            cache["train"] = False
        return scale * xhat + shift

    def backward(self, gy, cache, grads):
        xhat, istd = cache["xhat"], cache["istd"]
        C = gy.shape[0]
        shp = (-1,) + (1,) * (gy.ndim - 1)
        scale = self.params["scale"].reshape(shp)
        grads["scale"] = (gy * xhat).reshape(C, -1).sum(axis=1).astype(self.params["scale"].dtype)
        grads["shift"] = gy.reshape(C, -1).sum(axis=1).astype(self.params["shift"].dtype)
        gxh = gy * scale
        if cache["train"]:
            flat_g = gxh.reshape(C, -1)
            n = flat_g.shape[1]
            mean_g = flat_g.mean(axis=1).reshape(shp)
            mean_gx = (gxh * xhat).reshape(C, -1).mean(axis=1).reshape(shp)
            return istd.reshape(shp) * (gxh - mean_g - xhat * mean_gx)
        return gxh * istd.reshape(shp)


class _DropoutLayer(_Layer):
    def forward(self, x, mode, rng, cache):
        if mode != "train" or self.spec.dropout_rate <= 0:
            return x
        if rng is None:
            raise ValueError("train-mode forward through dropout requires an rng")
        keep = 1.0 - self.spec.dropout_rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        cache["mask"] = mask
        return x * mask

    def backward(self, gy, cache, grads):
        mask = cache.get("mask")
        return gy if mask is None else gy * mask


class _SkipConcatLayer(_Layer):  # handled specially by the forward/backward loops
    pass


class _FinalPadLayer(_UnpoolLayer):
    pass


class _IntegrateLayer(_Layer):
    def forward(self, x, mode, rng, cache):
        return integrate_gamma_fwd(x, self.spec.bw_in)

    def backward(self, gy, cache, grads):
        return integrate_gamma_bwd(gy, self.spec.bw_in)


_LAYER_CLASSES = {
    "s2conv": _S2ConvLayer,
    "so3conv": _SO3ConvLayer,
    "pool": _PoolLayer,
    "unpool": _UnpoolLayer,
    "prelu": _PReLULayer,
    "batchnorm": _BatchNormLayer,
    "dropout": _DropoutLayer,
    "skipconcat": _SkipConcatLayer,
    "finalpad": _FinalPadLayer,
    "integrate": _IntegrateLayer,
}


class SegNet:
    """Layer chain plus parameters; built from LayerSpecs via build_network."""

    def __init__(self, specs: list[LayerSpec], arch_config: dict, dtype=np.float64):
        _validate_specs(specs)
        self.specs = specs
        self.arch_config = arch_config
        self.dtype = np.dtype(dtype).type
        self.layers = [_LAYER_CLASSES[s.kind](s) for s in specs]
        for layer in self.layers:
            layer.net = self
        self.param_version = 0

    @property
    def bw_in(self) -> int:
        return self.specs[0].bw_in

    @property
    def num_classes(self) -> int:
        return self.specs[-1].out_channels

    @property
    def in_channels(self) -> int:
        return self.specs[0].in_channels

    @property
    def r_max(self) -> float:
        return float(self.arch_config.get("r_max", 80.0))

    def init_params(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng, self.dtype)
        self.param_version += 1
        return self

    def num_params(self) -> int:
        return sum(int(p.size) for l in self.layers for p in l.params.values())

    def bump_version(self):
        self.param_version += 1


def _validate_specs(specs: list[LayerSpec]):
    if not specs:
        raise ValueError("empty layer list")
    s2 = [i for i, s in enumerate(specs) if s.kind == "s2conv"]
    if s2 != [0]:
        raise ValueError("the chain must start with its single s2conv layer")
    if [s.kind for s in specs[-2:]] != ["finalpad", "integrate"]:
        raise ValueError("the chain must end with finalpad then integrate")
    prev = specs[0]
    for i, s in enumerate(specs[1:], start=1):
        if s.bw_in != prev.bw_out:
            raise ValueError(f"layer {i} bw_in {s.bw_in} != previous bw_out {prev.bw_out}")
        cin = prev.out_channels
        if s.kind == "skipconcat":
            if s.skip_source is None or not (0 <= s.skip_source < i):
                raise ValueError(f"layer {i} skip_source invalid")
            cin += specs[s.skip_source].out_channels
            if s.out_channels != cin:
                raise ValueError(f"layer {i} skipconcat channels {s.out_channels} != {cin}")
        elif s.in_channels != cin:
            raise ValueError(f"layer {i} in_channels {s.in_channels} != previous out {cin}")
        prev = s


@dataclass
class GradientTape:
    """Per-layer activations and caches from one forward pass."""

    net: SegNet
    mode: str
    input_values: np.ndarray
    outputs: list = field(default_factory=list)
    caches: list = field(default_factory=list)

    def replay(self) -> np.ndarray:
        """Re-run the recorded forward; bit-identical in eval mode."""
        out, _ = _forward_raw(self.net, self.input_values, self.mode, rng=None, record=False)
        return out


def _as_input_values(net: SegNet, x) -> np.ndarray:
    if isinstance(x, SphericalScan):
        vals = scan_to_input(x, net.r_max).values
    elif isinstance(x, S2Signal):
        vals = x.values
    else:
        vals = np.asarray(x)
    n = 2 * net.bw_in
    if vals.shape != (net.in_channels, n, n):
        raise ShapeMismatch(
            f"input must be [{net.in_channels}, {n}, {n}], got {vals.shape}"
        )
    return vals.astype(net.dtype, copy=False)


def _forward_raw(net: SegNet, values: np.ndarray, mode: str, rng, record: bool):
    x = values
    outputs, caches = [], []
    for i, (spec, layer) in enumerate(zip(net.specs, net.layers)):
        cache: dict = {}
        if spec.kind == "skipconcat":
            x = np.concatenate([x, outputs[spec.skip_source]], axis=0)
        else:
            x = layer.forward(x, mode, rng, cache)
        if not np.all(np.isfinite(x)):
            raise NonFiniteActivation(f"layer {i} ({spec.kind}) produced non-finite values")
        outputs.append(x)  # retained: skip layers read earlier activations
        caches.append(cache)
    return x, (outputs, caches)


def forward(net: SegNet, scan, mode: str = "eval", rng=None, tape: GradientTape | None = None):
    """Run the layer chain; returns logits as a C-channel S2Signal.

    Pass a :class:`GradientTape` (and ``mode='train'``) to record activations
    for :func:`backward`.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    values = _as_input_values(net, scan)
    if tape is not None:
        tape.net = net
        tape.mode = mode
        tape.input_values = values
        x, (outputs, caches) = _forward_raw(net, values, mode, rng, record=True)
        tape.outputs = outputs
        tape.caches = caches
    else:
        x, _ = _forward_raw(net, values, mode, rng, record=False)
    return S2Signal(make_s2_grid(net.bw_in), np.asarray(x, dtype=np.float64))


def backward(tape: GradientTape, dlogits: np.ndarray):
    """Adjoint sweep over a recorded train-mode forward; returns per-layer grads."""
    net = tape.net
    if tape.mode != "train":
        raise TapeMismatch("backward requires a tape recorded in train mode")
    if len(tape.outputs) != len(net.layers):
        raise TapeMismatch("tape does not match the network layer chain")
    dlogits = np.asarray(dlogits, dtype=net.dtype)
    if dlogits.shape != tape.outputs[-1].shape:
        raise ShapeMismatch(
            f"dlogits shape {dlogits.shape} != logits shape {tape.outputs[-1].shape}"
        )
    grads: list[dict] = [{} for _ in net.layers]
    gbuf: dict[int, np.ndarray] = {len(net.layers) - 1: dlogits}
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.specs[i]
        gy = gbuf.pop(i, None)
        if gy is None:
            gy = np.zeros_like(tape.outputs[i])
        if spec.kind == "skipconcat":
            main = spec.in_channels
            gx = gy[:main]
            gskip = gy[main:]
            src = spec.skip_source
            gbuf[src] = gbuf[src] + gskip if src in gbuf else gskip.copy()
        else:
            gx = net.layers[i].backward(gy, tape.caches[i], grads[i])
        if i > 0:
            gbuf[i - 1] = gbuf[i - 1] + gx if i - 1 in gbuf else gx
    return grads


# ---------------------------------------------------------------------------
# Architecture builder
# ---------------------------------------------------------------------------

def default_architecture(
    bw_in: int,
    c_in: int = 2,
    num_classes: int = 5,
    widths: tuple = (16, 32, 64),
    bw_factor: float = 0.7,
    dropout: float = 0.2,
    r_max: float = 80.0,
    dtype=np.float64,
) -> SegNet:
    """Two-block encoder / two-block decoder with skip concatenation.

    Bandwidth chain: bw_in -> floor(bw_factor * bw_in) -> halved per pool;
    mirrored on the way up, with a final spectral zero-pad back to bw_in.
    """
    if bw_in < 8:
        raise BandwidthTooSmall(f"input bandwidth {bw_in} < 8")
    b1 = int(bw_in * bw_factor)
    b2 = b1 // 2
    b3 = b2 // 2
    if b3 < 1:
        raise BandwidthTooSmall(f"bandwidth chain {bw_in}->{b1}->{b2}->{b3} hits zero")
    w1, w2, w3 = widths
    C = num_classes
    sp = []
    add = sp.append
    add(LayerSpec("s2conv", c_in, w1, bw_in, b1))
    add(LayerSpec("prelu", w1, w1, b1, b1))
    add(LayerSpec("batchnorm", w1, w1, b1, b1))          # idx 2: skip to decoder @b1
    add(LayerSpec("so3conv", w1, w2, b1, b1))
    add(LayerSpec("prelu", w2, w2, b1, b1))
    add(LayerSpec("batchnorm", w2, w2, b1, b1))
    add(LayerSpec("pool", w2, w2, b1, b2))               # idx 6: skip to decoder @b2
    add(LayerSpec("so3conv", w2, w3, b2, b2))
    add(LayerSpec("prelu", w3, w3, b2, b2))
    add(LayerSpec("batchnorm", w3, w3, b2, b2))
    add(LayerSpec("pool", w3, w3, b2, b3))
    add(LayerSpec("dropout", w3, w3, b3, b3, dropout_rate=dropout))
    add(LayerSpec("unpool", w3, w3, b3, b2))
    add(LayerSpec("skipconcat", w3, w3 + w2, b2, b2, skip_source=6))
    add(LayerSpec("so3conv", w3 + w2, w2, b2, b2))
    add(LayerSpec("prelu", w2, w2, b2, b2))
    add(LayerSpec("batchnorm", w2, w2, b2, b2))
    add(LayerSpec("unpool", w2, w2, b2, b1))
    add(LayerSpec("skipconcat", w2, w2 + w1, b1, b1, skip_source=2))
    add(LayerSpec("so3conv", w2 + w1, w1, b1, b1))
    add(LayerSpec("prelu", w1, w1, b1, b1))
    add(LayerSpec("batchnorm", w1, w1, b1, b1))
    add(LayerSpec("so3conv", w1, C, b1, b1))
    add(LayerSpec("prelu", C, C, b1, b1))
    add(LayerSpec("batchnorm", C, C, b1, b1))
    add(LayerSpec("finalpad", C, C, b1, bw_in))
    add(LayerSpec("integrate", C, C, bw_in, bw_in))
    cfg = {
        "bw_in": bw_in,
        "c_in": c_in,
        "num_classes": num_classes,
        "widths": list(widths),
        "bw_factor": bw_factor,
        "dropout": dropout,
        "r_max": r_max,
    }
    return SegNet(sp, cfg, dtype=dtype)


def build_network(arch_config: dict, dtype=np.float64) -> SegNet:
    """Rebuild a network from its architecture config (as stored in checkpoints)."""
    cfg = dict(arch_config)
    return default_architecture(
        bw_in=int(cfg["bw_in"]),
        c_in=int(cfg.get("c_in", 2)),
        num_classes=int(cfg.get("num_classes", 5)),
        widths=tuple(cfg.get("widths", (16, 32, 64))),
        bw_factor=float(cfg.get("bw_factor", 0.7)),
        dropout=float(cfg.get("dropout", 0.2)),
        r_max=float(cfg.get("r_max", 80.0)),
        dtype=dtype,
    )


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class TrainState:
    """Adam state over all layer parameters."""

    def __init__(self, net: SegNet, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step = 0
        self.m = [{k: np.zeros_like(v) for k, v in l.params.items()} for l in net.layers]
        self.v = [{k: np.zeros_like(v) for k, v in l.params.items()} for l in net.layers]

    def apply(self, grads: list[dict]):
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.step
        corr2 = 1.0 - b2**self.step
        for li, layer in enumerate(self.net.layers):
            for k, p in layer.params.items():
                g = grads[li].get(k)
                if g is None:
                    continue
                m = self.m[li][k]
                v = self.v[li][k]
                m += (1 - b1) * (g - m)
                v += (1 - b2) * (g * g - v)
                p -= (self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)).astype(p.dtype)
        self.net.bump_version()


def zero_grads(net: SegNet) -> list[dict]:
    return [{k: np.zeros_like(v) for k, v in l.params.items()} for l in net.layers]


def accumulate_grads(total: list[dict], part: list[dict]):
    for t, p in zip(total, part):
        for k, g in p.items():
            t[k] += g


def scale_grads(grads: list[dict], s: float):
    for g in grads:
        for k in g:
            g[k] *= s


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CK_MAGIC = b"S2CK"
_CK_VERSION = 1


def _write_array(buf: io.BytesIO, name: str, arr: np.ndarray):
    nb = name.encode()
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    if isinstance(arr, bytes):  # pre-serialized spectral record
        buf.write(struct.pack("<BI", 1, len(arr)))
        buf.write(arr)
        return
    a = np.asarray(arr, dtype=np.float64)
    buf.write(struct.pack("<BB", 0, a.ndim))
    for d in a.shape:
        buf.write(struct.pack("<I", d))
    buf.write(a.astype("<f8").tobytes())


def _read_array(buf):
    (nlen,) = struct.unpack("<H", buf.read(2))
    name = buf.read(nlen).decode()
    (tag,) = struct.unpack("<B", buf.read(1))
    if tag == 1:
        (blen,) = struct.unpack("<I", buf.read(4))
        return name, serialize.loads(buf.read(blen))
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(buf.read(8 * count), dtype="<f8").reshape(shape)
    return name, data.copy()


def save_checkpoint(net: SegNet, path, meta: dict | None = None):
    """Write architecture config plus per-layer parameter blobs."""
    buf = io.BytesIO()
    buf.write(_CK_MAGIC)
    buf.write(struct.pack("<I", _CK_VERSION))
    cfg = {
        "arch": net.arch_config,
        "dtype": np.dtype(net.dtype).name,
        "meta": meta or {},
    }
    cb = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(cb)))
    buf.write(cb)
    for li, layer in enumerate(net.layers):
        items = []
        if isinstance(layer, (_S2ConvLayer, _SO3ConvLayer)):
            layer.bank.re = layer.params["re"]
            layer.bank.im = layer.params["im"]
            items.append(("kernels", serialize.dumps(layer.bank.to_spectrum())))
        else:
            items.extend(layer.params.items())
        items.extend(layer.buffers.items())
        buf.write(struct.pack("<IH", li, len(items)))
        for name, arr in items:
            _write_array(buf, name, arr)
    data = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path) -> tuple[SegNet, dict]:
    """Rebuild the network and parameters saved by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != _CK_MAGIC:
        raise MalformedFile("bad checkpoint magic")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _CK_VERSION:
        raise MalformedFile(f"unsupported checkpoint version {version}")
    (clen,) = struct.unpack("<I", buf.read(4))
    cfg = json.loads(buf.read(clen).decode())
    net = build_network(cfg["arch"], dtype=np.dtype(cfg["dtype"]).type)
    net.init_params(0)
    from .spectral_ops import _packing

    while True:
        head = buf.read(6)
        if len(head) < 6:
            break
        li, nitems = struct.unpack("<IH", head)
        layer = net.layers[li]
        for _ in range(nitems):
            name, val = _read_array(buf)
            if name == "kernels":
                spec = layer.spec
                pk = _packing(spec.bw_in, so3=isinstance(layer, _SO3ConvLayer))
                dense = val.coeff.reshape(
                    (spec.out_channels, spec.in_channels) + val.coeff.shape[1:]
                )
                flat = dense.reshape(spec.out_channels, spec.in_channels, -1)
                layer.params["re"] = flat[..., pk.half].real.astype(net.dtype)
                layer.params["im"] = (
                    flat[..., pk.half].imag * ~pk.selfconj
                ).astype(net.dtype)
                layer.bank.re = layer.params["re"]
                layer.bank.im = layer.params["im"]
            elif name in layer.params:
                layer.params[name] = val.astype(net.dtype)
            else:
                layer.buffers[name] = val.astype(net.dtype)
    net.bump_version()
    return net, cfg.get("meta", {})
