"""Network families for adversarial one-class fall detection.

Every network is described declaratively by a :class:`NetworkSpec` and then
materialised as a torch module. Tensors cross the module boundary in
channels-last layout, ``(batch, T, H, W, C)`` for the 3D nets and
``(batch, H, W, C)`` for the frame-based nets, so shapes read the same way
as the architecture tables.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

Shape = tuple[int, ...]

FAMILIES = ("3dcae-an", "dae-an", "cae-an")

KERNEL_3D = (5, 3, 3)  # (temporal, vertical, horizontal)
KERNEL_2D = (3, 3)
LEAKY_SLOPE = 0.2

# Reference per-layer output shapes, channels last.
TABLE_3DCAE: tuple[Shape, ...] = (
    (8, 64, 64, 16), (8, 32, 32, 8), (4, 16, 16, 8), (2, 8, 8, 8),
    (4, 16, 16, 8), (8, 32, 32, 8), (8, 64, 64, 16), (8, 64, 64, 1),
)
TABLE_DAE: tuple[Shape, ...] = (
    (4096,), (1500,), (1000,), (500,),
    (1000,), (1500,), (4096,), (64, 64, 1),
)
TABLE_CAE: tuple[Shape, ...] = (
    (64, 64, 16), (32, 32, 16), (16, 16, 8), (8, 8, 8),
    (16, 16, 8), (32, 32, 8), (64, 64, 16), (64, 64, 1),
)


class SpecError(ValueError):
    """A network spec whose layers do not compose."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv3d, deconv3d, conv2d, deconv2d, dense, flatten, reshape
    out: Optional[int] = None  # channels or units
    kernel: Optional[tuple[int, ...]] = None
    stride: Optional[tuple[int, ...]] = None
    padding: str = "same"
    activation: str = "linear"
    batch_norm: bool = False
    target_shape: Optional[Shape] = None  # reshape only


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: Shape
    layers: tuple[LayerSpec, ...]
    expected_output_shapes: Optional[tuple[Shape, ...]] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        def tup(v):
            return None if v is None else tuple(v)

        layers = tuple(
            LayerSpec(**{**l, "kernel": tup(l["kernel"]), "stride": tup(l["stride"]),
                         "target_shape": tup(l["target_shape"])})
            for l in d["layers"]
        )
        exp = d.get("expected_output_shapes")
        return cls(
            name=d["name"],
            input_shape=tuple(d["input_shape"]),
            layers=layers,
            expected_output_shapes=None if exp is None else tuple(tuple(s) for s in exp),
        )


def _layer_output_shape(layer: LayerSpec, shape: Shape) -> Shape:
    kind = layer.kind
    if kind in ("conv3d", "deconv3d", "conv2d", "deconv2d"):
        ndim = 3 if kind.endswith("3d") else 2
        if len(shape) != ndim + 1:
            raise SpecError(f"layer {layer.name!r}: expected {ndim + 1}-d input, got {shape}")
        if len(layer.kernel) != ndim or len(layer.stride) != ndim:
            raise SpecError(f"layer {layer.name!r}: kernel/stride rank must be {ndim}")
        dims = []
        for d, k, s in zip(shape[:-1], layer.kernel, layer.stride):
            if kind.startswith("deconv"):
                if layer.padding != "same":
                    raise SpecError(f"layer {layer.name!r}: deconvolution supports same padding only")
                dims.append(d * s)
            elif layer.padding == "same":
                if d % s:
                    raise SpecError(f"layer {layer.name!r}: stride {s} does not divide dimension {d}")
                dims.append(d // s)
            else:
                if d < k:
                    raise SpecError(f"layer {layer.name!r}: kernel {k} larger than dimension {d}")
                dims.append((d - k) // s + 1)
        return (*dims, layer.out)
    if kind == "flatten":
        return (math.prod(shape),)
    if kind == "dense":
        if len(shape) != 1:
            raise SpecError(f"layer {layer.name!r}: dense layer needs a flat input, got {shape}")
        return (layer.out,)
    if kind == "reshape":
        if math.prod(layer.target_shape) != math.prod(shape):
            raise SpecError(f"layer {layer.name!r}: cannot reshape {shape} to {layer.target_shape}")
        return tuple(layer.target_shape)
    raise SpecError(f"layer {layer.name!r}: unknown kind {kind!r}")


def shape_report(spec: NetworkSpec) -> list[tuple[str, Shape]]:
    """Propagate the input shape through ``spec`` without allocating parameters."""
    shape = tuple(spec.input_shape)
    rows = []
    for layer in spec.layers:
        shape = _layer_output_shape(layer, shape)
        rows.append((layer.name, shape))
    if spec.expected_output_shapes is not None:
        got = [s for _, s in rows]
        for (name, s), exp in zip(rows, spec.expected_output_shapes):
            if tuple(s) != tuple(exp):
                raise SpecError(f"layer {name!r}: output shape {s} != expected {tuple(exp)}")
        if len(got) != len(spec.expected_output_shapes):
            raise SpecError("number of layers does not match expected_output_shapes")
    return rows


# --------------------------------------------------------------------------
# spec constructors


def _ch(c: int, width: float) -> int:
    return max(1, int(round(c * width)))


def _conv_stack(kind, channels, strides, kernel, act, bn_first, prefix="enc"):
    return [
        LayerSpec(f"{prefix}{i + 1}", kind, out=c, kernel=kernel, stride=s,
                  activation=act, batch_norm=(bn_first or i > 0))
        for i, (c, s) in enumerate(zip(channels, strides))
    ]


def _scaled(table: Sequence[Shape], width: float, keep_last: bool = True) -> tuple[Shape, ...]:
    out = []
    for i, s in enumerate(table):
        last = keep_last and i == len(table) - 1
        out.append((*s[:-1], s[-1] if last else _ch(s[-1], width)))
    return tuple(out)


ENC3D_STRIDES = ((1, 1, 1), (1, 2, 2), (2, 2, 2), (2, 2, 2))
ENC2D_STRIDES = ((1, 1), (2, 2), (2, 2), (2, 2))


def spec_3dcae(input_shape: Shape = (8, 64, 64, 1), width: float = 1.0) -> NetworkSpec:
    enc_ch = [_ch(c, width) for c in (16, 8, 8, 8)]
    dec_ch = [_ch(c, width) for c in (8, 8, 16)]
    layers = _conv_stack("conv3d", enc_ch, ENC3D_STRIDES, KERNEL_3D, "relu", True)
    dec_strides = ((2, 2, 2), (2, 2, 2), (1, 2, 2))
    layers += [
        LayerSpec(f"dec{i + 1}", "deconv3d", out=c, kernel=KERNEL_3D, stride=s,
                  activation="relu", batch_norm=True)
        for i, (c, s) in enumerate(zip(dec_ch, dec_strides))
    ]
    layers.append(LayerSpec("out", "conv3d", out=input_shape[-1], kernel=KERNEL_3D,
                            stride=(1, 1, 1), activation="tanh", batch_norm=False))
    expected = None
    if tuple(input_shape) == (8, 64, 64, 1):
        expected = _scaled(TABLE_3DCAE, width)
    return NetworkSpec("3dcae", tuple(input_shape), tuple(layers), expected)


def spec_3d_discriminator(input_shape: Shape = (8, 64, 64, 1), width: float = 1.0) -> NetworkSpec:
    enc_ch = [_ch(c, width) for c in (16, 8, 8, 8)]
    layers = _conv_stack("conv3d", enc_ch, ENC3D_STRIDES, KERNEL_3D, "leaky_relu", False)
    layers += [LayerSpec("flatten", "flatten"),
               LayerSpec("prob", "dense", out=1, activation="sigmoid")]
    expected = None
    if tuple(input_shape) == (8, 64, 64, 1):
        enc = _scaled(TABLE_3DCAE[:4], width, keep_last=False)
        expected = (*enc, (math.prod(enc[-1]),), (1,))
    return NetworkSpec("3d_discriminator", tuple(input_shape), tuple(layers), expected)


def spec_dae(input_shape: Shape = (64, 64, 1), width: float = 1.0) -> NetworkSpec:
    units = [_ch(u, width) for u in (1500, 1000, 500, 1000, 1500)]
    flat = math.prod(input_shape)
    layers = [LayerSpec("flatten", "flatten")]
    layers += [
        LayerSpec(n, "dense", out=u, activation="relu", batch_norm=True)
        for n, u in zip(("enc1", "enc2", "enc3", "dec1", "dec2"), units)
    ]
    layers.append(LayerSpec("dec3", "dense", out=flat, activation="tanh"))
    layers.append(LayerSpec("out", "reshape", target_shape=tuple(input_shape)))
    expected = None
    if tuple(input_shape) == (64, 64, 1) and width == 1.0:
        expected = TABLE_DAE
    return NetworkSpec("dae", tuple(input_shape), tuple(layers), expected)


def spec_dae_discriminator(input_shape: Shape = (64, 64, 1), width: float = 1.0) -> NetworkSpec:
    units = [_ch(u, width) for u in (1500, 1000, 500)]
    layers = [LayerSpec("flatten", "flatten")]
    layers += [
        LayerSpec(f"enc{i + 1}", "dense", out=u, activation="leaky_relu", batch_norm=i > 0)
        for i, u in enumerate(units)
    ]
    layers.append(LayerSpec("prob", "dense", out=1, activation="sigmoid"))
    expected = None
    if tuple(input_shape) == (64, 64, 1) and width == 1.0:
        expected = (*TABLE_DAE[:4], (1,))
    return NetworkSpec("dae_discriminator", tuple(input_shape), tuple(layers), expected)


def spec_cae(input_shape: Shape = (64, 64, 1), width: float = 1.0) -> NetworkSpec:
    enc_ch = [_ch(c, width) for c in (16, 16, 8, 8)]
    dec_ch = [_ch(c, width) for c in (8, 8, 16)]
    layers = _conv_stack("conv2d", enc_ch, ENC2D_STRIDES, KERNEL_2D, "relu", True)
    layers += [
        LayerSpec(f"dec{i + 1}", "deconv2d", out=c, kernel=KERNEL_2D, stride=(2, 2),
                  activation="relu", batch_norm=True)
        for i, c in enumerate(dec_ch)
    ]
    layers.append(LayerSpec("out", "deconv2d", out=input_shape[-1], kernel=KERNEL_2D,
                            stride=(1, 1), activation="tanh"))
    expected = None
    if tuple(input_shape) == (64, 64, 1):
        expected = _scaled(TABLE_CAE, width)
    return NetworkSpec("cae", tuple(input_shape), tuple(layers), expected)


def spec_cae_discriminator(input_shape: Shape = (64, 64, 1), width: float = 1.0) -> NetworkSpec:
    enc_ch = [_ch(c, width) for c in (16, 16, 8, 8)]
    layers = _conv_stack("conv2d", enc_ch, ENC2D_STRIDES, KERNEL_2D, "leaky_relu", False)
    layers += [LayerSpec("flatten", "flatten"),
               LayerSpec("prob", "dense", out=1, activation="sigmoid")]
    expected = None
    if tuple(input_shape) == (64, 64, 1):
        enc = _scaled(TABLE_CAE[:4], width, keep_last=False)
        expected = (*enc, (math.prod(enc[-1]),), (1,))
    return NetworkSpec("cae_discriminator", tuple(input_shape), tuple(layers), expected)


# --------------------------------------------------------------------------
# torch realisation


def _activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU()
    if name == "leaky_relu":
        return nn.LeakyReLU(LEAKY_SLOPE)
    if name == "sigmoid":
        return nn.Sigmoid()
    if name == "tanh":
        return nn.Tanh()
    if name == "linear":
        return nn.Identity()
    raise SpecError(f"unknown activation {name!r}")


class _Block(nn.Module):
    def __init__(self, layer: LayerSpec, in_shape: Shape, out_shape: Shape):
        super().__init__()
        self.kind = layer.kind
        self.out_shape = out_shape
        op: nn.Module
        if layer.kind in ("conv3d", "conv2d"):
            conv = nn.Conv3d if layer.kind == "conv3d" else nn.Conv2d
            pad = tuple(k // 2 for k in layer.kernel) if layer.padding == "same" else 0
            op = conv(in_shape[-1], layer.out, layer.kernel, stride=layer.stride, padding=pad)
        elif layer.kind in ("deconv3d", "deconv2d"):
            deconv = nn.ConvTranspose3d if layer.kind == "deconv3d" else nn.ConvTranspose2d
            pad = tuple(k // 2 for k in layer.kernel)
            # odd kernels with k//2 padding give s*d - 1 + output_padding
            out_pad = tuple(s - 1 for s in layer.stride)
            op = deconv(in_shape[-1], layer.out, layer.kernel, stride=layer.stride,
                        padding=pad, output_padding=out_pad)
        elif layer.kind == "dense":
            op = nn.Linear(in_shape[0], layer.out)
        else:
            op = nn.Identity()
        self.memory_format = None
        if layer.kind.endswith("3d"):
            self.memory_format = torch.channels_last_3d
        elif layer.kind.endswith("2d"):
            self.memory_format = torch.channels_last
        if self.memory_format is not None:
            # oneDNN kernels are several times faster channels-last on CPU
            op = op.to(memory_format=self.memory_format)
        self.op = op
        if layer.batch_norm:
            bn = {"conv3d": nn.BatchNorm3d, "deconv3d": nn.BatchNorm3d,
                  "conv2d": nn.BatchNorm2d, "deconv2d": nn.BatchNorm2d,
                  "dense": nn.BatchNorm1d}[layer.kind]
            self.bn = bn(out_shape[-1])
        else:
            self.bn = nn.Identity()
        self.act = _activation(layer.activation)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.kind == "flatten":
            return x.flatten(1)
        if self.kind == "reshape":
            return x.reshape(x.shape[0], *self.out_shape)
        if self.memory_format is not None:
            x = x.contiguous(memory_format=self.memory_format)
        return self.act(self.bn(self.op(x)))


def _channels_last(x: torch.Tensor) -> torch.Tensor:
    return x.movedim(1, -1) if x.dim() >= 4 else x


def _channels_first(x: torch.Tensor) -> torch.Tensor:
    return x.movedim(-1, 1) if x.dim() >= 4 else x


class SpecNet(nn.Module):
    """Sequential network realised from a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        rows = shape_report(spec)
        shapes = [tuple(spec.input_shape)] + [s for _, s in rows]
        self.blocks = nn.ModuleList(
            _Block(layer, shapes[i], shapes[i + 1]) for i, layer in enumerate(spec.layers)
        )

    def forward(self, x: torch.Tensor, trace: Optional[list] = None) -> torch.Tensor:
        # channels-last in, channels-first inside conv stacks
        h = _channels_first(x)
        for block in self.blocks:
            if block.kind == "reshape":
                h = block(h)  # target shape is channels last
                h = _channels_first(h)
            elif block.kind == "flatten":
                h = block(_channels_last(h))
            else:
                h = block(h)
            if trace is not None:
                trace.append(tuple(_channels_last(h).shape[1:]))
        return _channels_last(h)


@dataclass
class ModelHandle:
    """A built network together with the NetworkSpec and seed that produced it."""

    spec: NetworkSpec
    module: SpecNet
    seed: int
    meta: dict = field(default_factory=dict)

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return self.module(x)

    @torch.no_grad()
    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Evaluation-mode forward pass on a numpy batch."""
        was_training = self.module.training
        self.module.eval()
        dtype = next(self.module.parameters()).dtype
        try:
            outs = [
                self.module(torch.from_numpy(np.ascontiguousarray(x[i:i + batch_size])).to(dtype)).numpy()
                for i in range(0, len(x), batch_size)
            ]
        finally:
            self.module.train(was_training)
        return np.concatenate(outs, axis=0)

    def num_parameters(self, kinds: Optional[Sequence[str]] = None) -> int:
        total = 0
        for layer, block in zip(self.spec.layers, self.module.blocks):
            if kinds is not None and layer.kind not in kinds:
                continue
            total += sum(p.numel() for p in block.op.parameters())
            if kinds is None:
                total += sum(p.numel() for p in block.bn.parameters())
        return total


def build(spec: NetworkSpec, seed: int, dtype: torch.dtype = torch.float32) -> ModelHandle:
    """Instantiate ``spec`` with parameters drawn from a private RNG stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = SpecNet(spec).to(dtype)
    return ModelHandle(spec=spec, module=module, seed=seed)


def build_3dcae(seed: int, width: float = 1.0, input_shape: Shape = (8, 64, 64, 1)) -> ModelHandle:
    return build(spec_3dcae(input_shape, width), seed)


def build_3d_discriminator(seed: int, width: float = 1.0, input_shape: Shape = (8, 64, 64, 1)) -> ModelHandle:
    return build(spec_3d_discriminator(input_shape, width), seed)


def build_dae(seed: int, width: float = 1.0) -> ModelHandle:
    return build(spec_dae(width=width), seed)


def build_dae_discriminator(seed: int, width: float = 1.0) -> ModelHandle:
    return build(spec_dae_discriminator(width=width), seed)


def build_cae(seed: int, width: float = 1.0) -> ModelHandle:
    return build(spec_cae(width=width), seed)


def build_cae_discriminator(seed: int, width: float = 1.0) -> ModelHandle:
    return build(spec_cae_discriminator(width=width), seed)


def family_specs(family: str, width: float = 1.0, T: int = 8) -> tuple[NetworkSpec, NetworkSpec]:
    """(generator spec, discriminator spec) for a model family."""
    if family == "3dcae-an":
        shape = (T, 64, 64, 1)
        return spec_3dcae(shape, width), spec_3d_discriminator(shape, width)
    if family == "dae-an":
        return spec_dae(width=width), spec_dae_discriminator(width=width)
    if family == "cae-an":
        return spec_cae(width=width), spec_cae_discriminator(width=width)
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def build_family(family: str, seed: int, width: float = 1.0, T: int = 8) -> tuple[ModelHandle, ModelHandle]:
    gspec, dspec = family_specs(family, width, T)
    # distinct streams for generator and discriminator
    return build(gspec, seed), build(dspec, seed + 1)


def forward_trace(handle: ModelHandle, batch: int = 1) -> list[tuple[str, Shape]]:
    """Per-layer output shapes observed in an actual forward pass on zeros."""
    trace: list = []
    x = torch.zeros((batch, *handle.spec.input_shape))
    handle.module.eval()
    with torch.no_grad():
        handle.module(x, trace=trace)
    return [(l.name, s) for l, s in zip(handle.spec.layers, trace)]
