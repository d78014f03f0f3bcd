"""Layer and model descriptions plus reference forward passes.

The forward kernels here are correctness references, not speed-optimized
inference: convolutions accumulate in float64 and round once to float32
at the end, so they serve as the golden output other paths (quantized,
pruned) are measured against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError, ToolkitError
from .gdn import GdnParams, gdn_float, igdn_float
from .tensor import Tensor

__all__ = [
    "LayerSpec",
    "ModelSpec",
    "LAYER_KINDS",
    "MODEL_ROLES",
    "layer_output_dims",
    "conv2d_forward",
    "deconv2d_forward",
    "relu_forward",
    "model_forward",
    "FlopsReport",
    "flops_of",
]

LAYER_KINDS = ("conv", "deconv", "gdn", "igdn", "relu")
MODEL_ROLES = (
    "main_encoder",
    "main_decoder",
    "hyper_encoder",
    "hyper_decoder",
    "entropy_params",
)


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LayerSpec:
    """One layer: kind plus whatever parameters that kind carries.

    conv/deconv hold weights (out, in, k, k) and bias (out,); gdn/igdn
    hold a GdnParams; relu holds nothing. kernel/stride/padding only
    matter for conv/deconv.
    """

    kind: str
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    gdn_params: GdnParams | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ParameterError("channel counts must be positive")
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ParameterError("kernel/stride must be >= 1 and padding >= 0")

        if self.kind in ("conv", "deconv"):
            if self.weights is None:
                raise ParameterError(f"{self.kind} layer needs weights")
            w = _frozen(self.weights, np.float32)
            expect = (self.out_channels, self.in_channels, self.kernel, self.kernel)
            if w.shape != expect:
                raise ShapeError(
                    f"{self.kind} weights must have shape {expect}; got {w.shape}"
                )
            b = (np.zeros(self.out_channels, dtype=np.float32)
                 if self.bias is None else np.asarray(self.bias, dtype=np.float32))
            if b.shape != (self.out_channels,):
                raise ShapeError(
                    f"bias must have shape ({self.out_channels},); got {b.shape}"
                )
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "bias", _frozen(b, np.float32))
            if self.gdn_params is not None:
                raise ParameterError(f"{self.kind} layer does not take gdn params")
        elif self.kind in ("gdn", "igdn"):
            if self.in_channels != self.out_channels:
                raise ShapeError(f"{self.kind} preserves channel count")
            if self.gdn_params is None:
                raise ParameterError(f"{self.kind} layer needs gdn params")
            if self.gdn_params.channels != self.in_channels:
                raise ShapeError(
                    f"gdn params cover {self.gdn_params.channels} channels, "
                    f"layer declares {self.in_channels}"
                )
            if self.weights is not None or self.bias is not None:
                raise ParameterError(f"{self.kind} layer does not take weights")
        else:  # relu
            if self.in_channels != self.out_channels:
                raise ShapeError("relu preserves channel count")
            if self.weights is not None or self.bias is not None:
                raise ParameterError("relu layer does not take weights")

    def param_count(self) -> int:
        if self.kind in ("conv", "deconv"):
            return int(self.weights.size + self.bias.size)
        if self.kind in ("gdn", "igdn"):
            return int(self.gdn_params.beta.size + self.gdn_params.gamma.size)
        return 0


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer stack with a pipeline role."""

    name: str
    layers: list
    role: str
    bit_widths: list | None = None

    def __post_init__(self):
        if self.role not in MODEL_ROLES:
            raise ParameterError(
                f"role must be one of {MODEL_ROLES}; got {self.role!r}"
            )
        prev = None
        for i, layer in enumerate(self.layers):
            if prev is not None and layer.in_channels != prev:
                raise ShapeError(
                    f"layer {i} expects {layer.in_channels} input channels but "
                    f"layer {i - 1} produces {prev}"
                )
            prev = layer.out_channels
        if self.bit_widths is not None:
            if len(self.bit_widths) != len(self.layers):
                raise ShapeError(
                    f"bit_widths lists {len(self.bit_widths)} entries for "
                    f"{len(self.layers)} layers"
                )
            if any(int(b) < 1 for b in self.bit_widths):
                raise ParameterError("bit widths must be positive")
            object.__setattr__(self, "bit_widths", [int(b) for b in self.bit_widths])

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels if self.layers else 0

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels if self.layers else 0

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)


def layer_output_dims(layer: LayerSpec, h: int, w: int):
    """Spatial extents after the layer."""
    if layer.kind == "conv":
        k, s, p = layer.kernel, layer.stride, layer.padding
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv reduces {h}x{w} below 1x1 (kernel {k}, stride {s}, pad {p})"
            )
        return oh, ow
    if layer.kind == "deconv":
        k, s, p = layer.kernel, layer.stride, layer.padding
        oh = (h - 1) * s - 2 * p + k
        ow = (w - 1) * s - 2 * p + k
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"deconv maps {h}x{w} below 1x1 (kernel {k}, stride {s}, pad {p})"
            )
        return oh, ow
    return h, w


def conv2d_forward(x: Tensor, layer: LayerSpec) -> Tensor:
    """Strided 2-D cross-correlation with zero padding."""
    if layer.kind != "conv":
        raise ParameterError(f"conv2d_forward got a {layer.kind} layer")
    if x.c != layer.in_channels:
        raise ShapeError(
            f"input has {x.c} channels, conv expects {layer.in_channels}"
        )
    k, s, p = layer.kernel, layer.stride, layer.padding
    oh, ow = layer_output_dims(layer, x.h, x.w)
    padded = np.pad(
        x.data.astype(np.float64), ((0, 0), (0, 0), (p, p), (p, p))
    )
    w64 = layer.weights.astype(np.float64)
    out = np.zeros((x.n, layer.out_channels, oh, ow), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            window = padded[:, :, ky:ky + s * oh:s, kx:kx + s * ow:s]
            out += np.einsum("nihw,oi->nohw", window, w64[:, :, ky, kx])
    out += layer.bias.astype(np.float64)[None, :, None, None]
    return Tensor(out.astype(np.float32))


def deconv2d_forward(x: Tensor, layer: LayerSpec) -> Tensor:
    """Transposed convolution: scatter-add of stride-spaced kernel copies."""
    if layer.kind != "deconv":
        raise ParameterError(f"deconv2d_forward got a {layer.kind} layer")
    if x.c != layer.in_channels:
        raise ShapeError(
            f"input has {x.c} channels, deconv expects {layer.in_channels}"
        )
    k, s, p = layer.kernel, layer.stride, layer.padding
    oh, ow = layer_output_dims(layer, x.h, x.w)
    full_h = (x.h - 1) * s + k
    full_w = (x.w - 1) * s + k
    x64 = x.data.astype(np.float64)
    w64 = layer.weights.astype(np.float64)
    full = np.zeros((x.n, layer.out_channels, full_h, full_w), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            contrib = np.einsum("nihw,oi->nohw", x64, w64[:, :, ky, kx])
            full[:, :, ky:ky + s * x.h:s, kx:kx + s * x.w:s] += contrib
    out = full[:, :, p:p + oh, p:p + ow]
    out = out + layer.bias.astype(np.float64)[None, :, None, None]
    return Tensor(out.astype(np.float32))


def relu_forward(x: Tensor, layer: LayerSpec) -> Tensor:
    if layer.kind != "relu":
        raise ParameterError(f"relu_forward got a {layer.kind} layer")
    return Tensor(np.maximum(x.data, 0.0))


_FORWARD = {
    "conv": conv2d_forward,
    "deconv": deconv2d_forward,
    "relu": relu_forward,
    "gdn": lambda x, layer: gdn_float(x, layer.gdn_params),
    "igdn": lambda x, layer: igdn_float(x, layer.gdn_params),
}


def model_forward(model: ModelSpec, x: Tensor, record: bool = False):
    """Run the stack; with record=True also return each layer's output.

    Layer failures are re-raised with the layer index prepended.
    """
    acts = [] if record else None
    cur = x
    for i, layer in enumerate(model.layers):
        try:
            cur = _FORWARD[layer.kind](cur, layer)
        except ToolkitError as e:
            raise type(e)(f"layer {i} ({layer.kind}): {e}") from e
        if record:
            acts.append(cur)
    return (cur, acts) if record else cur


@dataclass
class FlopsReport:
    per_layer: list = field(default_factory=list)
    total: int = 0


def flops_of(model: ModelSpec, input_hw) -> FlopsReport:
    """Operation counts per layer for one image of the given extent.

    conv/deconv: 2 * H_out * W_out * C_in * C_out * K^2 (multiply + add
    per MAC, counted at the layer's own output extent). gdn/igdn:
    2*H*W*C^2 for the pairwise pool plus 5*H*W*C for square, offset,
    root, divide, and scale. relu: one op per element.
    """
    h, w = int(input_hw[0]), int(input_hw[1])
    per_layer = []
    for layer in model.layers:
        oh, ow = layer_output_dims(layer, h, w)
        if layer.kind in ("conv", "deconv"):
            ops = 2 * oh * ow * layer.in_channels * layer.out_channels \
                * layer.kernel ** 2
        elif layer.kind in ("gdn", "igdn"):
            c = layer.out_channels
            ops = 2 * oh * ow * c * c + 5 * oh * ow * c
        else:
            ops = oh * ow * layer.out_channels
        per_layer.append(int(ops))
        h, w = oh, ow
    return FlopsReport(per_layer=per_layer, total=int(sum(per_layer)))
