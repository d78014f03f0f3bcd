"""Post-training quantization with mixed per-layer precision.

Symmetric scheme throughout: scale = max(|min|, |max|) / (2**(bits-1) - 1),
zero point pinned at 0, round half away from zero, clamp to
+-(2**(bits-1) - 1). Out-of-range inputs saturate by design and the clip
count is reported rather than raised. Normalization layers default to a
wider width than convolutions (they are the numerically fragile part of
the stack), which the precision policy encodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, ParameterError, ShapeError
from .gdn import GdnParams, gdn_float, igdn_float
from .model import ModelSpec, conv2d_forward, deconv2d_forward, model_forward, relu_forward
from .tensor import Tensor

__all__ = [
    "INPUT_INDEX",
    "StatRange",
    "CalibrationStats",
    "calibrate",
    "QuantParams",
    "quant_params_from_stats",
    "quantize",
    "quantize_with_stats",
    "dequantize",
    "PrecisionPolicy",
    "QuantizedModel",
    "ptq",
    "dequantize_model",
    "fake_quant_forward",
    "ste_grad",
]

INPUT_INDEX = -1  # pseudo layer index for the model input's activation stats

SCALE_FLOOR = 2.0 ** -24


@dataclass
class StatRange:
    """Running min/max of one tensor role."""

    min_val: float
    max_val: float

    def update(self, arr) -> None:
        arr = np.asarray(arr)
        if arr.size:
            self.min_val = min(self.min_val, float(arr.min()))
            self.max_val = max(self.max_val, float(arr.max()))

    def merged(self, other: "StatRange") -> "StatRange":
        return StatRange(min(self.min_val, other.min_val),
                         max(self.max_val, other.max_val))


@dataclass
class CalibrationStats:
    """Per-(layer, role) ranges; roles are weights/bias/beta/gamma/activation."""

    entries: dict = field(default_factory=dict)

    def observe(self, layer: int, role: str, arr) -> None:
        arr = np.asarray(arr)
        if not arr.size:
            return
        key = (layer, role)
        if key not in self.entries:
            self.entries[key] = StatRange(float(arr.min()), float(arr.max()))
        else:
            self.entries[key].update(arr)

    def get(self, layer: int, role: str) -> StatRange:
        try:
            return self.entries[(layer, role)]
        except KeyError:
            raise CalibrationError(
                f"no calibration range for layer {layer} role {role!r}"
            ) from None

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        """Elementwise min/max union; associative and commutative."""
        out = CalibrationStats({k: StatRange(v.min_val, v.max_val)
                                for k, v in self.entries.items()})
        for k, v in other.entries.items():
            out.entries[k] = out.entries[k].merged(v) if k in out.entries else \
                StatRange(v.min_val, v.max_val)
        return out


def calibrate(model: ModelSpec, calibration_set) -> CalibrationStats:
    """Collect ranges for every parameter tensor and every activation.

    Parameter ranges come straight from the model; activation ranges are
    the running min/max over forward passes of the calibration tensors.
    The model input itself is tracked under INPUT_INDEX.
    """
    inputs = list(calibration_set)
    if not inputs:
        raise CalibrationError("calibration set is empty")
    stats = CalibrationStats()
    for li, layer in enumerate(model.layers):
        if layer.kind in ("conv", "deconv"):
            stats.observe(li, "weights", layer.weights)
            stats.observe(li, "bias", layer.bias)
        elif layer.kind in ("gdn", "igdn"):
            stats.observe(li, "beta", layer.gdn_params.beta)
            stats.observe(li, "gamma", layer.gdn_params.gamma)
    for x in inputs:
        stats.observe(INPUT_INDEX, "activation", x.data)
        _, acts = model_forward(model, x, record=True)
        for li, act in enumerate(acts):
            stats.observe(li, "activation", act.data)
    return stats


@dataclass(frozen=True)
class QuantParams:
    """Symmetric affine parameters; zero_point is structurally zero."""

    scale: float
    zero_point: int
    bits: int
    degenerate: bool = False

    def __post_init__(self):
        if self.zero_point != 0:
            raise ParameterError("symmetric quantization pins zero_point at 0")
        if not 2 <= self.bits <= 32:
            raise ParameterError(f"bits must lie in [2, 32]; got {self.bits}")
        if not self.scale > 0:
            raise ParameterError("scale must be strictly positive")

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1

    @property
    def qmin(self) -> int:
        return -self.qmax


def quant_params_from_stats(rng: StatRange, bits: int) -> QuantParams:
    """Scale from the observed range; degenerate all-zero ranges fall back
    to a floor scale and are flagged."""
    if not 2 <= bits <= 32:
        raise ParameterError(f"bits must lie in [2, 32]; got {bits}")
    bound = max(abs(rng.min_val), abs(rng.max_val))
    levels = (1 << (bits - 1)) - 1
    if bound == 0.0:
        return QuantParams(scale=SCALE_FLOOR, zero_point=0, bits=bits,
                           degenerate=True)
    return QuantParams(scale=bound / levels, zero_point=0, bits=bits)


def _int_dtype(bits: int):
    if bits <= 8:
        return np.int8
    if bits <= 16:
        return np.int16
    return np.int32


def quantize_with_stats(x, p: QuantParams):
    """Quantize to integers; returns (q, n_saturated)."""
    arr = np.asarray(x, dtype=np.float64)
    scaled = arr / p.scale
    q = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    clipped = np.clip(q, p.qmin, p.qmax)
    n_sat = int(np.count_nonzero(clipped != q))
    return clipped.astype(_int_dtype(p.bits)), n_sat


def quantize(x, p: QuantParams):
    q, _ = quantize_with_stats(x, p)
    return q


def dequantize(q, p: QuantParams):
    # float64 so |dequantize(quantize(x)) - x| <= scale/2 holds exactly
    return np.asarray(q, dtype=np.float64) * p.scale


def _qdq(x, p: QuantParams):
    return dequantize(quantize(x, p), p)


@dataclass(frozen=True)
class PrecisionPolicy:
    """Bit-width resolution: explicit override, else gdn width for
    normalization layers, else the default."""

    default_bits: int = 8
    gdn_bits: int = 32
    overrides: dict = field(default_factory=dict)

    def resolve(self, layer_index: int, layer) -> int:
        if layer_index in self.overrides:
            return int(self.overrides[layer_index])
        if layer is not None and layer.kind in ("gdn", "igdn"):
            return self.gdn_bits
        return self.default_bits


@dataclass
class QuantizedModel:
    """Original model spec plus integer payloads and their parameters."""

    model: ModelSpec
    tensor_params: dict
    payloads: dict
    activation_params: dict
    saturation: dict

    def scale_report(self):
        rows = []
        for (li, role), p in sorted(self.tensor_params.items()):
            rows.append({
                "layer": li, "role": role, "bits": p.bits, "scale": p.scale,
                "saturation_count": self.saturation.get((li, role), 0),
            })
        for li, p in sorted(self.activation_params.items()):
            rows.append({
                "layer": li, "role": "activation", "bits": p.bits,
                "scale": p.scale, "saturation_count": 0,
            })
        return rows


def _quantize_beta(beta, p: QuantParams):
    """Beta rounds up to at least one step: the pool must stay positive."""
    q, n = quantize_with_stats(beta, p)
    return np.maximum(q, 1).astype(q.dtype), n


def ptq(model: ModelSpec, stats: CalibrationStats,
        policy: PrecisionPolicy = PrecisionPolicy()) -> QuantizedModel:
    """Post-training quantization of every parameter tensor.

    Raises CalibrationError (naming the layer) when stats are missing.
    Deterministic: same model, stats, and policy give identical payloads.
    """
    tensor_params, payloads, saturation = {}, {}, {}
    activation_params = {}
    for li, layer in enumerate(model.layers):
        bits = policy.resolve(li, layer)
        if layer.kind in ("conv", "deconv"):
            roles = (("weights", layer.weights), ("bias", layer.bias))
        elif layer.kind in ("gdn", "igdn"):
            roles = (("beta", layer.gdn_params.beta),
                     ("gamma", layer.gdn_params.gamma))
        else:
            roles = ()
        for role, arr in roles:
            p = quant_params_from_stats(stats.get(li, role), bits)
            if role == "beta":
                q, n = _quantize_beta(arr, p)
            else:
                q, n = quantize_with_stats(arr, p)
            tensor_params[(li, role)] = p
            payloads[(li, role)] = q
            saturation[(li, role)] = n
        activation_params[li] = quant_params_from_stats(
            stats.get(li, "activation"), bits
        )
    if (INPUT_INDEX, "activation") in stats.entries:
        activation_params[INPUT_INDEX] = quant_params_from_stats(
            stats.get(INPUT_INDEX, "activation"), policy.default_bits
        )
    return QuantizedModel(
        model=model,
        tensor_params=tensor_params,
        payloads=payloads,
        activation_params=activation_params,
        saturation=saturation,
    )


def dequantize_model(qm: QuantizedModel) -> ModelSpec:
    """Materialize the float model the integer payloads represent."""
    from .model import LayerSpec

    layers = []
    for li, layer in enumerate(qm.model.layers):
        if layer.kind in ("conv", "deconv"):
            layers.append(LayerSpec(
                kind=layer.kind,
                in_channels=layer.in_channels,
                out_channels=layer.out_channels,
                kernel=layer.kernel, stride=layer.stride, padding=layer.padding,
                weights=dequantize(qm.payloads[(li, "weights")],
                                   qm.tensor_params[(li, "weights")]),
                bias=dequantize(qm.payloads[(li, "bias")],
                                qm.tensor_params[(li, "bias")]),
            ))
        elif layer.kind in ("gdn", "igdn"):
            beta_p = qm.tensor_params[(li, "beta")]
            beta = dequantize(qm.payloads[(li, "beta")], beta_p)
            gamma = dequantize(qm.payloads[(li, "gamma")],
                               qm.tensor_params[(li, "gamma")])
            params = GdnParams(beta=np.maximum(beta, beta_p.scale), gamma=gamma,
                               alpha=layer.gdn_params.alpha)
            layers.append(LayerSpec(
                kind=layer.kind,
                in_channels=layer.in_channels,
                out_channels=layer.out_channels,
                gdn_params=params,
            ))
        else:
            layers.append(layer)
    return ModelSpec(name=qm.model.name, layers=layers, role=qm.model.role,
                     bit_widths=qm.model.bit_widths)


def fake_quant_forward(model: ModelSpec, stats: CalibrationStats,
                       policy: PrecisionPolicy, x: Tensor) -> Tensor:
    """Forward pass with quantize-dequantize inserted on weights and
    activations, emulating integer inference in float arithmetic.

    Normalization layers run at the policy's gdn width, parameters
    included. The input is treated as the INPUT_INDEX activation.
    """
    in_p = quant_params_from_stats(stats.get(INPUT_INDEX, "activation"),
                                   policy.default_bits)
    cur = Tensor(_qdq(x.data, in_p).reshape(x.dims))
    for li, layer in enumerate(model.layers):
        bits = policy.resolve(li, layer)
        if layer.kind in ("conv", "deconv"):
            wp = quant_params_from_stats(stats.get(li, "weights"), bits)
            bp = quant_params_from_stats(stats.get(li, "bias"), bits)
            from .model import LayerSpec

            qlayer = LayerSpec(
                kind=layer.kind,
                in_channels=layer.in_channels,
                out_channels=layer.out_channels,
                kernel=layer.kernel, stride=layer.stride, padding=layer.padding,
                weights=_qdq(layer.weights, wp),
                bias=_qdq(layer.bias, bp),
            )
            fwd = conv2d_forward if layer.kind == "conv" else deconv2d_forward
            cur = fwd(cur, qlayer)
        elif layer.kind in ("gdn", "igdn"):
            bp = quant_params_from_stats(stats.get(li, "beta"), bits)
            gp = quant_params_from_stats(stats.get(li, "gamma"), bits)
            beta_q, _ = _quantize_beta(layer.gdn_params.beta, bp)
            params = GdnParams(
                beta=dequantize(beta_q, bp),
                gamma=_qdq(layer.gdn_params.gamma, gp),
                alpha=layer.gdn_params.alpha,
            )
            op = gdn_float if layer.kind == "gdn" else igdn_float
            cur = op(cur, params)
        else:
            cur = relu_forward(cur, layer)
        ap = quant_params_from_stats(stats.get(li, "activation"), bits)
        cur = Tensor(_qdq(cur.data, ap).reshape(cur.dims))
    return cur


def ste_grad(upstream, x, p: QuantParams):
    """Straight-through estimator: pass the gradient where x/scale sits
    strictly inside the clamp range, zero it where the value saturates."""
    up = np.asarray(upstream, dtype=np.float64)
    xv = np.asarray(x, dtype=np.float64)
    if up.shape != xv.shape:
        raise ShapeError(
            f"upstream shape {up.shape} does not match input shape {xv.shape}"
        )
    scaled = xv / p.scale
    mask = (scaled > p.qmin) & (scaled < p.qmax)
    return up * mask
