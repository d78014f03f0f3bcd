"""Binary containers for models.

Float container: 4-byte magic, little-endian uint32 version, uint64
header length, UTF-8 JSON header (name, role, per-layer scalar fields,
bit widths), then one payload section per parameter tensor in layer
order (conv/deconv: weights then bias; gdn/igdn: beta then gamma). Every
section is an 8-byte little-endian length followed by little-endian
data: float32 for conv weights and bias, float64 for gdn beta and gamma,
matching their in-memory precision so round trips are bit-exact.

Quantized container: same layout under a different magic; payloads are
little-endian integers at the declared widths and the header carries the
per-tensor quantization parameters. Loading reconstructs the dequantized
float model alongside the raw integer payloads.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import (
    MalformedHeaderError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .gdn import GdnParams
from .model import LayerSpec, ModelSpec

__all__ = [
    "save_model",
    "load_model",
    "save_quantized_model",
    "load_quantized_model",
]

_MODEL_MAGIC = b"LICM"
_QUANT_MAGIC = b"LICQ"
_VERSION = 1
_LEN = struct.Struct("<Q")
_PREFIX = struct.Struct("<4sI Q")

_TENSOR_ROLES = {
    "conv": ("weights", "bias"),
    "deconv": ("weights", "bias"),
    "gdn": ("beta", "gamma"),
    "igdn": ("beta", "gamma"),
    "relu": (),
}

_ROLE_DTYPE = {"weights": "<f4", "bias": "<f4", "beta": "<f8", "gamma": "<f8"}


def _layer_header(layer: LayerSpec) -> dict:
    h = {
        "kind": layer.kind,
        "in_channels": layer.in_channels,
        "out_channels": layer.out_channels,
        "kernel": layer.kernel,
        "stride": layer.stride,
        "padding": layer.padding,
    }
    if layer.kind in ("gdn", "igdn"):
        h["alpha"] = layer.gdn_params.alpha
    return h


def _layer_payloads(layer: LayerSpec):
    if layer.kind in ("conv", "deconv"):
        return [layer.weights, layer.bias]
    if layer.kind in ("gdn", "igdn"):
        return [layer.gdn_params.beta, layer.gdn_params.gamma]
    return []


def _pack(magic: bytes, header: dict, payloads) -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_PREFIX.pack(magic, _VERSION, len(head)), head]
    for arr in payloads:
        raw = np.ascontiguousarray(arr).tobytes()
        parts.append(_LEN.pack(len(raw)))
        parts.append(raw)
    return b"".join(parts)


def _unpack(buf: bytes, magic: bytes):
    if len(buf) < _PREFIX.size:
        raise MalformedHeaderError("container shorter than its fixed prefix")
    got_magic, version, head_len = _PREFIX.unpack_from(buf)
    if got_magic != magic:
        raise MalformedHeaderError(
            f"bad magic {got_magic!r}; expected {magic!r}"
        )
    if version != _VERSION:
        raise VersionMismatchError(
            f"container version {version}; this build reads {_VERSION}"
        )
    off = _PREFIX.size
    if len(buf) < off + head_len:
        raise TruncatedPayloadError("header extends past end of buffer")
    try:
        header = json.loads(buf[off:off + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedHeaderError(f"header is not valid JSON: {e}") from e
    if not isinstance(header, dict):
        raise MalformedHeaderError("header must be a JSON object")
    return header, off + head_len


def _read_sections(buf: bytes, off: int, shapes_dtypes):
    out = []
    for shape, dtype in shapes_dtypes:
        if len(buf) < off + _LEN.size:
            raise TruncatedPayloadError("missing payload length prefix")
        (nbytes,) = _LEN.unpack_from(buf, off)
        off += _LEN.size
        expect = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if nbytes != expect:
            raise MalformedHeaderError(
                f"payload declares {nbytes} bytes where layout needs {expect}"
            )
        if len(buf) < off + nbytes:
            raise TruncatedPayloadError("payload section ends past end of buffer")
        arr = np.frombuffer(buf, dtype=dtype, count=expect // np.dtype(dtype).itemsize,
                            offset=off).reshape(shape)
        out.append(arr)
        off += nbytes
    if off != len(buf):
        raise MalformedHeaderError(f"{len(buf) - off} trailing bytes after payloads")
    return out


def save_model(model: ModelSpec) -> bytes:
    header = {
        "format": "lic-model",
        "name": model.name,
        "role": model.role,
        "bit_widths": model.bit_widths,
        "layers": [_layer_header(l) for l in model.layers],
    }
    payloads = []
    for layer in model.layers:
        for arr, role in zip(_layer_payloads(layer),
                             _TENSOR_ROLES[layer.kind]):
            payloads.append(np.asarray(arr, dtype=_ROLE_DTYPE[role]))
    return _pack(_MODEL_MAGIC, header, payloads)


def _tensor_shapes(entry: dict):
    kind = entry["kind"]
    cin, cout, k = entry["in_channels"], entry["out_channels"], entry["kernel"]
    if kind in ("conv", "deconv"):
        return [((cout, cin, k, k), "weights"), ((cout,), "bias")]
    if kind in ("gdn", "igdn"):
        return [((cout,), "beta"), ((cout, cout), "gamma")]
    return []


def _build_layer(entry: dict, arrays: dict) -> LayerSpec:
    kind = entry["kind"]
    common = dict(
        kind=kind,
        in_channels=entry["in_channels"],
        out_channels=entry["out_channels"],
        kernel=entry["kernel"],
        stride=entry["stride"],
        padding=entry["padding"],
    )
    if kind in ("conv", "deconv"):
        return LayerSpec(**common, weights=arrays["weights"], bias=arrays["bias"])
    if kind in ("gdn", "igdn"):
        params = GdnParams(beta=arrays["beta"], gamma=arrays["gamma"],
                           alpha=entry.get("alpha", 0.5))
        return LayerSpec(**common, gdn_params=params)
    return LayerSpec(**common)


def load_model(buf: bytes) -> ModelSpec:
    header, off = _unpack(buf, _MODEL_MAGIC)
    try:
        entries = header["layers"]
        shapes = []
        for entry in entries:
            shapes.extend((shape, _ROLE_DTYPE[role])
                          for shape, role in _tensor_shapes(entry))
        sections = _read_sections(buf, off, shapes)
        layers = []
        i = 0
        for entry in entries:
            arrays = {}
            for _, role in _tensor_shapes(entry):
                arrays[role] = sections[i]
                i += 1
            layers.append(_build_layer(entry, arrays))
        return ModelSpec(
            name=header["name"],
            layers=layers,
            role=header["role"],
            bit_widths=header.get("bit_widths"),
        )
    except (KeyError, TypeError) as e:
        raise MalformedHeaderError(f"model header missing field: {e}") from e


def _int_dtype(bits: int) -> str:
    if bits <= 8:
        return "<i1"
    if bits <= 16:
        return "<i2"
    return "<i4"


def save_quantized_model(qm) -> bytes:
    """Serialize a quantizer.QuantizedModel."""
    tensors = []
    payloads = []
    for li, layer in enumerate(qm.model.layers):
        for role in _TENSOR_ROLES[layer.kind]:
            p = qm.tensor_params[(li, role)]
            tensors.append({
                "layer": li,
                "role": role,
                "bits": p.bits,
                "scale": p.scale,
                "zero_point": p.zero_point,
                "saturated": qm.saturation.get((li, role), 0),
            })
            payloads.append(np.asarray(qm.payloads[(li, role)],
                                       dtype=_int_dtype(p.bits)))
    activations = [
        {"layer": li, "bits": p.bits, "scale": p.scale, "zero_point": p.zero_point}
        for li, p in sorted(qm.activation_params.items())
    ]
    header = {
        "format": "lic-quant-model",
        "name": qm.model.name,
        "role": qm.model.role,
        "bit_widths": qm.model.bit_widths,
        "layers": [_layer_header(l) for l in qm.model.layers],
        "quant": {"tensors": tensors, "activations": activations},
    }
    return _pack(_QUANT_MAGIC, header, payloads)


def load_quantized_model(buf: bytes):
    """Rebuild a quantizer.QuantizedModel; the embedded ModelSpec holds
    the dequantized parameters."""
    from .quantizer import QuantParams, QuantizedModel, dequantize

    header, off = _unpack(buf, _QUANT_MAGIC)
    try:
        entries = header["layers"]
        tensors = header["quant"]["tensors"]
        shape_by_key = {}
        for li, entry in enumerate(entries):
            for shape, role in _tensor_shapes(entry):
                shape_by_key[(li, role)] = shape
        shapes = []
        for t in tensors:
            shapes.append((shape_by_key[(t["layer"], t["role"])],
                           _int_dtype(t["bits"])))
        sections = _read_sections(buf, off, shapes)

        tensor_params, payloads, saturation = {}, {}, {}
        deq = {}
        for t, arr in zip(tensors, sections):
            key = (t["layer"], t["role"])
            p = QuantParams(scale=t["scale"], zero_point=t["zero_point"],
                            bits=t["bits"])
            tensor_params[key] = p
            payloads[key] = arr
            saturation[key] = t.get("saturated", 0)
            deq[key] = dequantize(arr, p)

        layers = []
        for li, entry in enumerate(entries):
            arrays = {role: deq[(li, role)] for _, role in _tensor_shapes(entry)}
            if entry["kind"] in ("gdn", "igdn"):
                # quantization floors beta at one step, never zero
                arrays["beta"] = np.maximum(arrays["beta"],
                                            tensor_params[(li, "beta")].scale)
            layers.append(_build_layer(entry, arrays))
        model = ModelSpec(name=header["name"], layers=layers, role=header["role"],
                          bit_widths=header.get("bit_widths"))
        activation_params = {
            int(a["layer"]): QuantParams(scale=a["scale"],
                                         zero_point=a["zero_point"],
                                         bits=a["bits"])
            for a in header["quant"]["activations"]
        }
        return QuantizedModel(
            model=model,
            tensor_params=tensor_params,
            payloads=payloads,
            activation_params=activation_params,
            saturation=saturation,
        )
    except (KeyError, TypeError) as e:
        raise MalformedHeaderError(f"quantized header missing field: {e}") from e
