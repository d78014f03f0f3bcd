"""Analytical throughput and memory-traffic model for a multi-core DPU.

A core's peak rate is pixel_parallel * input_channel_parallel *
output_channel_parallel MACs per cycle, counted as two operations each.
Frame rate follows from the per-frame workload:

    fps = (cores * peak_ops_per_cycle * freq_hz * eta)
          / (workload_ops * workload_scale)

eta is the sustained-efficiency derate. workload_scale rescales the
nominal workload to what the deployed graph actually executes (patch
overlap, fused ops, compiler differences); 1.0 means take the workload
number at face value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DomainError, ParameterError
from .model import ModelSpec, flops_of, layer_output_dims

__all__ = [
    "DpuConfig",
    "peak_ops_per_cycle",
    "FpsEstimate",
    "estimate_fps",
    "LayerTraffic",
    "bandwidth_load",
    "traffic_of_model",
    "WorkloadProfile",
    "workload_from_model",
]


@dataclass(frozen=True)
class DpuConfig:
    """Accelerator geometry and operating point."""

    pixel_parallel: int = 8
    input_channel_parallel: int = 16
    output_channel_parallel: int = 16
    cores: int = 3
    freq_hz: float = 300e6
    eta: float = 0.8
    mem_bandwidth_bytes_per_s: float = 19.2e9
    workload_scale: float = 1.0

    def __post_init__(self):
        for name in ("pixel_parallel", "input_channel_parallel",
                     "output_channel_parallel", "cores"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be a positive integer")
        if not self.freq_hz > 0:
            raise ParameterError("freq_hz must be positive")
        if not 0.0 < self.eta <= 1.0:
            raise ParameterError("eta must lie in (0, 1]")
        if not self.mem_bandwidth_bytes_per_s > 0:
            raise ParameterError("mem_bandwidth_bytes_per_s must be positive")
        if not self.workload_scale > 0:
            raise ParameterError("workload_scale must be positive")


def peak_ops_per_cycle(cfg: DpuConfig):
    """(per-core, all-cores) peak operations per clock cycle."""
    per_core = (cfg.pixel_parallel * cfg.input_channel_parallel
                * cfg.output_channel_parallel * 2)
    return per_core, per_core * cfg.cores


def effective_ops_per_s(cfg: DpuConfig) -> float:
    _, total = peak_ops_per_cycle(cfg)
    return total * cfg.freq_hz * cfg.eta


def per_core_effective_ops_per_s(cfg: DpuConfig) -> float:
    per_core, _ = peak_ops_per_cycle(cfg)
    return per_core * cfg.freq_hz * cfg.eta


@dataclass(frozen=True)
class WorkloadProfile:
    """Per-frame operation counts keyed by pipeline role."""

    per_role: dict = field(default_factory=dict)

    def __post_init__(self):
        for role, ops in self.per_role.items():
            if not float(ops) >= 0:
                raise ParameterError(f"workload for {role!r} must be >= 0")

    @property
    def total(self) -> float:
        return float(sum(self.per_role.values()))

    @classmethod
    def from_gop(cls, per_role_gop: dict) -> "WorkloadProfile":
        return cls({role: float(g) * 1e9 for role, g in per_role_gop.items()})

    @staticmethod
    def combine(profiles) -> "WorkloadProfile":
        merged = {}
        for p in profiles:
            for role, ops in p.per_role.items():
                merged[role] = merged.get(role, 0.0) + ops
        return WorkloadProfile(merged)


@dataclass(frozen=True)
class FpsEstimate:
    t_compute_s: float
    t_frame_s: float
    fps: float


def estimate_fps(cfg: DpuConfig, workload: WorkloadProfile) -> FpsEstimate:
    """Frame rate from compute alone; memory stalls are the simulator's
    domain, and eta is presumed to absorb steady-state inefficiency."""
    ops = workload.total * cfg.workload_scale
    if not ops > 0:
        raise DomainError("workload must contain a positive operation count")
    t_compute = ops / effective_ops_per_s(cfg)
    return FpsEstimate(t_compute_s=t_compute, t_frame_s=t_compute,
                       fps=1.0 / t_compute)


@dataclass(frozen=True)
class LayerTraffic:
    """Memory traffic terms for one layer: input map + output map +
    weights, each at the layer's bit width.

    h/w are the input extents, n_in/n_out the channel counts, kernel the
    filter size, bits the precision of this layer's data.
    """

    h: int
    w: int
    n_in: int
    n_out: int
    kernel: int
    bits: int

    def __post_init__(self):
        if min(self.h, self.w, self.n_in, self.n_out, self.kernel) < 1:
            raise ParameterError("traffic extents must be positive")
        if self.bits < 1:
            raise ParameterError("bits must be positive")


def bandwidth_load(layers) -> tuple:
    """Total bits and bytes moved per frame across all layers.

    Per layer: H*W*N_in*bits (read the input map) + H*W*N_out*bits
    (write the output map) + N_in*N_out*K^2*bits (fetch weights).
    """
    total_bits = 0
    for t in layers:
        maps = t.h * t.w * (t.n_in + t.n_out)
        weights = t.n_in * t.n_out * t.kernel ** 2
        total_bits += (maps + weights) * t.bits
    return total_bits, total_bits / 8


def traffic_of_model(model: ModelSpec, input_hw, default_bits: int = 8):
    """LayerTraffic rows for a model's conv/deconv layers."""
    h, w = int(input_hw[0]), int(input_hw[1])
    rows = []
    for li, layer in enumerate(model.layers):
        bits = (model.bit_widths[li] if model.bit_widths is not None
                else default_bits)
        if layer.kind in ("conv", "deconv"):
            rows.append(LayerTraffic(h=h, w=w, n_in=layer.in_channels,
                                     n_out=layer.out_channels,
                                     kernel=layer.kernel, bits=bits))
        h, w = layer_output_dims(layer, h, w)
    return rows


def workload_from_model(model: ModelSpec, input_hw) -> WorkloadProfile:
    """Per-frame operations of one module, keyed by its role."""
    return WorkloadProfile({model.role: float(flops_of(model, input_hw).total)})
