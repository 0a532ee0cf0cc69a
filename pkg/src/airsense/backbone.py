"""Benchmark backbone graph: three convolution blocks plus three upsampling
transposed convolutions, runnable on the dense, sparse, or sparse+submanifold
engine with per-layer instrumentation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .spconv import (
    ActiveMask,
    ConvMode,
    ConvSpec,
    FeatureMap,
    KernelTensor,
    MacCounter,
    compact_active_sites,
    scatter_conv,
    scatter_reachable_mask,
    sparse_scatter_conv,
    submanifold_conv,
    transposed_conv,
)

__all__ = [
    "BackboneSpec",
    "BackboneWeights",
    "LayerStats",
    "InstrumentationReport",
    "make_backbone_weights",
    "run_backbone",
    "ENGINES",
]

ENGINES = ("dense", "sparse", "sparse+submanifold")


@dataclass(frozen=True)
class BackboneSpec:
    """Graph shape. Defaults keep the 4/6/6 block layout; channel widths are
    configurable because they trade desk-scale test time against realism."""

    block_convs: tuple[int, int, int] = (4, 6, 6)
    block_channels: tuple[int, int, int] = (64, 128, 256)
    block_strides: tuple[int, int, int] = (2, 2, 2)
    up_strides: tuple[int, int, int] = (1, 2, 4)
    up_channels: int = 128
    kernel_size: int = 3
    relu: bool = False

    def __post_init__(self):
        if len(self.block_convs) != 3:
            raise ValueError("exactly three convolution blocks expected")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")

    @property
    def num_layers(self) -> int:
        return sum(self.block_convs) + 3


@dataclass
class BackboneWeights:
    kernels: list[KernelTensor]
    biases: list[np.ndarray | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.biases:
            self.biases = [None] * len(self.kernels)
        if len(self.biases) != len(self.kernels):
            raise ValueError("one bias entry per kernel required")


def _layer_plan(spec: BackboneSpec, in_channels: int):
    """Yield (kind, stride, c_in, c_out, is_block_first) in execution order:
    all block convolutions first, then the three upsampling stages."""
    plan = []
    c_prev = in_channels
    for b, n_convs in enumerate(spec.block_convs):
        c_out = spec.block_channels[b]
        for i in range(n_convs):
            stride = spec.block_strides[b] if i == 0 else 1
            plan.append(("conv", stride, c_prev, c_out, i == 0))
            c_prev = c_out
    for b in range(3):
        plan.append(("deconv", spec.up_strides[b], spec.block_channels[b], spec.up_channels, False))
    return plan


def make_backbone_weights(spec: BackboneSpec, in_channels: int,
                          rng: np.random.Generator) -> BackboneWeights:
    """Random weights shaped for the graph, scaled to keep activations O(1)."""
    kernels = []
    for kind, stride, c_in, c_out, _ in _layer_plan(spec, in_channels):
        k = spec.kernel_size
        scale = 1.0 / np.sqrt(k * k * c_in)
        kernels.append(KernelTensor(
            (rng.normal(size=(c_out, k, k, c_in)) * scale).astype(np.float32)))
    return BackboneWeights(kernels)


@dataclass
class LayerStats:
    index: int
    kind: str
    stride: int
    macs: int
    density: float
    nanoseconds: int


@dataclass
class InstrumentationReport:
    engine: str
    layers: list[LayerStats]

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def total_nanoseconds(self) -> int:
        return sum(l.nanoseconds for l in self.layers)

    def to_text(self) -> str:
        """Flat key-value block, one fact per line."""
        lines = [f"engine = {self.engine}", f"layers = {len(self.layers)}"]
        for l in self.layers:
            pre = f"layer.{l.index:02d}"
            lines.append(f"{pre}.kind = {l.kind}")
            lines.append(f"{pre}.stride = {l.stride}")
            lines.append(f"{pre}.macs = {l.macs}")
            lines.append(f"{pre}.density = {l.density:.6f}")
            lines.append(f"{pre}.nanoseconds = {l.nanoseconds}")
        lines.append(f"total.macs = {self.total_macs}")
        lines.append(f"total.nanoseconds = {self.total_nanoseconds}")
        return "\n".join(lines) + "\n"


def _apply_hooks(values: np.ndarray, bias: np.ndarray | None, relu: bool) -> np.ndarray:
    if bias is not None:
        values = values + bias.astype(np.float32)
    if relu:
        values = np.maximum(values, 0.0)
    return values


def run_backbone(pseudo_image, spec: BackboneSpec, weights: BackboneWeights,
                 engine: str = "dense") -> tuple[FeatureMap, InstrumentationReport]:
    """Forward pass of the [4, 6, 6] + 3-deconv graph on the chosen engine.

    The three engines are numerically interchangeable: sparse paths carry an
    explicit reachable-set mask whose complement is exactly zero. The
    submanifold engine applies the set-preserving convolution everywhere
    except the first (strided) convolution of each block and the deconvs.
    Returns the channel-concatenated upsampled maps plus per-layer stats.
    """
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}, got {engine!r}")
    values = np.asarray(pseudo_image.values, dtype=np.float32)
    fm = FeatureMap(values)
    mask = ActiveMask(np.asarray(pseudo_image.mask, dtype=bool)) if hasattr(pseudo_image, "mask") \
        else ActiveMask(np.abs(values).max(axis=2) > 0)
    if mask.flags.shape != (fm.p, fm.q):
        raise ValueError("occupancy mask does not match pseudo-image grid")

    plan = _layer_plan(spec, fm.channels)
    if len(weights.kernels) != len(plan):
        raise ValueError(f"graph needs {len(plan)} kernels, got {len(weights.kernels)}")

    stats: list[LayerStats] = []
    block_outputs: list[tuple[FeatureMap, ActiveMask]] = []
    block_ends = np.cumsum(spec.block_convs)

    cur_fm, cur_mask = fm, mask
    deconv_inputs_done = 0
    for idx, (kind, stride, c_in, c_out, is_first) in enumerate(plan):
        if kind == "deconv":
            src_fm, src_mask = block_outputs[deconv_inputs_done]
            deconv_inputs_done += 1
        else:
            src_fm, src_mask = cur_fm, cur_mask
        if src_fm.channels != c_in:
            raise ValueError(f"layer {idx} expects {c_in} channels, got {src_fm.channels}")

        kernel = weights.kernels[idx]
        if kernel.in_channels != c_in or kernel.out_channels != c_out:
            raise ValueError(f"kernel {idx} shape mismatch for layer plan")
        counter = MacCounter()
        density = src_mask.popcount() / (src_fm.p * src_fm.q)
        t0 = time.perf_counter_ns()

        if engine == "dense":
            mode = ConvMode.TRANSPOSED if kind == "deconv" else ConvMode.STANDARD
            out = scatter_conv(src_fm, kernel, ConvSpec(stride=stride, mode=mode), counter=counter)
            out_mask = ActiveMask(np.ones((out.p, out.q), dtype=bool))
        else:
            sfm = compact_active_sites(src_mask, src_fm)
            submanifold_layer = (engine == "sparse+submanifold" and kind == "conv" and not is_first)
            if submanifold_layer:
                out_s = submanifold_conv(sfm, kernel, counter=counter)
                out = out_s.to_dense()
                out_mask = src_mask
            elif kind == "deconv":
                out = transposed_conv(sfm, kernel, stride, counter=counter)
                out_mask = scatter_reachable_mask(src_mask, kernel.k, stride, transposed=True)
            else:
                out = sparse_scatter_conv(sfm, kernel, ConvSpec(stride=stride), counter=counter)
                out_mask = scatter_reachable_mask(src_mask, kernel.k, stride)

        out = FeatureMap(_apply_hooks(out.values, weights.biases[idx], spec.relu))
        t1 = time.perf_counter_ns()
        stats.append(LayerStats(idx, kind, stride, counter.count, density, t1 - t0))

        if kind == "conv":
            cur_fm, cur_mask = out, out_mask
            if idx + 1 in block_ends:
                block_outputs.append((out, out_mask))
        else:
            block_outputs[deconv_inputs_done - 1] = (out, out_mask)

    shapes = {(f.p, f.q) for f, _ in block_outputs}
    if len(shapes) != 1:
        raise ValueError(f"upsampled block outputs disagree on size: {sorted(shapes)}")
    final = FeatureMap(np.concatenate([f.values for f, _ in block_outputs], axis=2))
    return final, InstrumentationReport(engine, stats)
