"""Scatter-based 2D convolution engines over dense and sparse feature maps.

The core primitive pushes each input element's weighted contributions out to
the output cells selected by the filter tap, instead of gathering a
neighborhood per output cell. Combined with active-site compaction this gives
a sparse engine whose work scales with the number of active sites rather than
the grid area. No rule book and no coordinate hash map is built anywhere:
destination cells follow from index arithmetic alone.

All feature values are stored as float32; accumulation happens in float64 and
results are rounded back to float32 on output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "ConvMode",
    "ConvSpec",
    "FeatureMap",
    "ActiveMask",
    "SparseFeatureMap",
    "KernelTensor",
    "MacCounter",
    "gather_conv",
    "scatter_conv",
    "compact_active_sites",
    "sparse_scatter_conv",
    "submanifold_conv",
    "transposed_conv",
    "scatter_reachable_mask",
]


class ConvMode(str, Enum):
    STANDARD = "standard"
    SUBMANIFOLD = "submanifold"
    TRANSPOSED = "transposed"


@dataclass(frozen=True)
class ConvSpec:
    """Stride and mode of a convolution; padding is implicitly same-centered."""

    stride: int = 1
    mode: ConvMode = ConvMode.STANDARD

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.mode == ConvMode.SUBMANIFOLD and self.stride != 1:
            raise ValueError("submanifold convolution requires stride 1")


class MacCounter:
    """Accumulates the number of multiply operations an engine performed."""

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)

    def reset(self):
        self.count = 0


@dataclass
class FeatureMap:
    """Dense multichannel 2D grid, values float32 with shape (p, q, C)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ValueError(f"feature map must be (p, q, C), got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1 or v.shape[2] < 1:
            raise ValueError(f"feature map dims must be >= 1, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("feature map contains non-finite values")
        self.values = v

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class ActiveMask:
    """Boolean occupancy over a (p, q) grid."""

    flags: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.flags, dtype=bool)
        if f.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {f.shape}")
        self.flags = f

    @property
    def p(self) -> int:
        return self.flags.shape[0]

    @property
    def q(self) -> int:
        return self.flags.shape[1]

    def popcount(self) -> int:
        return int(self.flags.sum())


@dataclass
class SparseFeatureMap:
    """Active sites of a (p, q, C) grid in row-major order.

    coords is (l, 2) int64 holding unique (row, col) pairs sorted row-major;
    feats is the matching (l, C) float32 feature block.
    """

    p: int
    q: int
    coords: np.ndarray
    feats: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        f = np.asarray(self.feats, dtype=np.float32)
        if f.ndim != 2 or f.shape[0] != c.shape[0]:
            raise ValueError("feats must be (l, C) matching coords")
        if c.shape[0]:
            if c[:, 0].min() < 0 or c[:, 0].max() >= self.p:
                raise ValueError("site row out of bounds")
            if c[:, 1].min() < 0 or c[:, 1].max() >= self.q:
                raise ValueError("site col out of bounds")
            keys = c[:, 0] * self.q + c[:, 1]
            if not (np.diff(keys) > 0).all():
                raise ValueError("sites must be unique and row-major sorted")
        self.coords = c
        self.feats = f

    @property
    def num_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def channels(self) -> int:
        return self.feats.shape[1]

    def to_dense(self) -> FeatureMap:
        out = np.zeros((self.p, self.q, self.channels), dtype=np.float32)
        out[self.coords[:, 0], self.coords[:, 1]] = self.feats
        return FeatureMap(out)

    def active_mask(self) -> ActiveMask:
        flags = np.zeros((self.p, self.q), dtype=bool)
        flags[self.coords[:, 0], self.coords[:, 1]] = True
        return ActiveMask(flags)

    @classmethod
    def from_dense(cls, fm: FeatureMap, mask: ActiveMask | None = None) -> "SparseFeatureMap":
        if mask is None:
            mask = ActiveMask(np.abs(fm.values).max(axis=2) > 0)
        return compact_active_sites(mask, fm)


@dataclass
class KernelTensor:
    """Filter bank with weights (F, k, k, C); k must be odd."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        if w.ndim != 4 or w.shape[1] != w.shape[2]:
            raise ValueError(f"weights must be (F, k, k, C), got shape {w.shape}")
        if w.shape[1] % 2 == 0:
            raise ValueError(f"kernel side must be odd, got {w.shape[1]}")
        if not np.isfinite(w).all():
            raise ValueError("kernel contains non-finite weights")
        self.weights = w

    @property
    def k(self) -> int:
        return self.weights.shape[1]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[3]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


def _check_input(channels: int, kernel: KernelTensor):
    if kernel.in_channels != channels:
        raise ValueError(
            f"kernel expects {kernel.in_channels} input channels, map has {channels}"
        )


def _standard_out_dims(p: int, q: int, stride: int) -> tuple[int, int]:
    return (p + stride - 1) // stride, (q + stride - 1) // stride


def gather_conv(fm: FeatureMap, kernel: KernelTensor, spec: ConvSpec = ConvSpec()) -> FeatureMap:
    """Reference gather convolution: each output cell sums its input window.

    Kept deliberately independent from the scatter engines so it can serve as
    their oracle. Same-centered zero padding; float64 accumulation.
    """
    if spec.mode != ConvMode.STANDARD:
        raise ValueError("gather_conv only implements standard mode")
    _check_input(fm.channels, kernel)
    p, q, c = fm.values.shape
    k = kernel.k
    a = k // 2
    s = spec.stride
    padded = np.zeros((p + 2 * a, q + 2 * a, c), dtype=np.float64)
    padded[a:a + p, a:a + q] = fm.values
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    win = win[::s, ::s]  # (out_p, out_q, C, k, k)
    out_p, out_q = win.shape[0], win.shape[1]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(out_p * out_q, k * k * c)
    wmat = kernel.weights.astype(np.float64).reshape(kernel.out_channels, k * k * c)
    out = cols @ wmat.T
    return FeatureMap(out.reshape(out_p, out_q, kernel.out_channels).astype(np.float32))


def _scatter_dense(values64: np.ndarray, kernel64: np.ndarray, stride: int,
                   transposed: bool, counter: MacCounter | None) -> np.ndarray:
    """Full-grid scatter: per filter tap, multiply the contributing sub-grid
    and add it to the matching output slice. Destinations of one tap never
    collide, so plain slice addition is conflict-free."""
    p, q, c = values64.shape
    fout, k = kernel64.shape[0], kernel64.shape[1]
    a = k // 2
    if transposed:
        out_p, out_q = p * stride, q * stride
    else:
        out_p, out_q = _standard_out_dims(p, q, stride)
    out = np.zeros((out_p, out_q, fout), dtype=np.float64)
    macs = 0
    for m in range(k):
        for n in range(k):
            if transposed:
                macs += p * q * c * fout
                src_r, dst_r = _transposed_span(p, out_p, m, a, stride)
                src_c, dst_c = _transposed_span(q, out_q, n, a, stride)
            else:
                # count every stride-surviving site for this tap, including
                # contributions the boundary crop will drop, matching the
                # convention of the site-list path
                macs += (len(range((m - a) % stride, p, stride))
                         * len(range((n - a) % stride, q, stride)) * c * fout)
                src_r, dst_r = _standard_span(p, out_p, m, a, stride)
                src_c, dst_c = _standard_span(q, out_q, n, a, stride)
            if src_r is None or src_c is None:
                continue
            block = values64[src_r, src_c]
            nr, nc = block.shape[0], block.shape[1]
            if nr == 0 or nc == 0:
                continue
            contrib = block.reshape(nr * nc, c) @ kernel64[:, m, n, :].T
            out[dst_r, dst_c] += contrib.reshape(nr, nc, fout)
    if counter is not None:
        counter.add(macs)
    return out


def _standard_span(p: int, out_p: int, m: int, a: int, s: int):
    """Source/destination slices for tap offset m of a strided forward pass.

    A source index i lands on output (i - m + a) / s when that quantity is a
    nonnegative multiple of s inside the output grid.
    """
    lo = (a - m + s - 1) // s if a > m else 0  # ceil((a - m) / s) clamped at 0
    hi = min(out_p - 1, (p - 1 - m + a) // s)
    if hi < lo:
        return None, None
    i_start = lo * s + m - a
    n = hi - lo + 1
    return slice(i_start, i_start + (n - 1) * s + 1, s), slice(lo, hi + 1)


def _transposed_span(p: int, out_p: int, m: int, a: int, s: int):
    """Source/destination slices for tap offset m of a transposed pass.

    Source i scatters to i * s - m + a; out-of-range destinations are cropped.
    """
    lo = max(0, (m - a + s - 1) // s) if m > a else 0
    hi = min(p - 1, (out_p - 1 + m - a) // s)
    if hi < lo:
        return None, None
    d_start = lo * s - m + a
    n = hi - lo + 1
    return slice(lo, hi + 1), slice(d_start, d_start + (n - 1) * s + 1, s)


def _scatter_sites(coords: np.ndarray, feats64: np.ndarray, kernel64: np.ndarray,
                   stride: int, out_p: int, out_q: int, transposed: bool) -> tuple[np.ndarray, int]:
    """Scatter from an explicit site list into a dense output buffer.

    Within one filter tap every site maps to a distinct destination, so
    fancy-index accumulation needs no conflict handling. Multiplications are
    counted before boundary cropping drops any contribution.
    """
    fout, k = kernel64.shape[0], kernel64.shape[1]
    c = feats64.shape[1]
    a = k // 2
    out = np.zeros((out_p, out_q, fout), dtype=np.float64)
    macs = 0
    rows = coords[:, 0]
    cols = coords[:, 1]
    for m in range(k):
        for n in range(k):
            if transposed:
                di = rows * stride - m + a
                dj = cols * stride - n + a
                feats_mn = feats64
            else:
                di = rows - m + a
                dj = cols - n + a
                if stride > 1:
                    sel = (di % stride == 0) & (dj % stride == 0)
                    di = di[sel] // stride
                    dj = dj[sel] // stride
                    feats_mn = feats64[sel]
                else:
                    feats_mn = feats64
            if feats_mn.shape[0] == 0:
                continue
            macs += feats_mn.shape[0] * c * fout
            contrib = feats_mn @ kernel64[:, m, n, :].T
            inb = (di >= 0) & (di < out_p) & (dj >= 0) & (dj < out_q)
            if inb.all():
                out[di, dj] += contrib
            else:
                out[di[inb], dj[inb]] += contrib[inb]
    return out, macs


def _partition(n: int, workers: int) -> list[slice]:
    step = (n + workers - 1) // workers
    return [slice(i, min(i + step, n)) for i in range(0, n, step)]


def scatter_conv(fm: FeatureMap, kernel: KernelTensor, spec: ConvSpec = ConvSpec(),
                 counter: MacCounter | None = None, workers: int = 1) -> FeatureMap:
    """Dense convolution in scatter form.

    Equals gather_conv up to floating point reassociation. workers > 1 splits
    the grid into site ranges accumulated into per-worker buffers that are
    summed in a fixed order; workers == 1 is the sequential deterministic mode.
    """
    _check_input(fm.channels, kernel)
    transposed = spec.mode == ConvMode.TRANSPOSED
    if spec.mode == ConvMode.SUBMANIFOLD:
        raise ValueError("use submanifold_conv for submanifold mode")
    values64 = fm.values.astype(np.float64)
    kernel64 = kernel.weights.astype(np.float64)
    if workers <= 1:
        out = _scatter_dense(values64, kernel64, spec.stride, transposed, counter)
        return FeatureMap(out.astype(np.float32))
    p, q, _ = values64.shape
    grid = np.stack(np.unravel_index(np.arange(p * q), (p, q)), axis=1)
    feats = values64.reshape(p * q, -1)
    if transposed:
        out_p, out_q = p * spec.stride, q * spec.stride
    else:
        out_p, out_q = _standard_out_dims(p, q, spec.stride)
    parts = _partition(p * q, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(
            lambda sl: _scatter_sites(grid[sl], feats[sl], kernel64,
                                      spec.stride, out_p, out_q, transposed),
            parts,
        ))
    out = np.zeros((out_p, out_q, kernel.out_channels), dtype=np.float64)
    macs = 0
    for buf, n in results:
        out += buf
        macs += n
    if counter is not None:
        counter.add(macs)
    return FeatureMap(out.astype(np.float32))


def compact_active_sites(mask: ActiveMask, fm: FeatureMap) -> SparseFeatureMap:
    """Compress the active sites of a dense map into row-major site order.

    Destination slots come from an exclusive prefix sum over the flattened
    mask, so site i of the output is the i-th set flag in row-major order.
    """
    if mask.flags.shape != fm.values.shape[:2]:
        raise ValueError(
            f"mask shape {mask.flags.shape} does not match map {fm.values.shape[:2]}"
        )
    flat = mask.flags.ravel()
    ones = flat.astype(np.int64)
    slots = np.cumsum(ones) - ones  # exclusive prefix sum
    total = int(ones.sum())
    coords = np.empty((total, 2), dtype=np.int64)
    feats = np.empty((total, fm.channels), dtype=np.float32)
    idx = np.nonzero(flat)[0]
    dest = slots[idx]
    coords[dest, 0] = idx // fm.q
    coords[dest, 1] = idx % fm.q
    feats[dest] = fm.values.reshape(-1, fm.channels)[idx]
    return SparseFeatureMap(fm.p, fm.q, coords, feats)


def sparse_scatter_conv(sfm: SparseFeatureMap, kernel: KernelTensor,
                        spec: ConvSpec = ConvSpec(), counter: MacCounter | None = None,
                        workers: int = 1) -> FeatureMap:
    """Convolution over active sites only; output is returned densified.

    Work is proportional to the site count: exactly l * k^2 * C * F multiplies
    at stride 1. Out-of-range destinations are cropped after the multiply.
    """
    _check_input(sfm.channels, kernel)
    if spec.mode == ConvMode.SUBMANIFOLD:
        raise ValueError("use submanifold_conv for submanifold mode")
    transposed = spec.mode == ConvMode.TRANSPOSED
    if transposed:
        out_p, out_q = sfm.p * spec.stride, sfm.q * spec.stride
    else:
        out_p, out_q = _standard_out_dims(sfm.p, sfm.q, spec.stride)
    feats64 = sfm.feats.astype(np.float64)
    kernel64 = kernel.weights.astype(np.float64)
    if workers <= 1 or sfm.num_sites == 0:
        out, macs = _scatter_sites(sfm.coords, feats64, kernel64,
                                   spec.stride, out_p, out_q, transposed)
    else:
        parts = _partition(sfm.num_sites, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda sl: _scatter_sites(sfm.coords[sl], feats64[sl], kernel64,
                                          spec.stride, out_p, out_q, transposed),
                parts,
            ))
        out = np.zeros((out_p, out_q, kernel.out_channels), dtype=np.float64)
        macs = 0
        for buf, n in results:
            out += buf
            macs += n
    if counter is not None:
        counter.add(macs)
    return FeatureMap(out.astype(np.float32))


def submanifold_conv(sfm: SparseFeatureMap, kernel: KernelTensor,
                     counter: MacCounter | None = None) -> SparseFeatureMap:
    """Stride-1 convolution that keeps the active set fixed.

    Scatter from the active sites into a dense buffer, then read the buffer
    back at exactly the input active set: values outside it are discarded, so
    the active set never dilates.
    """
    _check_input(sfm.channels, kernel)
    dense = sparse_scatter_conv(sfm, kernel, ConvSpec(stride=1), counter=counter)
    feats = dense.values[sfm.coords[:, 0], sfm.coords[:, 1]]
    return SparseFeatureMap(sfm.p, sfm.q, sfm.coords.copy(), feats)


def transposed_conv(sfm: SparseFeatureMap, kernel: KernelTensor, stride: int,
                    counter: MacCounter | None = None, workers: int = 1) -> FeatureMap:
    """Transposed (upsampling) convolution from active sites.

    Site (i, j) scatters to (i*s - m + a, j*s - n + a); equivalent to a
    zero-insertion upsample to (p*s, q*s) followed by stride-1 scatter.
    """
    return sparse_scatter_conv(sfm, kernel, ConvSpec(stride=stride, mode=ConvMode.TRANSPOSED),
                               counter=counter, workers=workers)


def scatter_reachable_mask(mask: ActiveMask, k: int, stride: int = 1,
                           transposed: bool = False) -> ActiveMask:
    """Cells that can receive a contribution when the masked sites scatter.

    This is the active set of a standard sparse convolution's output; cells
    outside it are exactly zero.
    """
    a = k // 2
    p, q = mask.flags.shape
    if transposed:
        out_p, out_q = p * stride, q * stride
    else:
        out_p, out_q = _standard_out_dims(p, q, stride)
    out = np.zeros((out_p, out_q), dtype=bool)
    rows, cols = np.nonzero(mask.flags)
    for m in range(k):
        for n in range(k):
            if transposed:
                di = rows * stride - m + a
                dj = cols * stride - n + a
            else:
                di = rows - m + a
                dj = cols - n + a
                if stride > 1:
                    sel = (di % stride == 0) & (dj % stride == 0)
                    di = di[sel] // stride
                    dj = dj[sel] // stride
            inb = (di >= 0) & (di < out_p) & (dj >= 0) & (dj < out_q)
            out[di[inb], dj[inb]] = True
    return ActiveMask(out)
