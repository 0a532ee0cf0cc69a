import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airsense.spconv import (
    ActiveMask,
    ConvMode,
    ConvSpec,
    FeatureMap,
    KernelTensor,
    MacCounter,
    SparseFeatureMap,
    compact_active_sites,
    gather_conv,
    scatter_conv,
    scatter_reachable_mask,
    sparse_scatter_conv,
    submanifold_conv,
    transposed_conv,
)


def naive_gather(values, weights, stride=1):
    """Quadruple-loop oracle for the oracle: textbook windowed sum."""
    p, q, c = values.shape
    f, k = weights.shape[0], weights.shape[1]
    a = k // 2
    out_p = (p + stride - 1) // stride
    out_q = (q + stride - 1) // stride
    out = np.zeros((out_p, out_q, f))
    for oy in range(out_p):
        for ox in range(out_q):
            acc = np.zeros(f)
            for m in range(k):
                for n in range(k):
                    iy = oy * stride + m - a
                    ix = ox * stride + n - a
                    if 0 <= iy < p and 0 <= ix < q:
                        acc += weights[:, m, n, :].astype(np.float64) @ \
                            values[iy, ix].astype(np.float64)
            out[oy, ox] = acc
    return out


def random_case(rng, p, q, c, f, k, density=1.0):
    values = rng.normal(size=(p, q, c)).astype(np.float32)
    mask = rng.random((p, q)) < density
    values = values * mask[:, :, None]
    kernel = KernelTensor(rng.normal(size=(f, k, k, c)).astype(np.float32))
    return FeatureMap(values), ActiveMask(mask), kernel


class TestValidation:
    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            KernelTensor(np.zeros((1, 2, 2, 1), dtype=np.float32))

    def test_channel_mismatch_rejected(self, rng):
        fm = FeatureMap(rng.normal(size=(4, 4, 2)).astype(np.float32))
        kt = KernelTensor(rng.normal(size=(1, 3, 3, 3)).astype(np.float32))
        with pytest.raises(ValueError):
            gather_conv(fm, kt)
        with pytest.raises(ValueError):
            scatter_conv(fm, kt)

    def test_submanifold_spec_requires_stride_one(self):
        with pytest.raises(ValueError):
            ConvSpec(stride=2, mode=ConvMode.SUBMANIFOLD)

    def test_sparse_sites_must_be_sorted_unique(self):
        with pytest.raises(ValueError):
            SparseFeatureMap(4, 4, np.array([[1, 1], [0, 0]]),
                             np.zeros((2, 1), dtype=np.float32))
        with pytest.raises(ValueError):
            SparseFeatureMap(4, 4, np.array([[0, 5]]), np.zeros((1, 1), dtype=np.float32))


class TestGatherReference:
    def test_identity_kernel(self, rng):
        fm = FeatureMap(rng.normal(size=(6, 5, 1)).astype(np.float32))
        kt = KernelTensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = gather_conv(fm, kt)
        assert np.array_equal(out.values, fm.values)

    def test_zero_input(self, rng):
        fm = FeatureMap(np.zeros((7, 7, 3), dtype=np.float32))
        kt = KernelTensor(rng.normal(size=(2, 3, 3, 3)).astype(np.float32))
        assert not gather_conv(fm, kt).values.any()

    def test_single_pixel_box_expansion(self):
        # 5x5 input, one nonzero pixel at (2,2), all-ones 3x3 kernel:
        # hand expansion gives a 3x3 block of that value centered at (2,2)
        values = np.zeros((5, 5, 1), dtype=np.float32)
        values[2, 2, 0] = 4.25
        kt = KernelTensor(np.ones((1, 3, 3, 1), dtype=np.float32))
        out = gather_conv(FeatureMap(values), kt).values[:, :, 0]
        expected = np.zeros((5, 5), dtype=np.float32)
        expected[1:4, 1:4] = 4.25
        assert np.array_equal(out, expected)

    def test_against_naive_loops(self, rng):
        for stride in (1, 2):
            fm, _, kt = random_case(rng, 7, 6, 3, 2, 3)
            ref = naive_gather(fm.values, kt.weights, stride)
            got = gather_conv(fm, kt, ConvSpec(stride=stride)).values
            assert got.shape == ref.shape
            np.testing.assert_allclose(got, ref, atol=1e-5)


class TestScatterConv:
    def test_identity_kernel(self, rng):
        fm = FeatureMap(rng.normal(size=(4, 9, 1)).astype(np.float32))
        kt = KernelTensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        assert np.array_equal(scatter_conv(fm, kt).values, fm.values)

    def test_tap_lands_one_up_left_of_source(self):
        # source at (2,2), tap (m,n)=(2,2), k=3: contribution lands at
        # (2-2+1, 2-2+1) = (1,1), the seventh cell of a 5x5 grid
        values = np.zeros((5, 5, 1), dtype=np.float32)
        values[2, 2, 0] = 3.0
        weights = np.zeros((1, 3, 3, 1), dtype=np.float32)
        weights[0, 2, 2, 0] = 2.0
        out = scatter_conv(FeatureMap(values), KernelTensor(weights)).values[:, :, 0]
        assert out[1, 1] == 6.0
        assert np.count_nonzero(out) == 1
        assert np.ravel_multi_index((1, 1), (5, 5)) == 6  # y_7 one-based

    @settings(max_examples=150, deadline=None)
    @given(seed=st.integers(0, 10_000), stride=st.sampled_from([1, 2]),
           k=st.sampled_from([1, 3, 5]))
    def test_matches_gather_oracle(self, seed, stride, k):
        r = np.random.default_rng(seed)
        p, q = int(r.integers(1, 17)), int(r.integers(1, 17))
        c, f = int(r.integers(1, 5)), int(r.integers(1, 5))
        fm, _, kt = random_case(r, p, q, c, f, k)
        ref = gather_conv(fm, kt, ConvSpec(stride=stride))
        got = scatter_conv(fm, kt, ConvSpec(stride=stride))
        np.testing.assert_allclose(got.values, ref.values, atol=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_linearity(self, seed):
        r = np.random.default_rng(seed)
        x, _, kt = random_case(r, 8, 8, 2, 3, 3)
        y, _, _ = random_case(r, 8, 8, 2, 3, 3)
        a, b = 0.75, -1.5
        combo = FeatureMap(a * x.values + b * y.values)
        lhs = scatter_conv(combo, kt).values
        rhs = a * scatter_conv(x, kt).values + b * scatter_conv(y, kt).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_sequential_bit_reproducible(self, rng):
        fm, _, kt = random_case(rng, 16, 16, 4, 4, 3)
        a = scatter_conv(fm, kt, ConvSpec(stride=1))
        b = scatter_conv(fm, kt, ConvSpec(stride=1))
        assert np.array_equal(a.values, b.values)

    def test_parallel_matches_sequential(self, rng):
        fm, _, kt = random_case(rng, 16, 16, 4, 4, 3)
        for stride in (1, 2):
            a = scatter_conv(fm, kt, ConvSpec(stride=stride))
            b = scatter_conv(fm, kt, ConvSpec(stride=stride), workers=4)
            np.testing.assert_allclose(a.values, b.values, atol=1e-4)


class TestCompaction:
    def test_tiny_mask(self):
        fm = FeatureMap(np.arange(8, dtype=np.float32).reshape(2, 2, 2))
        sfm = compact_active_sites(ActiveMask(np.array([[0, 1], [1, 0]], bool)), fm)
        assert sfm.coords.tolist() == [[0, 1], [1, 0]]
        assert np.array_equal(sfm.feats[0], fm.values[0, 1])

    def test_empty_mask(self):
        fm = FeatureMap(np.ones((3, 3, 1), dtype=np.float32))
        sfm = compact_active_sites(ActiveMask(np.zeros((3, 3), bool)), fm)
        assert sfm.num_sites == 0

    def test_dimension_mismatch(self):
        fm = FeatureMap(np.ones((3, 3, 1), dtype=np.float32))
        with pytest.raises(ValueError):
            compact_active_sites(ActiveMask(np.zeros((4, 3), bool)), fm)

    def test_matches_naive_scan(self, rng):
        fm, mask, _ = random_case(rng, 16, 16, 2, 1, 1, density=0.4)
        sfm = compact_active_sites(mask, fm)
        expected = [(r, c) for r in range(16) for c in range(16) if mask.flags[r, c]]
        assert sfm.coords.tolist() == [list(t) for t in expected]
        assert sfm.num_sites == mask.popcount()
        for (r, c), feat in zip(expected, sfm.feats):
            assert np.array_equal(feat, fm.values[r, c])


class TestSparseScatter:
    def test_empty_sites_zero_output_zero_macs(self):
        sfm = SparseFeatureMap(5, 5, np.zeros((0, 2)), np.zeros((0, 3), np.float32))
        kt = KernelTensor(np.ones((2, 3, 3, 3), dtype=np.float32))
        counter = MacCounter()
        out = sparse_scatter_conv(sfm, kt, counter=counter)
        assert not out.values.any()
        assert counter.count == 0

    def test_single_site_nine_multiplies(self):
        sfm = SparseFeatureMap(8, 8, np.array([[4, 4]]), np.ones((1, 1), np.float32))
        kt = KernelTensor(np.ones((1, 3, 3, 1), dtype=np.float32))
        counter = MacCounter()
        sparse_scatter_conv(sfm, kt, counter=counter)
        assert counter.count == 9

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000), density=st.floats(0.0, 1.0))
    def test_mac_law(self, seed, density):
        r = np.random.default_rng(seed)
        fm, mask, kt = random_case(r, 12, 10, 3, 2, 3, density)
        sfm = compact_active_sites(mask, fm)
        counter = MacCounter()
        sparse_scatter_conv(sfm, kt, counter=counter)
        assert counter.count == sfm.num_sites * 9 * 3 * 2

    def test_sparse_consistency_exact(self, rng):
        # sparse path on compacted sites == dense scatter on the masked map,
        # value-exact in sequential mode
        fm, mask, kt = random_case(rng, 20, 17, 4, 5, 3, density=0.35)
        sfm = compact_active_sites(mask, fm)
        for stride in (1, 2):
            sparse = sparse_scatter_conv(sfm, kt, ConvSpec(stride=stride))
            dense = scatter_conv(fm, kt, ConvSpec(stride=stride))
            assert np.array_equal(sparse.values, dense.values)

    def test_site_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            SparseFeatureMap(4, 4, np.array([[4, 0]]), np.zeros((1, 1), np.float32))

    def test_fixture_scale_oracle_and_mac_ratio(self, rng):
        # benchmark-geometry fixture at low channel count: sparse output still
        # equals the gather oracle and the MAC ratio is the site density
        p = q = 504
        sites = 5124
        c = f = 2
        flat = rng.choice(p * q, size=sites, replace=False)
        mask = np.zeros(p * q, dtype=bool)
        mask[flat] = True
        mask = ActiveMask(mask.reshape(p, q))
        values = np.zeros((p, q, c), dtype=np.float32)
        values[mask.flags] = rng.normal(size=(sites, c)).astype(np.float32)
        fm = FeatureMap(values)
        sfm = compact_active_sites(mask, fm)
        kt = KernelTensor(rng.normal(size=(f, 3, 3, c)).astype(np.float32))
        cs, cd = MacCounter(), MacCounter()
        sparse = sparse_scatter_conv(sfm, kt, counter=cs)
        scatter_conv(fm, kt, counter=cd)
        ref = gather_conv(fm, kt)
        np.testing.assert_allclose(sparse.values, ref.values, atol=1e-5)
        assert cs.count / cd.count == pytest.approx(5124 / (504 * 504), abs=1e-12)


class TestSubmanifold:
    def test_active_set_preserved(self, rng):
        fm, mask, kt = random_case(rng, 12, 12, 3, 4, 3, density=0.3)
        sfm = compact_active_sites(mask, fm)
        out = submanifold_conv(sfm, kt)
        assert np.array_equal(out.coords, sfm.coords)

    def test_single_site_center_weight(self, rng):
        feats = rng.normal(size=(1, 3)).astype(np.float32)
        sfm = SparseFeatureMap(9, 9, np.array([[4, 5]]), feats)
        kt = KernelTensor(rng.normal(size=(2, 5, 5, 3)).astype(np.float32))
        out = submanifold_conv(sfm, kt)
        center = kt.weights[:, 2, 2, :].astype(np.float64) @ feats[0].astype(np.float64)
        np.testing.assert_allclose(out.feats[0], center, atol=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_masked_dense_oracle(self, seed):
        r = np.random.default_rng(seed)
        fm, mask, kt = random_case(r, 12, 12, 2, 3, 3, density=float(r.uniform(0.05, 0.6)))
        sfm = compact_active_sites(mask, fm)
        out = submanifold_conv(sfm, kt)
        ref = gather_conv(fm, kt)  # input is already masked
        for (row, col), feat in zip(out.coords, out.feats):
            np.testing.assert_allclose(feat, ref.values[row, col], atol=1e-5)

    def test_stride_rejected_by_spec(self):
        with pytest.raises(ValueError):
            ConvSpec(stride=2, mode=ConvMode.SUBMANIFOLD)


class TestTransposed:
    def test_stride_one_equals_standard(self, rng):
        fm, mask, kt = random_case(rng, 9, 9, 2, 2, 3, density=0.4)
        sfm = compact_active_sites(mask, fm)
        a = transposed_conv(sfm, kt, stride=1)
        b = sparse_scatter_conv(sfm, kt, ConvSpec(stride=1))
        assert np.array_equal(a.values, b.values)

    def test_single_site_stride_two_index(self):
        sfm = SparseFeatureMap(4, 4, np.array([[1, 1]]), np.array([[1.0]], np.float32))
        kt = KernelTensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = transposed_conv(sfm, kt, stride=2)
        assert out.values.shape == (8, 8, 1)
        assert out.values[2, 2, 0] == 1.0
        assert np.count_nonzero(out.values) == 1

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000), stride=st.sampled_from([1, 2, 3]))
    def test_zero_insertion_oracle(self, seed, stride):
        r = np.random.default_rng(seed)
        p, q = int(r.integers(2, 9)), int(r.integers(2, 9))
        fm, mask, kt = random_case(r, p, q, 2, 2, 3, density=0.5)
        sfm = compact_active_sites(mask, fm)
        got = transposed_conv(sfm, kt, stride=stride)
        upsampled = np.zeros((p * stride, q * stride, 2), dtype=np.float32)
        upsampled[::stride, ::stride] = fm.values
        ref = gather_conv(FeatureMap(upsampled), kt, ConvSpec(stride=1))
        np.testing.assert_allclose(got.values, ref.values, atol=1e-5)


class TestReachableMask:
    def test_matches_nonzero_support(self, rng):
        # reachable set must cover every nonzero output cell
        fm, mask, kt = random_case(rng, 14, 14, 2, 2, 3, density=0.2)
        sfm = compact_active_sites(mask, fm)
        for stride in (1, 2):
            out = sparse_scatter_conv(sfm, kt, ConvSpec(stride=stride))
            reach = scatter_reachable_mask(mask, 3, stride)
            nonzero = np.abs(out.values).max(axis=2) > 0
            assert not (nonzero & ~reach.flags).any()


class TestRelativeSpeed:
    def test_sparse_faster_than_dense_at_low_density(self, rng):
        import time
        p = q = 256
        c = f = 32
        density = 0.05
        mask = ActiveMask(rng.random((p, q)) < density)
        values = rng.normal(size=(p, q, c)).astype(np.float32) * mask.flags[:, :, None]
        fm = FeatureMap(values)
        sfm = compact_active_sites(mask, fm)
        kt = KernelTensor(rng.normal(size=(f, 3, 3, c)).astype(np.float32))
        scatter_conv(fm, kt)  # warm both paths
        sparse_scatter_conv(sfm, kt)
        t0 = time.perf_counter()
        scatter_conv(fm, kt)
        t_dense = time.perf_counter() - t0
        t0 = time.perf_counter()
        sparse_scatter_conv(sfm, kt)
        t_sparse = time.perf_counter() - t0
        assert t_sparse < t_dense
