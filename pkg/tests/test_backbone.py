import numpy as np
import pytest

from airsense.backbone import (
    ENGINES,
    BackboneSpec,
    BackboneWeights,
    make_backbone_weights,
    run_backbone,
)
from airsense.pillars import PseudoImage


SMALL = BackboneSpec(block_channels=(8, 16, 32), up_channels=16)


def full_pseudo_image(rng, h, w, c):
    return PseudoImage(rng.normal(size=(h, w, c)).astype(np.float32),
                       np.ones((h, w), dtype=bool))


def sparse_pseudo_image(rng, h, w, c, density):
    mask = rng.random((h, w)) < density
    values = rng.normal(size=(h, w, c)).astype(np.float32) * mask[:, :, None]
    return PseudoImage(values, mask)


class TestGraphShape:
    def test_layer_count_is_sixteen_convs_plus_three_deconvs(self, rng):
        weights = make_backbone_weights(SMALL, 4, rng)
        pi = full_pseudo_image(rng, 16, 16, 4)
        _, report = run_backbone(pi, SMALL, weights, engine="dense")
        assert len(report.layers) == 19
        assert sum(1 for l in report.layers if l.kind == "conv") == 16
        assert sum(1 for l in report.layers if l.kind == "deconv") == 3

    def test_block_conv_counts_configurable(self, rng):
        spec = BackboneSpec(block_convs=(2, 2, 2), block_channels=(4, 8, 8),
                            up_channels=8)
        weights = make_backbone_weights(spec, 3, rng)
        pi = full_pseudo_image(rng, 8, 8, 3)
        _, report = run_backbone(pi, spec, weights, engine="dense")
        assert len(report.layers) == 9

    def test_wrong_kernel_count_rejected(self, rng):
        weights = make_backbone_weights(SMALL, 4, rng)
        pi = full_pseudo_image(rng, 16, 16, 4)
        with pytest.raises(ValueError):
            run_backbone(pi, SMALL, BackboneWeights(weights.kernels[:-1]), engine="dense")

    def test_unknown_engine_rejected(self, rng):
        weights = make_backbone_weights(SMALL, 4, rng)
        pi = full_pseudo_image(rng, 16, 16, 4)
        with pytest.raises(ValueError):
            run_backbone(pi, SMALL, weights, engine="gpu")


class TestEngineAgreement:
    def test_zero_image_all_engines_zero(self, rng):
        weights = make_backbone_weights(SMALL, 4, rng)
        pi = PseudoImage(np.zeros((16, 16, 4), np.float32), np.zeros((16, 16), bool))
        for engine in ENGINES:
            out, report = run_backbone(pi, SMALL, weights, engine=engine)
            assert not out.values.any()
            if engine != "dense":
                assert report.total_macs == 0

    def test_single_occupied_cell_dense_vs_sparse(self, rng):
        weights = make_backbone_weights(SMALL, 4, rng)
        mask = np.zeros((16, 16), dtype=bool)
        mask[7, 9] = True
        values = np.zeros((16, 16, 4), dtype=np.float32)
        values[7, 9] = rng.normal(size=4).astype(np.float32)
        pi = PseudoImage(values, mask)
        dense, _ = run_backbone(pi, SMALL, weights, engine="dense")
        sparse, _ = run_backbone(pi, SMALL, weights, engine="sparse")
        np.testing.assert_allclose(dense.values, sparse.values, atol=1e-4)

    def test_dense_vs_sparse_on_sparse_inputs(self, rng):
        weights = make_backbone_weights(SMALL, 4, rng)
        for _ in range(3):
            pi = sparse_pseudo_image(rng, 16, 16, 4, 0.25)
            dense, _ = run_backbone(pi, SMALL, weights, engine="dense")
            sparse, _ = run_backbone(pi, SMALL, weights, engine="sparse")
            np.testing.assert_allclose(dense.values, sparse.values, atol=1e-4)

    def test_all_three_engines_agree_on_saturated_input(self, rng):
        # with every cell occupied the active set is closed under dilation,
        # so the set-preserving engine computes the same map as the others
        weights = make_backbone_weights(SMALL, 4, rng)
        pi = full_pseudo_image(rng, 16, 16, 4)
        outs = [run_backbone(pi, SMALL, weights, engine=e)[0].values for e in ENGINES]
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-4)
        np.testing.assert_allclose(outs[0], outs[2], atol=1e-4)

    def test_relu_hook_preserves_agreement(self, rng):
        spec = BackboneSpec(block_channels=(8, 16, 32), up_channels=16, relu=True)
        weights = make_backbone_weights(spec, 4, rng)
        pi = full_pseudo_image(rng, 16, 16, 4)
        outs = [run_backbone(pi, spec, weights, engine=e)[0].values for e in ENGINES]
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-4)
        np.testing.assert_allclose(outs[0], outs[2], atol=1e-4)
        assert outs[0].min() >= 0.0


class TestInstrumentation:
    def test_submanifold_engine_does_less_work_on_sparse_input(self, rng):
        weights = make_backbone_weights(SMALL, 4, rng)
        pi = sparse_pseudo_image(rng, 32, 32, 4, 0.05)
        _, rep_sparse = run_backbone(pi, SMALL, weights, engine="sparse")
        _, rep_sub = run_backbone(pi, SMALL, weights, engine="sparse+submanifold")
        assert rep_sub.total_macs < rep_sparse.total_macs

    def test_density_tracks_active_fraction(self, rng):
        weights = make_backbone_weights(SMALL, 4, rng)
        pi = sparse_pseudo_image(rng, 32, 32, 4, 0.05)
        _, report = run_backbone(pi, SMALL, weights, engine="sparse")
        assert report.layers[0].density == pytest.approx(pi.mask.mean())
        # standard sparse convolutions dilate the active set layer over layer
        densities = [l.density for l in report.layers if l.kind == "conv"][:4]
        assert densities == sorted(densities)

    def test_report_text_block(self, rng):
        weights = make_backbone_weights(SMALL, 4, rng)
        pi = full_pseudo_image(rng, 8, 8, 4)
        _, report = run_backbone(pi, SMALL, weights, engine="dense")
        text = report.to_text()
        assert "engine = dense" in text
        assert "layer.00.macs = " in text
        assert "layer.18.nanoseconds = " in text
        assert "total.macs = " in text
        for line in text.strip().splitlines():
            assert " = " in line
