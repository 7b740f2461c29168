import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialhead import ops
from spatialhead.errors import ConfigError, ContractError, ShapeError
from spatialhead.heads import (
    FeatureMapSpec,
    HeadKind,
    HeadParams,
    HeadSpec,
    apply_constraint,
    build_head,
    classifier_fan_in,
    head_forward,
    head_param_count,
)
from spatialhead.tensor import Tensor

FM7 = FeatureMapSpec(7, 7, 2048)
FM16 = FeatureMapSpec(16, 16, 2048)


def spec_for(kind, classes=5, pool=2, rate=0.5):
    kind = HeadKind(kind)
    return HeadSpec(kind, classes, pool if kind.pooled else None, rate)


class TestSpec:
    def test_pool_required_exactly_for_avg(self):
        with pytest.raises(ConfigError):
            HeadSpec(HeadKind.AVG_DW_NONNEG, 3)
        with pytest.raises(ConfigError):
            HeadSpec(HeadKind.DW, 3, 2)

    def test_parse(self):
        assert HeadKind.parse("avg_dw_nonneg") is HeadKind.AVG_DW_NONNEG
        with pytest.raises(ConfigError):
            HeadKind.parse("SPP")

    def test_kind_flags(self):
        full = HeadKind.AVG_DW_NONNEG_DROPOUT
        assert full.pooled and full.nonneg and full.depthwise and full.has_dropout
        assert not HeadKind.GWAP.depthwise
        assert HeadKind.GAP_DROPOUT.has_dropout and not HeadKind.GAP.has_dropout
        assert len(HeadKind) == 9


class TestBuild:
    def test_dw_kernel_shapes(self):
        assert build_head(FM7, HeadSpec("DW", 3), 0, "float32").tensors["dw_kernel"].shape == (7, 7, 2048)
        p = build_head(FM7, HeadSpec("AVG_DW_NONNEG", 3, 2), 0, "float32")
        assert p.tensors["dw_kernel"].shape == (3, 3, 2048)
        p = build_head(FM16, HeadSpec("AVG_DW_NONNEG", 3, 3), 0, "float32")
        assert p.tensors["dw_kernel"].shape == (5, 5, 2048)

    def test_avg_flatten_fan_in(self):
        assert classifier_fan_in(FM16, HeadSpec("AVG_FLATTEN_FC", 67, 3)) == 51_200

    def test_pool_too_large(self):
        with pytest.raises(ConfigError):
            build_head(FeatureMapSpec(3, 3, 2), HeadSpec("AVG_DW_NONNEG", 2, 4), 0)

    def test_initialisation(self):
        p = build_head(FeatureMapSpec(20, 20, 50), HeadSpec("DW", 10), 3)
        k = p.tensors["dw_kernel"].data
        assert abs(k.std() - 0.01) < 0.001 and abs(k.mean()) < 0.001
        assert not p.tensors["dw_bias"].data.any() and not p.tensors["fc_bias"].data.any()
        limit = np.sqrt(6 / (50 + 10))
        assert np.abs(p.tensors["fc_weight"].data).max() <= limit

    def test_seeded(self):
        a = build_head(FeatureMapSpec(4, 4, 3), HeadSpec("GWAP", 5), 11)
        b = build_head(FeatureMapSpec(4, 4, 3), HeadSpec("GWAP", 5), 11)
        c = build_head(FeatureMapSpec(4, 4, 3), HeadSpec("GWAP", 5), 12)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name].data, b.tensors[name].data)
        assert not np.array_equal(a.tensors["fc_weight"].data, c.tensors["fc_weight"].data)

    def test_gwap_kernel_is_shared(self):
        p = build_head(FeatureMapSpec(4, 5, 3), HeadSpec("GWAP", 2), 0)
        assert p.tensors["gwap_kernel"].shape == (4, 5)


class TestParamCount:
    @pytest.mark.parametrize(
        "fm, spec, expected",
        [
            (FM7, HeadSpec("GAP", 70), 143_430),
            (FM7, HeadSpec("DW", 70), 245_830),
            (FM7, HeadSpec("AVG_DW_NONNEG", 70, 2), 163_910),
            (FM16, HeadSpec("AVG_FLATTEN_FC", 67, 3), 3_430_467),
            (FM7, HeadSpec("FLATTEN_FC", 100), 10_035_300),
        ],
    )
    def test_published_deltas(self, fm, spec, expected):
        assert head_param_count(fm, spec) == expected

    def test_flatten_fc_bias_is_counted(self):
        # weights alone are 7*7*2048*100; one bias per class on top
        assert head_param_count(FM7, HeadSpec("FLATTEN_FC", 100)) - 7 * 7 * 2048 * 100 == 100

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 6), st.integers(1, 8), st.integers(1, 3),
           st.sampled_from(list(HeadKind)))
    def test_matches_allocation(self, h, w, c, k, pool, kind):
        fm = FeatureMapSpec(h, w, c)
        if kind.pooled and pool > min(h, w):
            pool = 1
        spec = spec_for(kind, k, pool)
        assert head_param_count(fm, spec) == build_head(fm, spec, 0).count()


class TestForward:
    def test_output_shape_every_kind(self, rng):
        x = Tensor(rng.normal(size=(2, 4, 4, 3)))
        for kind in HeadKind:
            spec = spec_for(kind)
            assert head_forward(x, build_head(FeatureMapSpec(4, 4, 3), spec, 0), spec).shape == (2, 5)

    def test_dw_subsumes_gap(self, rng):
        fm = FeatureMapSpec(7, 7, 6)
        gap = build_head(fm, HeadSpec("GAP", 4), 0)
        dw = dict(build_head(fm, HeadSpec("DW", 4), 0).tensors)
        dw.update(dw_kernel=Tensor(np.full((7, 7, 6), 1 / 49)), dw_bias=Tensor(np.zeros(6)),
                  fc_weight=gap.tensors["fc_weight"], fc_bias=gap.tensors["fc_bias"])
        x = Tensor(rng.normal(size=(10, 7, 7, 6)))
        a = head_forward(x, gap, HeadSpec("GAP", 4)).data
        b = head_forward(x, dw, HeadSpec("DW", 4)).data
        assert np.abs(a - b).max() <= 1e-6

    def test_gwap_subsumes_gap(self, rng):
        fm = FeatureMapSpec(5, 4, 3)
        gap = build_head(fm, HeadSpec("GAP", 2), 0)
        gw = dict(gap.tensors, gwap_kernel=Tensor(np.full((5, 4), 1 / 20)))
        x = Tensor(rng.normal(size=(6, 5, 4, 3)))
        a = head_forward(x, gap, HeadSpec("GAP", 2)).data
        b = head_forward(x, gw, HeadSpec("GWAP", 2)).data
        assert np.abs(a - b).max() <= 1e-6

    def test_channel_permutation(self, rng):
        fm = FeatureMapSpec(4, 4, 5)
        spec = HeadSpec("DW_NONNEG", 3)
        p = build_head(fm, spec, 0).tensors
        perm = rng.permutation(5)
        q = {
            "dw_kernel": Tensor(p["dw_kernel"].data[:, :, perm]),
            "dw_bias": Tensor(p["dw_bias"].data[perm]),
            "fc_weight": Tensor(p["fc_weight"].data[perm]),
            "fc_bias": p["fc_bias"],
        }
        x = rng.normal(size=(3, 4, 4, 5))
        a = head_forward(Tensor(x), p, spec).data
        b = head_forward(Tensor(x[..., perm]), q, spec).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_infer_is_deterministic(self, rng):
        fm = FeatureMapSpec(4, 4, 3)
        x = Tensor(rng.normal(size=(2, 4, 4, 3)), "float32")
        for kind in HeadKind:
            spec = spec_for(kind)
            p = build_head(fm, spec, 0, "float32")
            np.testing.assert_array_equal(head_forward(x, p, spec).data, head_forward(x, p, spec).data)

    def test_dropout_only_in_train(self, rng):
        fm = FeatureMapSpec(4, 4, 3)
        spec = HeadSpec("GAP_DROPOUT", 5, dropout_rate=0.5)
        p = build_head(fm, spec, 0)
        x = Tensor(rng.normal(size=(8, 4, 4, 3)))
        infer = head_forward(x, p, spec).data
        train = head_forward(x, p, spec, "train", np.random.default_rng(0)).data
        np.testing.assert_array_equal(infer, head_forward(x, p, HeadSpec("GAP", 5)).data)
        assert not np.allclose(infer, train)

    def test_shape_mismatch(self, rng):
        spec = HeadSpec("DW", 2)
        p = build_head(FeatureMapSpec(4, 4, 3), spec, 0)
        with pytest.raises(ShapeError):
            head_forward(Tensor(rng.normal(size=(1, 5, 5, 3))), p, spec)
        with pytest.raises(ShapeError):
            head_forward(Tensor(rng.normal(size=(5, 5, 3))), p, spec)

    def test_flatten_on_pooled_map(self, rng):
        spec = HeadSpec("AVG_FLATTEN_FC", 2, 2)
        p = build_head(FeatureMapSpec(5, 5, 2), spec, 0)
        x = rng.normal(size=(1, 5, 5, 2))
        pooled = ops.avg_pool2d(Tensor(x), 2).data.reshape(1, -1)
        expected = pooled @ p.tensors["fc_weight"].data + p.tensors["fc_bias"].data
        np.testing.assert_allclose(head_forward(Tensor(x), p, spec).data, expected, atol=1e-12)


class TestConstraint:
    def test_clamp(self):
        p = HeadParams(HeadKind.DW_NONNEG, {"dw_kernel": Tensor([-0.5, 0.3]), "dw_bias": Tensor([-1.0])})
        out = apply_constraint(p)
        assert out.tensors["dw_kernel"].tolist() == [0.0, 0.3]
        assert out.tensors["dw_bias"].tolist() == [-1.0]

    def test_fixed_point(self):
        p = HeadParams(HeadKind.AVG_DW_NONNEG, {"dw_kernel": Tensor([0.0, 0.3])})
        assert apply_constraint(p).tensors["dw_kernel"].tolist() == [0.0, 0.3]

    def test_unconstrained_kind(self):
        with pytest.raises(ContractError):
            apply_constraint(build_head(FeatureMapSpec(3, 3, 2), HeadSpec("DW", 2), 0))

    def test_constrained_names(self):
        assert HeadParams(HeadKind.DW_NONNEG, {}).constrained() == ("dw_kernel",)
        assert HeadParams(HeadKind.DW, {}).constrained() == ()
