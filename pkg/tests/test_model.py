import numpy as np
import pytest

from tinydet import ModelConfig, build_model
from tinydet.errors import ConfigError, ShapeError

# frozen at first build of the default desk-scale configuration
GOLDEN_PARAMS_BASELINE = 47885
GOLDEN_PARAMS_SPD = 46925
GOLDEN_PARAMS_SPD_CSPOK = 48877


def small_config(**kw):
    base = dict(input_size=64, stem_width=4, stage_widths=(6, 8, 10, 12), neck_width=8)
    base.update(kw)
    return ModelConfig(**base)


class TestBuild:
    def test_head_map_sizes(self):
        model = build_model(ModelConfig())
        fw = model.forward(np.zeros((1, 3, 128, 128)))
        sizes = [(lo.cls_logits.shape[2], lo.cls_logits.shape[3]) for lo in fw.levels]
        assert sizes == [(16, 16), (8, 8), (4, 4)]
        assert [lo.stride for lo in fw.levels] == [8, 16, 32]
        assert fw.levels[0].cls_logits.shape[1] == 3
        assert fw.levels[0].box_raw.shape[1] == 4

    def test_toggles_keep_output_shapes(self):
        x = np.random.default_rng(0).uniform(size=(2, 3, 64, 64))
        shapes = []
        for spd in (False, True):
            for cspok in (False, True):
                cfg = small_config(spd_enabled=spd, cspok_enabled=cspok)
                fw = build_model(cfg).forward(x)
                shapes.append([(lo.cls_logits.shape, lo.box_raw.shape) for lo in fw.levels])
        assert all(s == shapes[0] for s in shapes)

    def test_spd_swaps_the_downsample_operator(self):
        plain = build_model(small_config())
        spd = build_model(small_config(spd_enabled=True, spd_stage=2))
        assert "p3.down.w" in plain.params and "p3.spd.w" not in plain.params
        assert "p3.spd.w" in spd.params and "p3.down.w" not in spd.params
        # the spd conv consumes the 4x channel stack
        assert spd.params["p3.spd.w"].shape == (8, 4 * 6, 1, 1)

    def test_golden_parameter_counts(self):
        assert build_model(ModelConfig()).num_params() == GOLDEN_PARAMS_BASELINE
        assert build_model(ModelConfig(spd_enabled=True)).num_params() == GOLDEN_PARAMS_SPD
        both = ModelConfig(spd_enabled=True, cspok_enabled=True)
        assert build_model(both).num_params() == GOLDEN_PARAMS_SPD_CSPOK

    def test_cspok_adds_parameters_over_baseline(self):
        assert GOLDEN_PARAMS_SPD_CSPOK > GOLDEN_PARAMS_BASELINE

    def test_init_is_deterministic(self):
        a = build_model(ModelConfig(seed=5)).params
        b = build_model(ModelConfig(seed=5)).params
        assert sorted(a) == sorted(b)
        for k in a:
            assert np.array_equal(a[k], b[k]), k

    def test_shared_names_share_values_across_arms(self):
        a = build_model(small_config(seed=2))
        b = build_model(small_config(seed=2, spd_enabled=True))
        shared = set(a.params) & set(b.params)
        assert "stem.w" in shared
        for k in shared:
            assert np.array_equal(a.params[k], b.params[k]), k

    def test_forward_is_deterministic(self):
        model = build_model(small_config())
        x = np.random.default_rng(1).uniform(size=(1, 3, 64, 64))
        a = model.forward(x)
        b = model.forward(x)
        for la, lb in zip(a.levels, b.levels):
            assert np.array_equal(la.cls_logits.data, lb.cls_logits.data)
            assert np.array_equal(la.box_raw.data, lb.box_raw.data)


class TestConfigValidation:
    def test_input_size_stride_compatibility(self):
        with pytest.raises(ConfigError, match="divisible"):
            ModelConfig(input_size=100)

    def test_strides_must_be_octaves(self):
        with pytest.raises(ConfigError):
            ModelConfig(strides=(8, 16, 64))
        with pytest.raises(ConfigError):
            ModelConfig(strides=(8, 16))

    def test_loss_selector(self):
        with pytest.raises(ConfigError, match="cls_loss"):
            ModelConfig(cls_loss="hinge")

    def test_spd_stage_range(self):
        with pytest.raises(ConfigError):
            ModelConfig(spd_stage=5)

    def test_bad_image_shape_rejected(self):
        model = build_model(small_config())
        with pytest.raises(ShapeError):
            model.forward(np.zeros((1, 1, 64, 64)))
        with pytest.raises(ShapeError):
            model.forward(np.zeros((1, 3, 60, 64)))

    def test_with_arm(self):
        cfg = ModelConfig().with_arm(True, True, "vfl")
        assert cfg.spd_enabled and cfg.cspok_enabled and cfg.cls_loss == "vfl"
