import numpy as np
import pytest

from tinydet import Tensor, grad_check, mul, sum_all
from tinydet.cspok import (
    CspokConfig, OkmConfig, cspok_block, init_cspok_arrays, init_okm_arrays, okm,
)
from tinydet.errors import ConfigError, ShapeError
from tinydet.tensor import wrap_leaves


def okm_tensors(config, channels, rng, zero_branches=True):
    return wrap_leaves(init_okm_arrays(config, channels, rng, zero_branches=zero_branches))


class TestOkm:
    def test_zero_init_is_identity(self):
        cfg = OkmConfig()
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=(2, 4, 8, 8))
        out = okm(Tensor(x0), cfg, okm_tensors(cfg, 4, rng))
        assert np.array_equal(out.data, x0)

    def test_shape_preserved(self):
        cfg = OkmConfig(local_kernel=5, strip_kernel=7)
        rng = np.random.default_rng(1)
        x0 = rng.normal(size=(1, 3, 9, 11))
        out = okm(Tensor(x0), cfg, okm_tensors(cfg, 3, rng, zero_branches=False))
        assert out.shape == x0.shape

    def test_shape_preserved_over_random_configs(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            cfg = OkmConfig(
                local_kernel=int(rng.choice([1, 3, 5])),
                strip_kernel=int(rng.choice([3, 5, 7])),
                global_enabled=bool(rng.integers(0, 2)),
                residual=bool(rng.integers(0, 2)),
            )
            c = int(rng.integers(1, 5))
            h, w = int(rng.integers(4, 10)), int(rng.integers(4, 10))
            x0 = rng.normal(size=(1, c, h, w))
            out = okm(Tensor(x0), cfg, okm_tensors(cfg, c, rng, zero_branches=False))
            assert out.shape == x0.shape

    def test_gradcheck(self):
        cfg = OkmConfig()
        rng = np.random.default_rng(3)
        params = okm_tensors(cfg, 4, rng, zero_branches=False)
        coeffs = rng.normal(size=(1, 4, 8, 8))

        def fn(x):
            return sum_all(mul(okm(x, cfg, params), coeffs))

        report = grad_check(fn, rng.normal(size=(1, 4, 8, 8)), tolerance=1e-3)
        assert report.passed

    def test_kernel_validation(self):
        with pytest.raises(ConfigError):
            OkmConfig(local_kernel=2)
        with pytest.raises(ConfigError):
            OkmConfig(strip_kernel=0)


class TestCspokBlock:
    def test_identity_configuration(self):
        cfg = CspokConfig(in_channels=4, out_channels=4)
        rng = np.random.default_rng(4)
        params = wrap_leaves(init_cspok_arrays(cfg, rng, identity=True))
        x0 = rng.normal(size=(1, 4, 6, 6))
        out = cspok_block(Tensor(x0), cfg, params)
        assert np.array_equal(out.data, x0)

    def test_bypass_carries_first_channels(self):
        cfg = CspokConfig(in_channels=4, out_channels=4)
        rng = np.random.default_rng(5)
        params = wrap_leaves(init_cspok_arrays(cfg, rng, zero_branches=False))
        x0 = rng.normal(size=(1, 4, 5, 5))
        _, premerge = cspok_block(Tensor(x0), cfg, params, return_premerge=True)
        assert np.array_equal(premerge.data[:, :2], x0[:, :2])

    def test_bypass_integrity_100_random_parameterizations(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            c_in = int(rng.integers(2, 9))
            ratio = float(rng.uniform(0.2, 0.8))
            try:
                cfg = CspokConfig(in_channels=c_in, out_channels=int(rng.integers(1, 9)),
                                  split_ratio=ratio)
            except ConfigError:
                continue
            params = wrap_leaves(init_cspok_arrays(cfg, rng, zero_branches=False))
            x0 = rng.normal(size=(1, c_in, 4, 4))
            _, premerge = cspok_block(Tensor(x0), cfg, params, return_premerge=True)
            assert np.array_equal(premerge.data[:, :cfg.bypass_channels],
                                  x0[:, :cfg.bypass_channels])

    def test_gradcheck_full_block(self):
        cfg = CspokConfig(in_channels=8, out_channels=8)
        rng = np.random.default_rng(7)
        params = wrap_leaves(init_cspok_arrays(cfg, rng, zero_branches=False))
        coeffs = rng.normal(size=(1, 8, 8, 8))

        def fn(x):
            return sum_all(mul(cspok_block(x, cfg, params), coeffs))

        report = grad_check(fn, rng.normal(size=(1, 8, 8, 8)), tolerance=1e-3)
        assert report.passed

    def test_split_ratio_validation(self):
        with pytest.raises(ConfigError):
            CspokConfig(in_channels=4, out_channels=4, split_ratio=0.0)
        with pytest.raises(ConfigError):
            CspokConfig(in_channels=4, out_channels=4, split_ratio=1.0)
        with pytest.raises(ConfigError):
            CspokConfig(in_channels=2, out_channels=2, split_ratio=0.1)

    def test_channel_mismatch(self):
        cfg = CspokConfig(in_channels=4, out_channels=4)
        params = wrap_leaves(init_cspok_arrays(cfg, np.random.default_rng(8)))
        with pytest.raises(ShapeError):
            cspok_block(Tensor(np.zeros((1, 6, 4, 4))), cfg, params)

    def test_identity_init_requires_square(self):
        cfg = CspokConfig(in_channels=4, out_channels=6)
        with pytest.raises(ConfigError):
            init_cspok_arrays(cfg, np.random.default_rng(9), identity=True)
