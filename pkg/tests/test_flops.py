"""Complexity formulas and the forward-pass benchmark harness."""

import numpy as np
import pytest

from amatformer import flops


def test_reference_point_values():
    assert flops.flops_amatformer(1000, 128, 128) == 73_924_608
    assert flops.flops_sgmnet(1000, 128, 128) == 156_237_824
    assert flops.flops_superglue(1000, 128) == 449_536_000


def test_unit_cases():
    assert flops.flops_amatformer(1, 1, 1) == 8
    assert flops.flops_sgmnet(1, 1, 1) == 20
    assert flops.flops_superglue(1, 1) == 7


def test_doubling_n_doubles_the_n_terms():
    n, k, c = 137, 9, 24
    grew = flops.flops_amatformer(2 * n, k, c) - flops.flops_amatformer(n, k, c)
    assert grew == 2 * (n * k * c + n * c * c)


def test_superglue_quadratic_in_n():
    ratio = flops.flops_superglue(8192, 16) / flops.flops_superglue(4096, 16)
    assert 3.9 < ratio < 4.0


def test_dominance_spot_checks():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n, k, c = rng.integers(1, 2000, size=3)
        assert flops.flops_sgmnet(n, k, c) > flops.flops_amatformer(n, k, c)


def test_nonpositive_sizes_rejected():
    with pytest.raises(ValueError):
        flops.flops_amatformer(0, 1, 1)
    with pytest.raises(ValueError):
        flops.flops_sgmnet(1, -2, 1)
    with pytest.raises(ValueError):
        flops.flops_superglue(1, 0)


def test_mac_count_scales_linearly_in_n():
    m512 = flops.forward_macs(512, 8, 64, units=3)
    m1024 = flops.forward_macs(1024, 8, 64, units=3)
    assert 1.9 <= m1024 / m512 <= 2.1


def test_bench_single_rep_is_its_own_median():
    row = flops.bench_forward(32, 4, 8, reps=1, warmup=1, units=1)
    assert row["mad_ms"] == 0.0
    assert row["median_ms"] > 0.0


def test_bench_report_fields():
    row = flops.bench_forward(32, 4, 8, reps=2, warmup=1, units=1)
    assert set(row) == {"mode", "n", "k", "c", "median_ms", "mad_ms",
                        "flops_formula"}
    assert row["mode"] == "amatformer"
    assert row["flops_formula"] == flops.flops_amatformer(32, 4, 8)
    assert row["median_ms"] >= 0.0 and row["mad_ms"] >= 0.0


def test_bench_full_attention_mode():
    row = flops.bench_forward(32, 4, 8, reps=2, warmup=1, units=1,
                              mode="full_attention")
    assert row["mode"] == "full_attention"
    assert row["flops_formula"] == flops.flops_superglue(32, 8)


def test_bench_validates_arguments():
    with pytest.raises(ValueError):
        flops.bench_forward(32, 4, 8, reps=0)
    with pytest.raises(ValueError):
        flops.bench_forward(32, 4, 8, warmup=0)
    with pytest.raises(ValueError):
        flops.bench_forward(32, 4, 8, mode="gpu")


def test_full_reference_runs_same_kernels():
    # the reference pass must produce finite features of the same shape
    from amatformer.autodiff import Tensor, default_dtype
    from amatformer.config import Config
    from amatformer.params import bind, init_model_params

    cfg = Config(c=8, units=2, anchors=4).validated()
    model = bind(init_model_params(cfg, seed=0))
    with default_dtype(np.float64):
        f_s = Tensor(np.random.default_rng(0).normal(size=(10, 8)))
        f_t = Tensor(np.random.default_rng(1).normal(size=(12, 8)))
        y_s, y_t = flops.full_attention_forward(f_s, f_t, model, cfg)
    assert y_s.shape == (10, 8) and y_t.shape == (12, 8)
    assert np.isfinite(y_s.value).all() and np.isfinite(y_t.value).all()
