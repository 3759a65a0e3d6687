"""Closed-form complexity accounting and a wall-clock bottleneck benchmark.

The formulas are exact integer evaluations of the three architectures'
message-passing costs (one multiply-add = 2 FLOPs). The benchmark times the
anchor-bottleneck forward against a full n x m attention reference built from
the same attention/FFN kernels, pinned to one BLAS thread for stability.
"""

import statistics
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import blocks
from .autodiff import Tensor, count_macs, default_dtype
from .config import Config
from .data import AnchorPairs
from .params import bind, init_model_params, map_arrays


def _check_positive(**kw):
    for name, v in kw.items():
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")


def flops_amatformer(n, k, c):
    """2(nkc + 2k^2c + nc^2): anchor self/cross plus anchor-primary stages."""
    _check_positive(n=n, k=k, c=c)
    return 2 * (n * k * c + 2 * k * k * c + n * c * c)


def flops_sgmnet(n, k, c):
    """2(2nkc + 2k^2c + 4kc^2 + 2nc^2): seeded attention both directions."""
    _check_positive(n=n, k=k, c=c)
    return 2 * (2 * n * k * c + 2 * k * k * c + 4 * k * c * c + 2 * n * c * c)


def flops_superglue(n, c):
    """3n^2c + 4nc^2: full self/cross attention over all points."""
    _check_positive(n=n, c=c)
    return 3 * n * n * c + 4 * n * c * c


def _fixed_anchors(k, c):
    idx = np.arange(k)
    return AnchorPairs(
        source_indices=idx, target_indices=idx, ratios=np.zeros(k),
        anchors_source=np.zeros((k, c)), anchors_target=np.zeros((k, c)),
    )


def _bench_setup(n, k, c, units, seed):
    cfg = Config(c=c, units=units, anchors=k).validated()
    model = map_arrays(init_model_params(cfg, seed=seed),
                       lambda a: a.astype(np.float32))
    rng = np.random.default_rng(seed)
    f_s = Tensor(rng.normal(size=(n, c)).astype(np.float32))
    f_t = Tensor(rng.normal(size=(n, c)).astype(np.float32))
    return cfg, bind(model), f_s, f_t


def full_attention_forward(f_s, f_t, model, cfg):
    """Reference pass with no anchor bottleneck: every stage attends over the
    full point sets (n x n self, n x m cross), same kernels, same unit count,
    same shared FFN."""
    cur_s, cur_t = f_s, f_t
    for unit in model.units:
        y_s = blocks._attention(cur_s, cur_s, unit.self_proj, unit.self_out, cfg.heads)
        y_t = blocks._attention(cur_t, cur_t, unit.self_proj, unit.self_out, cfg.heads)
        cur_s = blocks._attention(y_s, y_t, unit.cross_proj, unit.cross_out, cfg.heads)
        cur_t = blocks._attention(y_t, y_s, unit.cross_proj, unit.cross_out, cfg.heads)
    if cfg.ffn:
        cur_s, cur_t = blocks.shared_ffn(cur_s, cur_t, model.ffn, cfg.ffn_activation)
    return cur_s, cur_t


def bench_forward(n, k, c, reps=20, mode="amatformer", warmup=3, units=3,
                  seed=0, single_thread=True):
    """Time one forward variant; returns a dict row for the bench CSV."""
    _check_positive(n=n, k=k, c=c, reps=reps, warmup=warmup, units=units)
    if mode not in ("amatformer", "full_attention"):
        raise ValueError(f"unknown bench mode {mode!r}")
    with default_dtype(np.float32):
        cfg, model, f_s, f_t = _bench_setup(n, k, c, units, seed)
        anchors = _fixed_anchors(k, c)
        if mode == "amatformer":
            run = lambda: blocks.forward(f_s, f_t, anchors, model, cfg)
            formula = flops_amatformer(n, k, c)
        else:
            run = lambda: full_attention_forward(f_s, f_t, model, cfg)
            formula = flops_superglue(n, c)
        limit = 1 if single_thread else None
        with threadpool_limits(limits=limit):
            for _ in range(warmup):
                run()
            samples = []
            for _ in range(reps):
                t0 = time.perf_counter()
                run()
                samples.append((time.perf_counter() - t0) * 1e3)
    med = statistics.median(samples)
    mad = statistics.median(abs(s - med) for s in samples)
    return {"mode": mode, "n": n, "k": k, "c": c,
            "median_ms": med, "mad_ms": mad, "flops_formula": formula}


def forward_macs(n, k, c, units=3, seed=0):
    """Multiply-add count of one bottleneck forward (message passing + FFN)."""
    with default_dtype(np.float32):
        cfg, model, f_s, f_t = _bench_setup(n, k, c, units, seed)
        with count_macs() as counter:
            blocks.forward(f_s, f_t, _fixed_anchors(k, c), model, cfg)
    return counter.macs
