"""Learnable parameter containers, initialization, and canonical flattening.

The flatten order (named_arrays) is the serialization contract for
checkpoints: dataclass fields in declaration order, recursing into lists by
index, skipping None leaves. Optional unshared branch weights therefore sit
after the shared ones inside each unit, and a siamese checkpoint simply
omits them.
"""

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor


@dataclass
class ProjectionTriple:
    """Q/K/V projection matrices for one attention stage."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray


@dataclass
class EncoderParams:
    desc_proj: np.ndarray  # d_in x c
    mlp_w1: np.ndarray     # 3 x 32 position MLP (x, y, score)
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray     # 32 x c
    mlp_b2: np.ndarray


@dataclass
class UnitParams:
    self_proj: ProjectionTriple
    self_out: np.ndarray   # c x c output projection (LP)
    cross_proj: ProjectionTriple
    cross_out: np.ndarray
    primary_proj: ProjectionTriple
    primary_out: np.ndarray
    head_w: np.ndarray     # c x 1 anchor-classification head
    head_b: np.ndarray     # 1 x 1
    # populated only when branches are unshared
    self_proj_t: Optional[ProjectionTriple] = None
    self_out_t: Optional[np.ndarray] = None


@dataclass
class FfnParams:
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    w1: np.ndarray  # c x 4c
    b1: np.ndarray
    w2: np.ndarray  # 4c x c, zero-initialized
    b2: np.ndarray


@dataclass
class ModelParams:
    encoder: EncoderParams
    units: list  # [UnitParams] * R
    ffn: FfnParams  # single object consumed by both image branches
    metric_w: np.ndarray  # c x c bilinear form
    dustbin: np.ndarray   # 1 x 1 learnable score z


MLP_HIDDEN = 32


def xavier_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _triple(rng, c):
    return ProjectionTriple(
        xavier_uniform(rng, c, c), xavier_uniform(rng, c, c), xavier_uniform(rng, c, c)
    )


def init_model_params(cfg, seed=None):
    """Xavier-uniform weights; output projections and the FFN final layer
    start at zero so the untrained stack is the identity map on features."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    c, d_in = cfg.c, cfg.d_in
    encoder = EncoderParams(
        desc_proj=xavier_uniform(rng, d_in, c),
        mlp_w1=xavier_uniform(rng, 3, MLP_HIDDEN),
        mlp_b1=np.zeros(MLP_HIDDEN),
        mlp_w2=xavier_uniform(rng, MLP_HIDDEN, c),
        mlp_b2=np.zeros(c),
    )
    units = []
    for _ in range(cfg.units):
        unit = UnitParams(
            self_proj=_triple(rng, c),
            self_out=np.zeros((c, c)),
            cross_proj=_triple(rng, c),
            cross_out=np.zeros((c, c)),
            primary_proj=_triple(rng, c),
            primary_out=np.zeros((c, c)),
            head_w=xavier_uniform(rng, c, 1),
            head_b=np.zeros((1, 1)),
        )
        if not cfg.siamese:
            unit.self_proj_t = _triple(rng, c)
            unit.self_out_t = np.zeros((c, c))
        units.append(unit)
    ffn = FfnParams(
        ln_gain=np.ones(c),
        ln_bias=np.zeros(c),
        w1=xavier_uniform(rng, c, 4 * c),
        b1=np.zeros(4 * c),
        w2=np.zeros((4 * c, c)),
        b2=np.zeros(c),
    )
    return ModelParams(
        encoder=encoder,
        units=units,
        ffn=ffn,
        metric_w=xavier_uniform(rng, c, c),
        dustbin=np.array([[1.0]]),
    )


def map_arrays(obj, fn):
    """Rebuild a parameter tree applying fn to every array/Tensor leaf."""
    if obj is None:
        return None
    if isinstance(obj, (np.ndarray, Tensor)):
        return fn(obj)
    if isinstance(obj, list):
        return [map_arrays(o, fn) for o in obj]
    if dataclasses.is_dataclass(obj):
        return type(obj)(
            **{
                f.name: map_arrays(getattr(obj, f.name), fn)
                for f in dataclasses.fields(obj)
            }
        )
    raise TypeError(f"unexpected leaf {type(obj)}")


def iter_named(obj, prefix=""):
    """Yield (dotted name, leaf) pairs in the canonical flatten order."""
    if obj is None:
        return
    if isinstance(obj, (np.ndarray, Tensor)):
        yield prefix, obj
        return
    if isinstance(obj, list):
        for i, o in enumerate(obj):
            yield from iter_named(o, f"{prefix}.{i}" if prefix else str(i))
        return
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from iter_named(getattr(obj, f.name), name)
        return
    raise TypeError(f"unexpected leaf {type(obj)}")


def named_arrays(model):
    return list(iter_named(model))


def flat_values(model):
    """Leaves as plain numpy arrays, canonical order."""
    out = []
    for _, leaf in iter_named(model):
        out.append(leaf.value if isinstance(leaf, Tensor) else leaf)
    return out


def rebuild_like(template, arrays):
    """A new tree shaped like template with leaves replaced in order."""
    it = iter(arrays)

    def take(leaf):
        a = next(it)
        shape = leaf.value.shape if isinstance(leaf, Tensor) else leaf.shape
        if a.shape != shape:
            raise ValueError(f"leaf shape {a.shape} vs template {shape}")
        return a

    rebuilt = map_arrays(template, take)
    leftovers = sum(1 for _ in it)
    if leftovers:
        raise ValueError(f"{leftovers} arrays beyond template leaves")
    return rebuilt


def bind(model, tape=None):
    """Wrap every leaf in a Tensor; on a tape they become trainable leaves."""
    if tape is None:
        return map_arrays(model, Tensor)
    names = iter(name for name, _ in iter_named(model))
    return map_arrays(model, lambda a: tape.parameter(a, name=next(names)))
