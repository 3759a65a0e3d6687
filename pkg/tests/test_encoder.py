import numpy as np
import pytest

from amatformer import params as P
from amatformer.config import Config
from amatformer.data import DescriptorSet, KeypointSet
from amatformer.encoder import encode, normalized_positions
from amatformer.errors import ShapeMismatch


CFG = Config(d_in=6, c=16)


def bound_encoder(zero_mlp=False, identity_desc=False, cfg=CFG, seed=0):
    m = P.init_model_params(cfg, seed=seed)
    enc = m.encoder
    if zero_mlp:
        enc.mlp_w1 = np.zeros_like(enc.mlp_w1)
        enc.mlp_w2 = np.zeros_like(enc.mlp_w2)
    if identity_desc:
        enc.desc_proj = np.eye(*enc.desc_proj.shape)
    return P.bind(enc)


def side(n, d_in=6, seed=0):
    rng = np.random.default_rng(seed)
    kps = KeypointSet(rng.uniform(0, 600, (n, 2)), rng.uniform(0, 1, n))
    return kps, DescriptorSet(rng.normal(size=(n, d_in)))


def test_zero_descriptors_zero_mlp_give_zero_features():
    kps, _ = side(4)
    out = encode(kps, DescriptorSet(np.zeros((4, 6))), bound_encoder(zero_mlp=True))
    assert not out.value.any()


def test_identity_projection_passes_descriptors_through():
    cfg = Config(d_in=16, c=16)
    kps, desc = side(5, d_in=16)
    enc = bound_encoder(zero_mlp=True, identity_desc=True, cfg=cfg)
    out = encode(kps, desc, enc)
    np.testing.assert_array_equal(out.value, desc.matrix)


def test_position_term_separates_identical_descriptors():
    kps = KeypointSet([[10.0, 20.0], [400.0, 100.0]], [0.5, 0.5])
    desc = DescriptorSet(np.ones((2, 6)))
    out = encode(kps, desc, bound_encoder()).value
    assert not np.array_equal(out[0], out[1])


def test_translation_with_origin_shift_is_invariant():
    # integer coordinates keep the centering arithmetic exact in float64
    rng = np.random.default_rng(3)
    kps = KeypointSet(
        rng.integers(0, 600, (7, 2)).astype(float), rng.uniform(0, 1, 7)
    )
    _, desc = side(7, seed=3)
    enc = bound_encoder()
    moved = KeypointSet(kps.positions + [123.0, -45.0], kps.scores)
    a = encode(kps, desc, enc, frame=(640, 480), origin=(0.0, 0.0)).value
    b = encode(moved, desc, enc, frame=(640, 480), origin=(123.0, -45.0)).value
    assert np.array_equal(a, b)


def test_encode_is_pure():
    kps, desc = side(6, seed=5)
    enc = bound_encoder()
    a = encode(kps, desc, enc).value
    b = encode(kps, desc, enc).value
    assert np.array_equal(a, b)


def test_score_flag_changes_output_not_shapes():
    kps, desc = side(4, seed=2)
    enc = bound_encoder()
    with_score = encode(kps, desc, enc, include_score=True).value
    without = encode(kps, desc, enc, include_score=False).value
    assert with_score.shape == without.shape
    assert not np.array_equal(with_score, without)


def test_normalized_positions_bounded():
    rng = np.random.default_rng(9)
    kps = KeypointSet(
        np.column_stack([rng.uniform(0, 640, 50), rng.uniform(0, 480, 50)]),
        rng.uniform(0, 1, 50),
    )
    pos = normalized_positions(kps, (640, 480))
    assert np.abs(pos).max() <= 1.0


def test_width_mismatch_raises():
    kps, desc = side(3, d_in=5)
    with pytest.raises(ShapeMismatch):
        encode(kps, desc, bound_encoder())


def test_count_mismatch_raises():
    kps, _ = side(3)
    _, desc = side(4)
    with pytest.raises(ShapeMismatch):
        encode(kps, desc, bound_encoder())
