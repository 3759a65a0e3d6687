"""Functional Adam and global-norm clipping."""

import numpy as np
import pytest

from amatformer.errors import ShapeMismatch
from amatformer.optim import AdamState, adam_step, clip_global_norm, init_adam_state


def rand_params(rng, shapes):
    return [rng.normal(size=s) for s in shapes]


def test_zero_gradient_leaves_params_unchanged():
    params = [np.array([[1.0, -2.0]]), np.array([3.0])]
    state = init_adam_state(params)
    new_p, new_s = adam_step(params, [np.zeros_like(p) for p in params], state, lr=0.1)
    for p, q in zip(params, new_p):
        np.testing.assert_array_equal(p, q)
    assert new_s.step == 1


def test_zero_lr_leaves_params_unchanged():
    rng = np.random.default_rng(0)
    params = rand_params(rng, [(2, 3)])
    grads = rand_params(rng, [(2, 3)])
    new_p, _ = adam_step(params, grads, init_adam_state(params), lr=0.0)
    np.testing.assert_array_equal(params[0], new_p[0])


def test_first_step_is_signed_lr():
    # with bias correction, step 1 moves each coordinate by ~lr * sign(grad)
    p = [np.array([[0.0, 0.0]])]
    g = [np.array([[4.0, -0.25]])]
    new_p, _ = adam_step(p, g, init_adam_state(p), lr=0.1)
    np.testing.assert_allclose(new_p[0], [[-0.1, 0.1]], atol=1e-8)


def test_matches_scripted_recurrence():
    rng = np.random.default_rng(7)
    shapes = [(3, 2), (1, 4)]
    params = rand_params(rng, shapes)
    lr, b1, b2, eps = 3e-3, 0.9, 0.999, 1e-8

    ref_p = [p.copy() for p in params]
    ref_m = [np.zeros_like(p) for p in params]
    ref_v = [np.zeros_like(p) for p in params]
    state = init_adam_state(params)
    cur = params
    for t in range(1, 8):
        grads = rand_params(rng, shapes)
        cur, state = adam_step(cur, grads, state, lr=lr, beta1=b1, beta2=b2, eps=eps)
        for i, g in enumerate(grads):
            ref_m[i] = b1 * ref_m[i] + (1 - b1) * g
            ref_v[i] = b2 * ref_v[i] + (1 - b2) * g * g
            mhat = ref_m[i] / (1 - b1**t)
            vhat = ref_v[i] / (1 - b2**t)
            ref_p[i] = ref_p[i] - lr * mhat / (np.sqrt(vhat) + eps)
    for got, want in zip(cur, ref_p):
        np.testing.assert_array_equal(got, want)
    assert state.step == 7


def test_inputs_not_mutated():
    rng = np.random.default_rng(1)
    params = rand_params(rng, [(2, 2)])
    grads = rand_params(rng, [(2, 2)])
    p0, g0 = params[0].copy(), grads[0].copy()
    state = init_adam_state(params)
    m0 = state.m[0].copy()
    adam_step(params, grads, state, lr=0.01)
    np.testing.assert_array_equal(params[0], p0)
    np.testing.assert_array_equal(grads[0], g0)
    np.testing.assert_array_equal(state.m[0], m0)
    assert state.step == 0


def test_state_list_length_checked():
    params = [np.zeros((2,))]
    with pytest.raises(ShapeMismatch):
        adam_step(params, [np.zeros((2,)), np.zeros((2,))],
                  init_adam_state(params), lr=0.1)


def test_param_grad_shape_checked():
    params = [np.zeros((2, 3))]
    with pytest.raises(ShapeMismatch):
        adam_step(params, [np.zeros((3, 2))], init_adam_state(params), lr=0.1)


def test_stepwise_equals_uninterrupted():
    # 5 consecutive steps == 3 steps, hand state across, 2 more -- bitwise
    rng = np.random.default_rng(2)
    params = rand_params(rng, [(4, 4), (4,)])
    grad_seq = [rand_params(np.random.default_rng(100 + t), [(4, 4), (4,)])
                for t in range(5)]

    a, sa = [p.copy() for p in params], init_adam_state(params)
    for g in grad_seq:
        a, sa = adam_step(a, g, sa, lr=1e-2)

    b, sb = [p.copy() for p in params], init_adam_state(params)
    for g in grad_seq[:3]:
        b, sb = adam_step(b, g, sb, lr=1e-2)
    resumed = AdamState(step=sb.step, m=[x.copy() for x in sb.m],
                        v=[x.copy() for x in sb.v])
    for g in grad_seq[3:]:
        b, resumed = adam_step(b, g, resumed, lr=1e-2)

    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert sa.step == resumed.step == 5


def test_clip_noop_below_threshold():
    grads = [np.array([3.0]), np.array([4.0])]  # norm 5
    clipped, total = clip_global_norm(grads, 10.0)
    assert total == 5.0
    for g, c in zip(grads, clipped):
        np.testing.assert_array_equal(g, c)


def test_clip_scales_to_max_norm():
    grads = [np.array([30.0]), np.array([40.0])]  # norm 50
    clipped, total = clip_global_norm(grads, 10.0)
    assert total == 50.0
    new_norm = np.sqrt(sum((g**2).sum() for g in clipped))
    np.testing.assert_allclose(new_norm, 10.0, rtol=1e-12)
    np.testing.assert_allclose(clipped[0], [6.0])


def test_clip_zero_gradients():
    clipped, total = clip_global_norm([np.zeros((3,))], 1.0)
    assert total == 0.0
    np.testing.assert_array_equal(clipped[0], np.zeros(3))


def test_clip_preserves_float32():
    grads = [np.full((2, 2), 100.0, dtype=np.float32)]
    clipped, total = clip_global_norm(grads, 1.0)
    assert clipped[0].dtype == np.float32
    assert total > 1.0


def test_adam_preserves_float32():
    params = [np.ones((2, 2), dtype=np.float32)]
    grads = [np.full((2, 2), 0.5, dtype=np.float32)]
    new_p, state = adam_step(params, grads, init_adam_state(params), lr=1e-3)
    assert new_p[0].dtype == np.float32
    assert state.m[0].dtype == np.float32
