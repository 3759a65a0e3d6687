"""Training loop: determinism, bitwise resume, logging, failure modes."""

import numpy as np
import pytest

from amatformer import synth
from amatformer import train as T
from amatformer.config import Config
from amatformer.errors import NonFiniteLoss
from amatformer.params import map_arrays, named_arrays

TINY = Config(d_in=8, c=16, units=2, anchors=6, steps=4, eval_interval=2,
              eval_problems=1, n_inliers=12, n_outliers_source=4,
              n_outliers_target=4, sinkhorn_iters=5).validated()


def arrays_equal(a, b):
    return all(np.array_equal(x, y) for (_, x), (_, y) in
               zip(named_arrays(a), named_arrays(b)))


def test_same_seed_bitwise_identical():
    r1, r2 = T.train(TINY), T.train(TINY)
    assert arrays_equal(r1.model, r2.model)
    assert r1.rows == r2.rows


def test_resume_matches_uninterrupted():
    straight = T.train(TINY)
    first = T.train(TINY.replace(steps=2))
    resumed = T.train(TINY, model=first.model, state=first.state, start_step=2)
    assert arrays_equal(straight.model, resumed.model)
    assert straight.state.step == resumed.state.step == 4
    for x, y in zip(straight.state.m, resumed.state.m):
        np.testing.assert_array_equal(x, y)


def test_zero_steps_returns_initialization():
    res = T.train(TINY.replace(steps=0))
    assert arrays_equal(res.model, T.init_model(TINY))
    assert res.state.step == 0
    assert res.rows == []


def test_training_is_float32():
    res = T.train(TINY.replace(steps=1))
    assert all(a.dtype == np.float32 for _, a in named_arrays(res.model))
    assert all(m.dtype == np.float32 for m in res.state.m)


def test_rows_logged_at_interval_and_final_step():
    cfg = TINY.replace(steps=5, eval_interval=2, eval_problems=0)
    res = T.train(cfg)
    assert [r["step"] for r in res.rows] == [2, 4, 5]
    for r in res.rows:
        assert set(r) == {"step", "loss", "l_m", "l_anchor", "precision"}


def test_loss_trends_down():
    cfg = TINY.replace(steps=120, eval_interval=10, eval_problems=0,
                       anchors=8, n_inliers=16, desc_noise_sigma=0.2)
    rows = T.train(cfg).rows
    losses = [r["loss"] for r in rows]
    assert np.mean(losses[-3:]) < 0.5 * np.mean(losses[:3])


def test_nonfinite_parameters_abort_with_step():
    broken = T.init_model(TINY)
    poisoned = map_arrays(broken, lambda a: np.full_like(a, np.nan))
    with pytest.raises(NonFiniteLoss) as exc:
        T.train(TINY, model=poisoned)
    assert exc.value.step == 0


def test_eval_problems_differ_from_training_problems():
    train_problem, _, _ = synth.random_problem(TINY, T.step_seed(TINY.seed, 0))
    eval_problem, _, _ = synth.random_problem(TINY, T.eval_seed(TINY.seed, 0))
    assert not np.array_equal(train_problem.source_keypoints.positions,
                              eval_problem.source_keypoints.positions)


def test_rows_to_csv_format():
    rows = [{"step": 2, "loss": 1.5, "l_m": 1.0, "l_anchor": 0.002,
             "precision": 0.25}]
    csv = T.rows_to_csv(rows)
    lines = csv.strip().split("\n")
    assert lines[0] == "step,loss,l_m,l_anchor,precision"
    assert lines[1] == "2,1.500000,1.000000,0.002000,0.250000"
