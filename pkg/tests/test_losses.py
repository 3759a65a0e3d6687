"""Matching NLL, anchor labels, per-unit BCE, and the combined objective."""

import numpy as np
import pytest

from amatformer import autodiff as ad
from amatformer.autodiff import Tape
from amatformer.data import AnchorPairs, GroundTruth, KeypointSet
from amatformer.errors import IndexOutOfBounds, LengthMismatch
from amatformer.losses import (
    anchor_labels,
    anchor_labels_geometric,
    anchor_unit_loss,
    matching_loss,
    total_loss,
)


def plan_tensor(tape, arr):
    return tape.parameter(np.asarray(arr, dtype=np.float64), "plan")


def full_gt(n):
    return GroundTruth(
        matches=np.stack([np.arange(n), np.arange(n)], axis=1),
        unmatched_source=np.array([], dtype=np.int64),
        unmatched_target=np.array([], dtype=np.int64),
    )


def test_unit_mass_on_truth_gives_zero_loss():
    tape = Tape()
    plan = np.zeros((4, 4))
    np.fill_diagonal(plan[:3, :3], 1.0)
    loss = matching_loss(plan_tensor(tape, plan), full_gt(3))
    assert loss.value.item() == 0.0


def test_half_mass_costs_log_two_per_entry():
    tape = Tape()
    plan = np.zeros((3, 3))
    plan[0, 0] = plan[1, 1] = 0.5
    loss = matching_loss(plan_tensor(tape, plan), full_gt(2))
    np.testing.assert_allclose(loss.value.item(), 2.0 * np.log(2.0), rtol=1e-12)


def test_all_unmatched_scores_dustbin_entries():
    # everything unmatched: rows go to column m, columns to row n
    tape = Tape()
    plan = np.zeros((3, 4))
    plan[:2, 3] = 1.0   # both source points -> dustbin column
    plan[2, :3] = 1.0   # all three target points <- dustbin row
    gt = GroundTruth(
        matches=np.zeros((0, 2), dtype=np.int64),
        unmatched_source=np.array([0, 1]),
        unmatched_target=np.array([0, 1, 2]),
    )
    loss = matching_loss(plan_tensor(tape, plan), gt)
    assert loss.value.item() == 0.0


def test_floor_keeps_zero_entries_finite():
    tape = Tape()
    loss = matching_loss(plan_tensor(tape, np.zeros((3, 3))), full_gt(2))
    # oracle: two entries floored at 1e-12 -> 2 * 12 * ln(10)
    np.testing.assert_allclose(loss.value.item(), -2.0 * np.log(1e-12), rtol=1e-12)
    assert np.isfinite(loss.value.item())


def test_match_index_at_n_rejected():
    # n = 2 real rows; a match pointing at row 2 would hit the dustbin
    tape = Tape()
    gt = GroundTruth(
        matches=np.array([[2, 0]]),
        unmatched_source=np.array([0, 1]),
        unmatched_target=np.array([1]),
    )
    with pytest.raises(IndexOutOfBounds):
        matching_loss(plan_tensor(tape, np.full((3, 3), 0.25)), gt)


def test_unmatched_target_index_bounds():
    tape = Tape()
    gt = GroundTruth(
        matches=np.array([[0, 0]]),
        unmatched_source=np.array([1]),
        unmatched_target=np.array([2]),
    )
    with pytest.raises(IndexOutOfBounds):
        matching_loss(plan_tensor(tape, np.full((3, 3), 0.25)), gt)


def test_matching_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    gt = GroundTruth(
        matches=np.array([[0, 1], [2, 0]]),
        unmatched_source=np.array([1]),
        unmatched_target=np.array([2]),
    )
    plan = rng.uniform(0.05, 0.9, (4, 4))
    worst = ad.grad_check(lambda p: matching_loss(p, gt), [plan])
    assert worst < 1e-6


def test_gradient_zero_for_untouched_entries():
    tape = Tape()
    p = plan_tensor(tape, np.full((3, 3), 0.5))
    grads = ad.backward(tape, matching_loss(p, full_gt(2)))
    g = grads[p]
    assert g[0, 1] == 0.0 and g[1, 0] == 0.0
    np.testing.assert_allclose(np.diag(g)[:2], -2.0, rtol=1e-12)


def make_anchors(src, tgt):
    k = len(src)
    feats = np.zeros((k, 4))
    return AnchorPairs(
        source_indices=np.asarray(src),
        target_indices=np.asarray(tgt),
        ratios=np.linspace(0.1, 0.9, k),
        anchors_source=feats,
        anchors_target=feats,
    )


def test_anchor_labels_by_membership():
    anchors = make_anchors([0, 1, 2], [0, 2, 1])
    gt = GroundTruth(
        matches=np.array([[0, 0], [2, 1]]),
        unmatched_source=np.array([1]),
        unmatched_target=np.array([2]),
    )
    np.testing.assert_array_equal(anchor_labels(anchors, gt), [[1.0], [0.0], [1.0]])


class _Shift:
    def __init__(self, dx, dy):
        self.offset = np.array([dx, dy], dtype=np.float64)

    def apply(self, positions):
        return positions + self.offset


def test_anchor_labels_geometric_threshold_is_strict():
    src = KeypointSet(positions=np.array([[0.0, 0.0], [10.0, 10.0], [20.0, 0.0]]),
                      scores=np.ones(3))
    # targets: first lands exactly on warp(src), second 3px off, third 2.99px
    tgt = KeypointSet(positions=np.array([[5.0, 0.0], [15.0, 13.0], [25.0, 2.99]]),
                      scores=np.ones(3))
    anchors = make_anchors([0, 1, 2], [0, 1, 2])
    labels = anchor_labels_geometric(anchors, src, tgt, warp=_Shift(5.0, 0.0), tau=3.0)
    np.testing.assert_array_equal(labels, [[1.0], [0.0], [1.0]])


def test_unit_loss_saturation():
    tape = Tape()
    k = 4

    def loss_for(logit, label):
        logits = tape.parameter(np.full((k, 1), logit), f"l{logit}_{label}")
        return anchor_unit_loss(logits, np.full((k, 1), label)).value.item()

    assert loss_for(12.0, 1.0) < 1e-5          # confident and right
    np.testing.assert_allclose(loss_for(0.0, 1.0), np.log(2.0), rtol=1e-12)
    np.testing.assert_allclose(loss_for(-30.0, 1.0), 30.0, rtol=1e-6)  # confident, wrong


def test_unit_loss_length_mismatch():
    tape = Tape()
    logits = tape.parameter(np.zeros((3, 1)), "logits")
    with pytest.raises(LengthMismatch):
        anchor_unit_loss(logits, np.ones((4, 1)))


def test_total_loss_combination():
    tape = Tape()
    l_m = tape.parameter(np.array([[26.0]]), "lm")
    units = [tape.parameter(np.array([[0.1]]), "u0"),
             tape.parameter(np.array([[0.1]]), "u1")]
    total = total_loss(l_m, units, alpha=250.0)
    np.testing.assert_allclose(total.value.item(), 76.0, rtol=1e-12)


def test_total_loss_gradients_scale_unit_terms():
    tape = Tape()
    l_m = tape.parameter(np.array([[3.0]]), "lm")
    units = [tape.parameter(np.array([[0.5]]), "u0"),
             tape.parameter(np.array([[0.25]]), "u1")]
    grads = ad.backward(tape, total_loss(l_m, units, alpha=250.0))
    assert grads[l_m].item() == 1.0
    assert grads[units[0]].item() == 250.0
    assert grads[units[1]].item() == 250.0


def test_total_loss_requires_unit_terms():
    tape = Tape()
    l_m = tape.parameter(np.array([[1.0]]), "lm")
    with pytest.raises(ValueError):
        total_loss(l_m, [], alpha=250.0)
