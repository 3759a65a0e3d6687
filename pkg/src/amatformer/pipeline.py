"""End-to-end glue: encode a problem, pick anchors, run the unit stack, and
turn the transport plan into hard matches."""

from dataclasses import dataclass

from . import anchors as anchor_selection
from . import assignment, blocks, encoder
from .params import bind


def encode_problem(problem, enc, cfg):
    """Encode both sides with the shared encoder parameters (Tensor leaves)."""
    f_s = encoder.encode(
        problem.source_keypoints, problem.source_descriptors, enc,
        frame=cfg.frame, include_score=cfg.include_score,
        normalize=cfg.normalize_positions,
    )
    f_t = encoder.encode(
        problem.target_keypoints, problem.target_descriptors, enc,
        frame=cfg.frame, include_score=cfg.include_score,
        normalize=cfg.normalize_positions,
    )
    return f_s, f_t


def select_problem_anchors(problem, f_s, f_t, cfg):
    """Ratio-test anchor selection; scoring runs on plain values because the
    selection itself is not differentiated (gradients flow through the
    gathered rows instead)."""
    if cfg.anchor_source == "raw":
        feats_s = problem.source_descriptors.matrix
        feats_t = problem.target_descriptors.matrix
    else:
        feats_s, feats_t = f_s.value, f_t.value
    candidates = anchor_selection.nn_ratio_scores(feats_s, feats_t)
    return anchor_selection.select_anchors(
        candidates, cfg.anchors, feats_s, feats_t,
        require_mutual=cfg.mutual_filter,
    )


@dataclass
class ModelRun:
    """Everything one forward pass produces, kept on-tape for training."""

    f_s: object
    f_t: object
    anchors: object
    result: object
    scores: object
    plan: object


def run_model(problem, model, cfg, anchors=None):
    """Full differentiable pass; model leaves must already be Tensors."""
    f_s, f_t = encode_problem(problem, model.encoder, cfg)
    if anchors is None:
        anchors = select_problem_anchors(problem, f_s, f_t, cfg)
    result = blocks.forward(f_s, f_t, anchors, model, cfg)
    scores = assignment.bilinear_similarity(
        result.ytilde_s, result.ytilde_t, model.metric_w, mode=cfg.metric
    )
    plan = assignment.sinkhorn(
        assignment.augment_dustbin(scores, model.dustbin), cfg.sinkhorn_iters
    )
    return ModelRun(f_s=f_s, f_t=f_t, anchors=anchors, result=result,
                    scores=scores, plan=plan)


def match_pair(problem, model, cfg):
    """Inference: numpy-leaf model in, hard correspondences out."""
    run = run_model(problem, bind(model), cfg)
    matches = assignment.extract_matches(run.plan.value, threshold=cfg.threshold)
    return matches, run
