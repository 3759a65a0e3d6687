"""Training loop: one synthetic problem per step, reverse-mode gradients
through the whole pipeline, Adam with global-norm clipping.

Everything runs float32 so checkpoints round-trip exactly; determinism comes
from deriving every random stream from (config seed, step index) -- a resumed
run regenerates the same problems a straight run would have seen.
"""

from dataclasses import dataclass, field

import numpy as np

from . import losses, metrics, pipeline
from .autodiff import Tape, backward, default_dtype
from .errors import NonFiniteLoss
from .optim import adam_step, clip_global_norm, init_adam_state
from .params import bind, flat_values, init_model_params, map_arrays, rebuild_like
from .synth import random_problem


def step_seed(seed, step):
    return np.random.SeedSequence(entropy=seed, spawn_key=(0, step))


def eval_seed(seed, index):
    # separate namespace so held-out problems never collide with training ones
    return np.random.SeedSequence(entropy=seed, spawn_key=(1, index))


def held_out_problems(cfg):
    return [random_problem(cfg, eval_seed(cfg.seed, i))
            for i in range(cfg.eval_problems)]


def held_out_precision(model, cfg, problems):
    vals = []
    for problem, gt, _warp in problems:
        pred, _run = pipeline.match_pair(problem, model, cfg)
        vals.append(metrics.precision(pred, gt))
    return float(np.mean(vals)) if vals else 0.0


def init_model(cfg):
    """Float32 initialization; the draw itself is seeded by cfg.seed."""
    return map_arrays(init_model_params(cfg, seed=cfg.seed),
                      lambda a: a.astype(np.float32))


def loss_terms(problem, gt, warp, model_t, cfg):
    """Forward pass plus all loss pieces for one problem, on-tape."""
    run = pipeline.run_model(problem, model_t, cfg)
    l_m = losses.matching_loss(run.plan, gt)
    labels = losses.anchor_labels_geometric(
        run.anchors, problem.source_keypoints, problem.target_keypoints,
        warp, tau=cfg.tau,
    )
    unit_losses = [losses.anchor_unit_loss(u.anchor_logits, labels)
                   for u in run.result.units]
    return losses.total_loss(l_m, unit_losses, cfg.alpha), l_m, unit_losses, run


@dataclass
class TrainResult:
    model: object
    state: object
    rows: list = field(default_factory=list)   # metrics log rows, dicts


def train(cfg, model=None, state=None, start_step=0, on_row=None):
    """Run steps [start_step, cfg.steps); returns TrainResult.

    model/state resume a previous run when given (float32 leaves); on_row is
    called with each metrics row as it is produced.
    """
    with default_dtype(np.float32):
        if model is None:
            model = init_model(cfg)
        if state is None:
            state = init_adam_state(flat_values(model))
        eval_set = held_out_problems(cfg) if cfg.eval_problems > 0 else []
        rows = []

        def log_row(step, loss_v, l_m_v, l_anchor_v):
            precision = held_out_precision(model, cfg, eval_set) if eval_set else 0.0
            row = {"step": step, "loss": loss_v, "l_m": l_m_v,
                   "l_anchor": l_anchor_v, "precision": precision}
            rows.append(row)
            if on_row is not None:
                on_row(row)

        for step in range(start_step, cfg.steps):
            problem, gt, warp = random_problem(cfg, step_seed(cfg.seed, step))
            tape = Tape()
            bound = bind(model, tape)
            total, l_m, unit_losses, _run = loss_terms(problem, gt, warp, bound, cfg)
            loss_v = total.value.item()
            if not np.isfinite(loss_v):
                raise NonFiniteLoss(step)
            grads = backward(tape, total)
            ordered = [grads[p] for p in tape.parameters]
            clipped, _norm = clip_global_norm(ordered, cfg.clip_norm)
            new_values, state = adam_step(
                [p.value for p in tape.parameters], clipped, state,
                lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps,
            )
            model = rebuild_like(model, new_values)
            done = step + 1
            if done % cfg.eval_interval == 0 or done == cfg.steps:
                l_anchor = sum(u.value.item() for u in unit_losses)
                log_row(done, loss_v, l_m.value.item(), l_anchor)
        return TrainResult(model=model, state=state, rows=rows)


def rows_to_csv(rows):
    lines = ["step,loss,l_m,l_anchor,precision"]
    for r in rows:
        lines.append(
            f"{r['step']},{r['loss']:.6f},{r['l_m']:.6f},"
            f"{r['l_anchor']:.6f},{r['precision']:.6f}"
        )
    return "\n".join(lines) + "\n"
