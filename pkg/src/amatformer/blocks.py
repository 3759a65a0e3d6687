"""The anchor-bottleneck processing stack.

Each unit runs self-attention then cross-attention over the k anchor
features (carried from unit to unit); anchor-primary attention and the
shared FFN then lift the result back onto all n (resp. m) points — by
default once after the final unit, or inside every unit when
primary_every_unit is set. No attention matrix ever has shape n x m or
n x n; the largest is max(n, m) x k.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class UnitOutput:
    y1_s: Tensor
    y1_t: Tensor
    y2_s: Tensor
    y2_t: Tensor
    anchor_logits: Tensor  # (k, 1), feeds the per-unit anchor loss
    y3_s: Optional[Tensor] = None
    y3_t: Optional[Tensor] = None
    ytilde_s: Optional[Tensor] = None
    ytilde_t: Optional[Tensor] = None


@dataclass
class ForwardResult:
    ytilde_s: Tensor
    ytilde_t: Tensor
    units: list
    attention_shapes: list = field(default_factory=list)


def _attention(q_in, kv_in, triple, out_w, heads=1, shapes=None):
    """softmax(Q K^T / sqrt(width)) V, then the output projection LP.

    Multi-head splits the width into equal column slices; the caller adds
    the residual.
    """
    q = ad.linear(q_in, triple.w_q)
    k = ad.linear(kv_in, triple.w_k)
    v = ad.linear(kv_in, triple.w_v)
    c = q.shape[1]
    hw = c // heads
    messages = []
    for h in range(heads):
        lo, hi = h * hw, (h + 1) * hw
        qs, ks, vs = (ad.take_cols(t, lo, hi) for t in (q, k, v))
        attn = ad.softmax_rows(ad.scale(ad.matmul(qs, ad.transpose(ks)), 1.0 / math.sqrt(hw)))
        if shapes is not None:
            shapes.append(attn.shape)
        messages.append(ad.matmul(attn, vs))
    msg = messages[0] if heads == 1 else ad.hstack(messages)
    return ad.linear(msg, out_w)


def anchor_self_attention(a_s, a_t, unit, heads=1, shapes=None):
    """Per-branch self-attention over the anchors; the target branch reuses
    the source weights unless unshared copies are present."""
    proj_t = unit.self_proj_t if unit.self_proj_t is not None else unit.self_proj
    out_t = unit.self_out_t if unit.self_out_t is not None else unit.self_out
    y1_s = ad.add(a_s, _attention(a_s, a_s, unit.self_proj, unit.self_out, heads, shapes))
    y1_t = ad.add(a_t, _attention(a_t, a_t, proj_t, out_t, heads, shapes))
    return y1_s, y1_t


def anchor_cross_attention(y1_s, y1_t, unit, heads=1, shapes=None):
    """Each branch queries the other's anchors with one shared projection."""
    y2_s = ad.add(y1_s, _attention(y1_s, y1_t, unit.cross_proj, unit.cross_out, heads, shapes))
    y2_t = ad.add(y1_t, _attention(y1_t, y1_s, unit.cross_proj, unit.cross_out, heads, shapes))
    return y2_s, y2_t


def anchor_primary_attention(f_s, f_t, y2_s, y2_t, unit, heads=1, shapes=None):
    """All primary points query the k anchors — the n x k bottleneck."""
    y3_s = ad.add(f_s, _attention(f_s, y2_s, unit.primary_proj, unit.primary_out, heads, shapes))
    y3_t = ad.add(f_t, _attention(f_t, y2_t, unit.primary_proj, unit.primary_out, heads, shapes))
    return y3_s, y3_t


def _ffn_branch(x, ffn, activation):
    act = ad.relu if activation == "relu" else ad.tanh
    inner = act(ad.linear(ad.layer_norm(x, ffn.ln_gain, ffn.ln_bias), ffn.w1, ffn.b1))
    return ad.add(x, ad.linear(inner, ffn.w2, ffn.b2))


def shared_ffn(y3_s, y3_t, ffn, activation="relu"):
    """x + FFN(LN(x)) applied to both branches with the identical weights."""
    return _ffn_branch(y3_s, ffn, activation), _ffn_branch(y3_t, ffn, activation)


def anchor_logit_head(y2_s, y2_t, unit):
    """Pair-symmetric anchor score: w . (y2_s ⊙ y2_t) + b, one per anchor."""
    return ad.add(ad.matmul(ad.mul(y2_s, y2_t), unit.head_w), unit.head_b)


def forward(f_s, f_t, anchors, model, cfg):
    """Run the unit stack; returns final features plus per-unit outputs.

    f_s, f_t are encoded feature Tensors; anchor features are gathered by
    index so gradients flow back into the encoder rows they came from.
    """
    a_s = ad.take_rows(f_s, anchors.source_indices)
    a_t = ad.take_rows(f_t, anchors.target_indices)
    shapes = []
    units = []
    cur_s, cur_t = f_s, f_t
    for unit in model.units:
        y1_s, y1_t = anchor_self_attention(a_s, a_t, unit, cfg.heads, shapes)
        if cfg.cross:
            y2_s, y2_t = anchor_cross_attention(y1_s, y1_t, unit, cfg.heads, shapes)
        else:
            y2_s, y2_t = y1_s, y1_t
        out = UnitOutput(
            y1_s=y1_s, y1_t=y1_t, y2_s=y2_s, y2_t=y2_t,
            anchor_logits=anchor_logit_head(y2_s, y2_t, unit),
        )
        if cfg.primary_every_unit:
            out.y3_s, out.y3_t = anchor_primary_attention(
                cur_s, cur_t, y2_s, y2_t, unit, cfg.heads, shapes
            )
            if cfg.ffn:
                out.ytilde_s, out.ytilde_t = shared_ffn(
                    out.y3_s, out.y3_t, model.ffn, cfg.ffn_activation
                )
            else:
                out.ytilde_s, out.ytilde_t = out.y3_s, out.y3_t
            cur_s, cur_t = out.ytilde_s, out.ytilde_t
        units.append(out)
        a_s, a_t = y2_s, y2_t
    if not cfg.primary_every_unit:
        last = units[-1]
        last.y3_s, last.y3_t = anchor_primary_attention(
            cur_s, cur_t, last.y2_s, last.y2_t, model.units[-1], cfg.heads, shapes
        )
        if cfg.ffn:
            last.ytilde_s, last.ytilde_t = shared_ffn(
                last.y3_s, last.y3_t, model.ffn, cfg.ffn_activation
            )
        else:
            last.ytilde_s, last.ytilde_t = last.y3_s, last.y3_t
        cur_s, cur_t = last.ytilde_s, last.ytilde_t
    return ForwardResult(
        ytilde_s=cur_s, ytilde_t=cur_t, units=units, attention_shapes=shapes
    )
