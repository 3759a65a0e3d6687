"""Run configuration: one flat record of every tunable, JSON round-trippable.

Field names double as config-file keys and (with dashes) CLI flag names, so
an ablation is always expressible as a one-line config diff.
"""

import json
from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Config:
    # model
    d_in: int = 32          # raw descriptor width
    c: int = 128            # feature width after encoding
    units: int = 3          # processing units R
    heads: int = 1          # attention heads (c must divide evenly)
    anchors: int = 128      # anchor pairs k
    ffn: bool = True        # shared FFN stage on/off
    cross: bool = True      # anchor cross-attention on/off
    siamese: bool = True    # share self-attention weights across branches
    primary_every_unit: bool = False  # run anchor-primary + FFN inside every unit
    ffn_activation: str = "relu"      # or "tanh"
    metric: str = "weighted"          # or "cosine"
    include_score: bool = True        # keypoint score joins (x, y) in the MLP
    normalize_positions: bool = True
    anchor_source: str = "encoded"    # or "raw" descriptors for the ratio test
    mutual_filter: bool = False       # require mutual NN before anchor ranking
    frame: tuple = (640, 480)

    # assignment
    sinkhorn_iters: int = 10
    threshold: float = 0.2

    # training
    alpha: float = 250.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 10.0
    steps: int = 2000
    seed: int = 0
    eval_interval: int = 250
    eval_problems: int = 8
    tau: float = 3.0        # reprojection threshold (px) for geometric labels

    # synthetic task
    n_inliers: int = 48
    n_outliers_source: int = 16
    n_outliers_target: int = 16
    noise_sigma: float = 1.0
    desc_noise_sigma: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "frame", tuple(self.frame))

    def validated(self):
        if self.units < 1:
            raise ValueError("units must be >= 1")
        if self.anchors < 1:
            raise ValueError("anchors must be >= 1")
        if self.heads < 1 or self.c % self.heads != 0:
            raise ValueError(f"heads={self.heads} must divide c={self.c}")
        if self.c < 2:
            raise ValueError("c must be >= 2")
        if self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_iters must be >= 1")
        if self.metric not in ("weighted", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.anchor_source not in ("encoded", "raw"):
            raise ValueError(f"unknown anchor_source {self.anchor_source!r}")
        if self.ffn_activation not in ("relu", "tanh"):
            raise ValueError(f"unknown ffn_activation {self.ffn_activation!r}")
        if len(self.frame) != 2 or min(self.frame) <= 0:
            raise ValueError(f"bad frame {self.frame}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        return self

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def replace(self, **kw):
        return replace(self, **kw).validated()


_FIELDS = {f.name for f in fields(Config)}


def config_from_dict(doc, base=None):
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    base = base or Config()
    return replace(base, **doc).validated()


def load_config(path, base=None):
    """Parse a JSON config file; errors carry the offending line number."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return config_from_dict(doc, base=base)
