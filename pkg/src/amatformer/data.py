"""Domain types for sparse matching problems, plus the feature file format.

Containers normalize their arrays to float64 / int64 copies and mark them
read-only, so instances can be shared across threads without defensive
copying downstream.

Feature files: magic b"AMFT", version u16 = 1, u32 n, u32 d_in, then n
records of {f32 x, f32 y, f32 score, d_in * f32 descriptor}, little-endian
throughout. A JSON mirror with the same field names is accepted for
hand-written fixtures; binary is canonical for round-trip tests.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptySide,
    FileFormatError,
    NonFiniteValue,
    ShapeMismatch,
)

FEATURE_MAGIC = b"AMFT"
FEATURE_VERSION = 1


def _frozen(values, dtype, shape_tail=None):
    a = np.array(values, dtype=dtype)
    if shape_tail is not None and (a.ndim != len(shape_tail) + 1 or a.shape[1:] != shape_tail):
        raise ShapeMismatch(f"expected trailing dims {shape_tail}, got {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class KeypointSet:
    """Detected keypoints: (count, 2) pixel positions and (count,) scores."""

    positions: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions, np.float64, (2,)))
        object.__setattr__(self, "scores", _frozen(np.atleast_1d(self.scores), np.float64))
        if self.scores.ndim != 1 or len(self.scores) != len(self.positions):
            raise ShapeMismatch(
                f"{len(self.positions)} positions vs scores shape {self.scores.shape}"
            )

    @property
    def count(self):
        return len(self.positions)


@dataclass(frozen=True)
class DescriptorSet:
    """One descriptor per keypoint, rows of a (count, d_in) matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeMismatch(f"descriptor matrix must be 2-d, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def count(self):
        return self.matrix.shape[0]

    @property
    def d_in(self):
        return self.matrix.shape[1]


@dataclass(frozen=True)
class MatchProblem:
    """A source/target pair of keypoint sets with aligned descriptors."""

    source_keypoints: KeypointSet
    source_descriptors: DescriptorSet
    target_keypoints: KeypointSet
    target_descriptors: DescriptorSet

    @property
    def n(self):
        return self.source_keypoints.count

    @property
    def m(self):
        return self.target_keypoints.count


@dataclass(frozen=True)
class FeatureSet:
    """Encoded features, one row per keypoint."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeMismatch(f"feature matrix must be 2-d, got {m.shape}")
        if not np.isfinite(m).all():
            raise NonFiniteValue("feature matrix contains NaN/Inf")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def count(self):
        return self.matrix.shape[0]

    @property
    def width(self):
        return self.matrix.shape[1]


@dataclass(frozen=True)
class AnchorPairs:
    """k selected anchor correspondences with their features.

    clamped records that fewer pairs than requested survived selection.
    """

    source_indices: np.ndarray
    target_indices: np.ndarray
    ratios: np.ndarray
    anchors_source: np.ndarray
    anchors_target: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "source_indices", _frozen(self.source_indices, np.int64))
        object.__setattr__(self, "target_indices", _frozen(self.target_indices, np.int64))
        object.__setattr__(self, "ratios", _frozen(self.ratios, np.float64))
        object.__setattr__(self, "anchors_source", _frozen(self.anchors_source, np.float64))
        object.__setattr__(self, "anchors_target", _frozen(self.anchors_target, np.float64))
        k = len(self.source_indices)
        if not (
            len(self.target_indices) == len(self.ratios)
            == len(self.anchors_source) == len(self.anchors_target) == k
        ):
            raise ShapeMismatch("anchor fields disagree on k")
        if len(np.unique(self.source_indices)) != k or len(np.unique(self.target_indices)) != k:
            raise ValueError("anchor indices must be unique per side")

    @property
    def k(self):
        return len(self.source_indices)


@dataclass(frozen=True)
class GroundTruth:
    """True matches plus the unmatched index sets on either side."""

    matches: np.ndarray          # (t, 2) [source, target] pairs
    unmatched_source: np.ndarray  # (u_s,)
    unmatched_target: np.ndarray  # (u_t,)

    def __post_init__(self):
        m = np.array(self.matches, dtype=np.int64).reshape(-1, 2)
        m.setflags(write=False)
        object.__setattr__(self, "matches", m)
        object.__setattr__(
            self, "unmatched_source", _frozen(np.atleast_1d(self.unmatched_source), np.int64)
        )
        object.__setattr__(
            self, "unmatched_target", _frozen(np.atleast_1d(self.unmatched_target), np.int64)
        )

    def match_set(self):
        return {(int(i), int(j)) for i, j in self.matches}

    def check_partition(self, n, m):
        """Every index appears exactly once across matches and unmatched sets."""
        src = np.concatenate([self.matches[:, 0], self.unmatched_source])
        tgt = np.concatenate([self.matches[:, 1], self.unmatched_target])
        if not np.array_equal(np.sort(src), np.arange(n)):
            raise ValueError(f"source indices do not partition 0..{n - 1}")
        if not np.array_equal(np.sort(tgt), np.arange(m)):
            raise ValueError(f"target indices do not partition 0..{m - 1}")


@dataclass(frozen=True)
class Correspondences:
    """Extracted hard matches with their assignment confidence."""

    pairs: np.ndarray       # (t, 2) [source, target]
    confidence: np.ndarray  # (t,)

    def __post_init__(self):
        p = np.array(self.pairs, dtype=np.int64).reshape(-1, 2)
        p.setflags(write=False)
        object.__setattr__(self, "pairs", p)
        object.__setattr__(
            self, "confidence", _frozen(np.atleast_1d(self.confidence), np.float64)
        )
        if len(self.confidence) != len(self.pairs):
            raise ShapeMismatch("confidence length vs pair count")

    def as_set(self):
        return {(int(i), int(j)) for i, j in self.pairs}

    def __len__(self):
        return len(self.pairs)


class AssignmentMatrix:
    """Dustbin-augmented (n+1) x (m+1) transport plan."""

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
            raise ShapeMismatch(f"assignment matrix shape {m.shape}")
        if (m < 0).any():
            raise ValueError("assignment matrix has negative mass")
        m.setflags(write=False)
        self.matrix = m

    @property
    def n(self):
        return self.matrix.shape[0] - 1

    @property
    def m(self):
        return self.matrix.shape[1] - 1

    def marginal_deviation(self):
        """Worst absolute deviation of real row/column sums from 1."""
        rows = np.abs(self.matrix[: self.n].sum(axis=1) - 1.0).max()
        cols = np.abs(self.matrix[:, : self.m].sum(axis=0) - 1.0).max()
        return max(rows, cols)


def validate(problem):
    """Raise the specific invariant a MatchProblem violates, if any."""
    if problem.n == 0 or problem.m == 0:
        raise EmptySide(f"problem sides n={problem.n}, m={problem.m}")
    for side, kps, desc in (
        ("source", problem.source_keypoints, problem.source_descriptors),
        ("target", problem.target_keypoints, problem.target_descriptors),
    ):
        if kps.count != desc.count:
            raise ShapeMismatch(
                f"{side}: {kps.count} keypoints vs {desc.count} descriptors"
            )
        for name, a in (("positions", kps.positions), ("scores", kps.scores),
                        ("descriptors", desc.matrix)):
            if not np.isfinite(a).all():
                raise NonFiniteValue(f"{side} {name} contain NaN/Inf")
        if (kps.scores < 0).any() or (kps.scores > 1).any():
            raise ValueError(f"{side} scores outside [0, 1]")
    if problem.source_descriptors.d_in != problem.target_descriptors.d_in:
        raise ShapeMismatch(
            f"descriptor widths differ: {problem.source_descriptors.d_in} "
            f"vs {problem.target_descriptors.d_in}"
        )


# ---------------------------------------------------------------------------
# feature file format

_HEADER = struct.Struct("<4sHII")


def atomic_write_bytes(path, payload):
    """Write via a temp file + rename so readers never see partial output."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def feature_bytes(keypoints, descriptors):
    if keypoints.count != descriptors.count:
        raise ShapeMismatch(f"{keypoints.count} keypoints vs {descriptors.count} descriptors")
    n, d_in = descriptors.count, descriptors.d_in
    records = np.empty((n, 3 + d_in), dtype="<f4")
    records[:, 0:2] = keypoints.positions
    records[:, 2] = keypoints.scores
    records[:, 3:] = descriptors.matrix
    return _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, d_in) + records.tobytes()


def write_features(path, keypoints, descriptors):
    atomic_write_bytes(path, feature_bytes(keypoints, descriptors))


def _parse_feature_json(payload):
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FileFormatError(f"feature JSON: {e}") from None
    try:
        if doc["magic"] != FEATURE_MAGIC.decode() or doc["version"] != FEATURE_VERSION:
            raise FileFormatError(
                f"feature JSON magic/version {doc.get('magic')}/{doc.get('version')}"
            )
        n, d_in = doc["n"], doc["d_in"]
        recs = doc["records"]
        if len(recs) != n:
            raise FileFormatError(f"feature JSON: {len(recs)} records, header says {n}")
        pos = np.array([[r["x"], r["y"]] for r in recs], dtype=np.float32).reshape(n, 2)
        scores = np.array([r["score"] for r in recs], dtype=np.float32)
        desc = np.array([r["descriptor"] for r in recs], dtype=np.float32).reshape(n, d_in)
    except (KeyError, TypeError, ValueError) as e:
        raise FileFormatError(f"feature JSON structure: {e}") from None
    return KeypointSet(pos, scores), DescriptorSet(desc)


def read_features(path):
    """Read a feature file (binary AMFT or its JSON mirror).

    Values are stored as f32, so a read -> write round trip is
    byte-identical for binary inputs.
    """
    with open(path, "rb") as f:
        payload = f.read()
    if payload[:4] == FEATURE_MAGIC:
        if len(payload) < _HEADER.size:
            raise FileFormatError("feature file truncated header")
        magic, version, n, d_in = _HEADER.unpack_from(payload)
        if version != FEATURE_VERSION:
            raise FileFormatError(f"feature file version {version}")
        body = payload[_HEADER.size:]
        expected = n * (3 + d_in) * 4
        if len(body) != expected:
            raise FileFormatError(
                f"feature file body {len(body)} bytes, expected {expected}"
            )
        records = np.frombuffer(body, dtype="<f4").reshape(n, 3 + d_in)
        return (
            KeypointSet(records[:, 0:2], records[:, 2]),
            DescriptorSet(records[:, 3:]),
        )
    if payload.lstrip()[:1] == b"{":
        return _parse_feature_json(payload)
    raise FileFormatError(f"unrecognized feature file magic {payload[:4]!r}")


def write_features_json(path, keypoints, descriptors):
    """JSON mirror of the binary format, for hand-written fixtures."""

    def f32(v):
        return float(np.float32(v))

    doc = {
        "magic": FEATURE_MAGIC.decode(),
        "version": FEATURE_VERSION,
        "n": descriptors.count,
        "d_in": descriptors.d_in,
        "records": [
            {
                "x": f32(keypoints.positions[i, 0]),
                "y": f32(keypoints.positions[i, 1]),
                "score": f32(keypoints.scores[i]),
                "descriptor": [f32(v) for v in descriptors.matrix[i]],
            }
            for i in range(descriptors.count)
        ],
    }
    atomic_write_bytes(path, json.dumps(doc, indent=1).encode("utf-8"))
