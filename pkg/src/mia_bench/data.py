"""Synthetic datasets, the target/shadow split, and the logits interchange format."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError, InvalidParameterError, ParseError, SchemaError
from .numerics import check_label

MEMBER = "member"
NONMEMBER = "nonmember"
MEMBERSHIP_VALUES = (MEMBER, NONMEMBER)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix ``X`` (n, d), integer labels ``y`` (n,), and the class count."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise InvalidInputError(f"features must be a non-empty (n, d) array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise InvalidInputError(f"labels shape {y.shape} does not match {X.shape[0]} examples")
        if self.num_classes < 2:
            raise InvalidParameterError("num_classes must be >= 2")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("features must be finite")
        if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= self.num_classes:
            raise InvalidInputError(f"labels must be integers in [0, {self.num_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))

    def __len__(self):
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[indices], self.y[indices], self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )


def generate_blobs(num_classes: int, per_class: int, feature_dim: int, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian clusters centred on the unit coordinate vectors.

    Class ``c`` has mean ``e_c`` and per-coordinate standard deviation
    ``spread``. Examples are laid out class by class, ``per_class`` each.
    """
    if num_classes < 2 or per_class < 1 or feature_dim < 1:
        raise InvalidParameterError("need num_classes >= 2, per_class >= 1, feature_dim >= 1")
    if num_classes > feature_dim:
        raise InvalidParameterError(
            f"num_classes={num_classes} exceeds feature_dim={feature_dim}; each class needs its own axis"
        )
    if not spread > 0:
        raise InvalidParameterError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(seed)
    X = np.empty((num_classes * per_class, feature_dim))
    for c in range(num_classes):
        mean = np.zeros(feature_dim)
        mean[c] = 1.0
        X[c * per_class:(c + 1) * per_class] = mean + spread * rng.standard_normal((per_class, feature_dim))
    y = np.repeat(np.arange(num_classes), per_class)
    return Dataset(X, y, num_classes)


@dataclass(frozen=True, eq=False)
class SplitPlan:
    target_train: np.ndarray
    target_test: np.ndarray
    shadow_pool: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "target_train": self.target_train.tolist(),
            "target_test": self.target_test.tolist(),
            "shadow_pool": self.shadow_pool.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(
            np.asarray(d["target_train"], dtype=np.int64),
            np.asarray(d["target_test"], dtype=np.int64),
            np.asarray(d["shadow_pool"], dtype=np.int64),
            int(d["seed"]),
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_target_shadow(
    dataset: Dataset,
    target_fraction: float = 0.70,
    train_fraction_within_target: float = 0.5,
    seed: int = 0,
) -> SplitPlan:
    """Shuffle and partition into target members, target non-members and the shadow pool.

    Index sets are returned sorted.
    """
    for name, f in (("target_fraction", target_fraction),
                    ("train_fraction_within_target", train_fraction_within_target)):
        if not 0 < f < 1:
            raise InvalidParameterError(f"{name} must be in (0, 1), got {f}")
    n = len(dataset)
    n_target = _round_half_up(target_fraction * n)
    n_train = _round_half_up(train_fraction_within_target * n_target)
    sizes = {"target_train": n_train, "target_test": n_target - n_train, "shadow_pool": n - n_target}
    empty = [k for k, v in sizes.items() if v <= 0]
    if empty:
        raise InvalidParameterError(f"split of {n} examples leaves {', '.join(empty)} empty")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPlan(
        target_train=np.sort(perm[:n_train]),
        target_test=np.sort(perm[n_train:n_target]),
        shadow_pool=np.sort(perm[n_target:]),
        seed=seed,
    )


def save_dataset(path, dataset: Dataset) -> None:
    """Write ``label,x_0..x_{d-1}`` CSV with exact float repr."""
    header = ["label"] + [f"x_{j}" for j in range(dataset.feature_dim)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# num_classes={dataset.num_classes}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for xi, yi in zip(dataset.X, dataset.y):
            w.writerow([int(yi)] + [repr(float(v)) for v in xi])


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# num_classes="):
            raise SchemaError("missing '# num_classes=' header", line=1)
        k = int(first.split("=", 1)[1])
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise SchemaError("no records")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return Dataset(data[:, 1:], data[:, 0].astype(np.int64), k)


# -- logits interchange ------------------------------------------------------

@dataclass(frozen=True)
class LogitsRecord:
    """One sample's model output with membership ground truth.

    ``logits`` holds raw scores for ingested model output; files written by
    the ``defend`` command reuse the same columns for probabilities.
    """

    sample_id: str
    membership: str
    true_label: int
    logits: tuple

    def __post_init__(self):
        if self.membership not in MEMBERSHIP_VALUES:
            raise InvalidInputError(f"membership must be one of {MEMBERSHIP_VALUES}, got {self.membership!r}")
        object.__setattr__(self, "logits", tuple(float(v) for v in self.logits))
        if not all(math.isfinite(v) for v in self.logits):
            raise InvalidInputError(f"record {self.sample_id!r} has non-finite values")

    @property
    def is_member(self) -> bool:
        return self.membership == MEMBER


def _fmt(v: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(v))


def save_logits_file(path, k: int, records, metadata: dict | None = None, fmt: str | None = None) -> None:
    """Write records as CSV (default) or JSON lines.

    ``metadata`` becomes a single leading ``# defense: {...}`` comment line.
    ``fmt`` defaults to ``jsonl`` when ``path`` ends in ``.jsonl``.
    """
    records = list(records)
    for r in records:
        if len(r.logits) != k:
            raise SchemaError(f"record {r.sample_id!r} has {len(r.logits)} values, expected {k}")
        check_label(r.true_label, k)
    fmt = fmt or ("jsonl" if str(path).endswith(".jsonl") else "csv")
    buf = io.StringIO()
    if metadata is not None:
        buf.write("# defense: " + json.dumps(metadata, sort_keys=True) + "\n")
    if fmt == "csv":
        buf.write(",".join(["sample_id", "membership", "true_label"] + [f"logit_{i}" for i in range(k)]) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        for r in records:
            w.writerow([r.sample_id, r.membership, r.true_label] + [_fmt(v) for v in r.logits])
    elif fmt == "jsonl":
        for r in records:
            obj = {"sample_id": r.sample_id, "membership": r.membership, "true_label": r.true_label}
            obj.update({f"logit_{i}": v for i, v in enumerate(r.logits)})
            buf.write(json.dumps(obj) + "\n")
    else:
        raise InvalidParameterError(f"unknown format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _parse_record(fields: dict, k: int, lineno: int) -> LogitsRecord:
    try:
        label = int(fields["true_label"])
        values = [float(fields[f"logit_{i}"]) for i in range(k)]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"cannot parse record: {exc}", line=lineno) from None
    membership = fields.get("membership")
    if membership not in MEMBERSHIP_VALUES:
        raise SchemaError(f"membership must be 'member' or 'nonmember', got {membership!r}", line=lineno)
    if not 0 <= label < k:
        raise SchemaError(f"true_label {label} outside [0, {k})", line=lineno)
    if not all(math.isfinite(v) for v in values):
        raise SchemaError("non-finite value", line=lineno)
    return LogitsRecord(str(fields["sample_id"]), membership, label, tuple(values))


def read_logits_file(path):
    """Parse a logits file, returning ``(k, records, metadata)``.

    ``metadata`` is the decoded ``# defense:`` line or ``None``.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    metadata = None
    start = 0
    if lines and lines[0].startswith("#"):
        head = lines[0]
        if head.startswith("# defense:"):
            try:
                metadata = json.loads(head[len("# defense:"):])
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad defense metadata: {exc}", line=1) from None
        start = 1
    body = [(i + 1, ln) for i, ln in enumerate(lines) if i >= start and ln.strip()]
    if not body:
        raise SchemaError("no records")
    records = []
    if body[0][1].lstrip().startswith("{"):
        k = None
        for lineno, ln in body:
            try:
                obj = json.loads(ln)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", line=lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line=lineno)
            n_logits = sum(1 for key in obj if key.startswith("logit_"))
            if k is None:
                k = n_logits
                if k < 2:
                    raise SchemaError(f"need at least 2 logit fields, found {k}", line=lineno)
            elif n_logits != k:
                raise SchemaError(f"record has {n_logits} logits, file declares k={k}", line=lineno)
            records.append(_parse_record(obj, k, lineno))
        return k, records, metadata

    header_line, header = body[0][0], next(csv.reader([body[0][1]]))
    logit_cols = header[3:]
    k = len(logit_cols)
    expected = ["sample_id", "membership", "true_label"] + [f"logit_{i}" for i in range(k)]
    if header != expected or k < 2:
        raise SchemaError(f"header must be {','.join(expected[:4])},...,logit_{{k-1}} with k >= 2",
                          line=header_line)
    if len(body) == 1:
        raise SchemaError("no records")
    for lineno, ln in body[1:]:
        row = next(csv.reader([ln]))
        if len(row) != len(header):
            raise SchemaError(f"row has {len(row) - 3} logits, file declares k={k}", line=lineno)
        records.append(_parse_record(dict(zip(header, row)), k, lineno))
    return k, records, metadata


def load_logits_file(path):
    """Return ``(k, records)`` from a CSV or JSON-lines logits file."""
    k, records, _ = read_logits_file(path)
    return k, records
