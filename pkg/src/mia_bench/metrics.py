"""Privacy/utility bookkeeping: eval reports, MIDPUT and a KL leakage diagnostic."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from .exceptions import InvalidInputError, SchemaError
from .numerics import check_probs, kl_divergence

NO_DEFENSE = "None"

# CSV columns: accuracy and per-attack ASR, then the MIDPUT breakdown
EVAL_COLUMNS = ("defense", "model", "confidence", "loss", "shadow")
MIDPUT_COLUMNS = ("defense", "delta_acc", "delta_conf", "delta_loss", "delta_shadow",
                  "midput_c", "midput_l", "midput_s", "midput_overall")


class MidputRangeWarning(UserWarning):
    """A MIDPUT value fell outside [-1, 1]."""


@dataclass(frozen=True)
class EvalReport:
    defense: str
    test_accuracy: float
    asr_confidence: float
    asr_loss: float
    asr_shadow: float

    def __post_init__(self):
        for name in ("test_accuracy", "asr_confidence", "asr_loss", "asr_shadow"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name}={v} outside [0, 1]")

    def row(self) -> list:
        return [self.defense, self.test_accuracy, self.asr_confidence, self.asr_loss, self.asr_shadow]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**{f.name: d[f.name] for f in fields(cls)})


@dataclass(frozen=True)
class MidputReport:
    defense: str
    delta_acc: float
    delta_conf: float
    delta_loss: float
    delta_shadow: float
    midput_c: float
    midput_l: float
    midput_s: float
    midput_overall: float

    def row(self) -> list:
        return [getattr(self, c) for c in MIDPUT_COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)


def compute_midput(no_def: EvalReport, defended: EvalReport) -> MidputReport:
    """Attack-success reduction net of the accuracy drop, per attack and averaged."""
    if not isinstance(no_def, EvalReport) or not isinstance(defended, EvalReport):
        raise InvalidInputError("compute_midput takes two EvalReport instances")
    if no_def.defense != NO_DEFENSE:
        raise InvalidInputError(f"baseline report must be the '{NO_DEFENSE}' condition, got {no_def.defense!r}")
    d_acc = no_def.test_accuracy - defended.test_accuracy
    d_c = no_def.asr_confidence - defended.asr_confidence
    d_l = no_def.asr_loss - defended.asr_loss
    d_s = no_def.asr_shadow - defended.asr_shadow
    rep = MidputReport(
        defended.defense, d_acc, d_c, d_l, d_s,
        d_c - d_acc, d_l - d_acc, d_s - d_acc,
        (d_c + d_l + d_s) / 3.0 - d_acc,
    )
    out = [v for v in (rep.midput_c, rep.midput_l, rep.midput_s, rep.midput_overall) if not -1 <= v <= 1]
    if out:
        warnings.warn(f"MIDPUT values {out} for {defended.defense!r} fall outside [-1, 1]",
                      MidputRangeWarning, stacklevel=2)
    return rep


def confidence_histogram(probs, num_bins: int = 20) -> np.ndarray:
    """Laplace-smoothed, normalized histogram of per-sample max probability on [0, 1]."""
    P = check_probs(np.asarray(probs, dtype=np.float64))
    if P.ndim != 2 or P.shape[0] == 0:
        raise InvalidInputError("need a non-empty list of probability vectors")
    conf = P.max(axis=1)
    bins = np.minimum((conf * num_bins).astype(np.int64), num_bins - 1)
    counts = np.bincount(bins, minlength=num_bins).astype(np.float64) + 1.0
    return counts / counts.sum()


def leakage_kl(member_probs, nonmember_probs, num_bins: int = 20) -> float:
    """KL divergence between member and non-member max-confidence histograms."""
    if num_bins < 1:
        raise InvalidInputError("num_bins must be >= 1")
    pm = confidence_histogram(member_probs, num_bins)
    pn = confidence_histogram(nonmember_probs, num_bins)
    return kl_divergence(pm, pn)


# -- serialization -----------------------------------------------------------

def _num(v) -> str:
    return repr(float(v))


def eval_reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for r in reports:
        w.writerow([r.defense] + [_num(v) for v in r.row()[1:]])
    return buf.getvalue()


def midput_reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MIDPUT_COLUMNS)
    for r in reports:
        w.writerow([r.defense] + [_num(v) for v in r.row()[1:]])
    return buf.getvalue()


def read_eval_reports(path) -> list:
    """Parse an eval-report CSV (``defense,model,confidence,loss,shadow``)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError("no records")
    header = [h.strip().lower() for h in rows[0]]
    if tuple(header) != EVAL_COLUMNS:
        raise SchemaError(f"expected header {','.join(EVAL_COLUMNS)}, got {','.join(rows[0])}", line=1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(EVAL_COLUMNS):
            raise SchemaError(f"expected {len(EVAL_COLUMNS)} fields, got {len(row)}", line=lineno)
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise SchemaError(str(exc), line=lineno) from None
        try:
            out.append(EvalReport(row[0], *vals))
        except InvalidInputError as exc:
            raise SchemaError(str(exc), line=lineno) from None
    if not out:
        raise SchemaError("no records")
    return out


def reports_to_json(eval_reports, midput_reports) -> str:
    return json.dumps({
        "eval": [r.to_dict() for r in eval_reports],
        "midput": [r.to_dict() for r in midput_reports],
    }, indent=2, sort_keys=True)
