"""Seeded end-to-end experiments: data, target, shadow attack, defenses, reports.

Every random choice is derived from ``ExperimentConfig.seed`` through
:func:`~mia_bench.numerics.derive_seed` with a fixed key per role, so results
do not depend on which conditions run, in which order, or on how many
worker threads are used.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackThresholds, ShadowModelAttack, run_attack_suite
from .data import Dataset, SplitPlan, generate_blobs, split_target_shadow
from .defenses import (
    DynaNoise,
    DynaNoiseConfig,
    SelenaConfig,
    StaticNoise,
    StaticNoiseConfig,
    dynanoise_transform,
    selena_inference,
    selena_train,
)
from .exceptions import ConfigurationError, InvalidParameterError, MiaBenchError
from .metrics import (
    NO_DEFENSE,
    EvalReport,
    compute_midput,
    eval_reports_to_csv,
    leakage_kl,
    midput_reports_to_csv,
    reports_to_json,
)
from .models import MLPClassifier, TrainConfig, argmax_accuracy
from .numerics import SeededRng, derive_seed, softmax

log = logging.getLogger(__name__)

CONDITIONS = ("None", "StaticNoise", "SELENA", "DynaNoise")
SWEEP_PARAMS = ("base_variance", "lambda_scale", "temperature")
SWEEP_METRICS = ("test_accuracy", "asr_confidence", "asr_loss", "asr_shadow")

# derive_seed keys, one per randomness consumer
_K_DATA, _K_SPLIT, _K_TARGET, _K_SHADOW, _K_SELENA = 1, 2, 3, 4, 5
_K_NOISE = {"StaticNoise": 101, "DynaNoise": 102}


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one run.

    The defaults are the desk-scale setup: 4 overlapping classes
    (``spread=1.0``), 200 examples per class in 16 dimensions and a
    64-unit hidden layer. The class overlap keeps test accuracy well below
    training accuracy, which is the membership signal the attacks need.
    """

    num_classes: int = 4
    per_class: int = 200
    feature_dim: int = 16
    spread: float = 1.0
    target_fraction: float = 0.70
    train_fraction_within_target: float = 0.5
    hidden_width: int = 64
    train: TrainConfig = field(default_factory=TrainConfig)
    dynanoise: DynaNoiseConfig = field(default_factory=DynaNoiseConfig)
    static_noise: StaticNoiseConfig = field(default_factory=StaticNoiseConfig)
    selena: SelenaConfig = field(default_factory=SelenaConfig)
    thresholds: AttackThresholds = field(default_factory=AttackThresholds)
    seed: int = 0
    conditions: tuple = CONDITIONS

    def __post_init__(self):
        # SELENA's sub-models and student train exactly like the target
        object.__setattr__(self, "selena", replace(self.selena, submodel_train=self.train,
                                                   distill_train=self.train))
        unknown = [c for c in self.conditions if c not in CONDITIONS]
        if unknown:
            raise ConfigurationError(f"unknown condition(s) {unknown}; choose from {CONDITIONS}",
                                     key="conditions")
        if not self.conditions:
            raise ConfigurationError("conditions must not be empty", key="conditions")
        if len(set(self.conditions)) != len(self.conditions):
            raise ConfigurationError("conditions must not repeat", key="conditions")

    # JSON layout: nested sections, strict keys
    def to_dict(self) -> dict:
        tr = asdict(self.train)
        tr.pop("seed")
        sel = self.selena
        return {
            "data": {"num_classes": self.num_classes, "per_class": self.per_class,
                     "feature_dim": self.feature_dim, "spread": self.spread},
            "split": {"target_fraction": self.target_fraction,
                      "train_fraction_within_target": self.train_fraction_within_target},
            "model": {"hidden_width": self.hidden_width},
            "train": tr,
            "dynanoise": asdict(self.dynanoise),
            "static_noise": asdict(self.static_noise),
            "selena": {"num_submodels": sel.num_submodels,
                       "partitions_per_sample": sel.partitions_per_sample},
            "thresholds": asdict(self.thresholds),
            "seed": self.seed,
            "conditions": list(self.conditions),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigurationError("config must be a JSON object")
        sections = {
            "data": ("num_classes", "per_class", "feature_dim", "spread"),
            "split": ("target_fraction", "train_fraction_within_target"),
            "model": ("hidden_width",),
            "train": ("epochs", "learning_rate", "batch_size"),
            "dynanoise": ("base_variance", "lambda_scale", "temperature"),
            "static_noise": ("variance", "temperature"),
            "selena": ("num_submodels", "partitions_per_sample"),
            "thresholds": ("tau", "gamma"),
        }
        for key in obj:
            if key not in sections and key not in ("seed", "conditions"):
                raise ConfigurationError(f"unknown config key '{key}'", key=key)
        parsed = {}
        for sec, allowed in sections.items():
            body = obj.get(sec, {})
            if not isinstance(body, dict):
                raise ConfigurationError(f"'{sec}' must be an object", key=sec)
            for k, v in body.items():
                if k not in allowed:
                    raise ConfigurationError(f"unknown config key '{sec}.{k}'", key=f"{sec}.{k}")
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigurationError(f"'{sec}.{k}' must be a number", key=f"{sec}.{k}")
            parsed[sec] = body

        def build(sec, factory, **extra):
            try:
                return factory(**parsed[sec], **extra)
            except (InvalidParameterError, TypeError, ValueError) as exc:
                named = [k for k in parsed[sec] if k in str(exc)]
                key = f"{sec}.{named[0]}" if named else sec
                raise ConfigurationError(f"invalid '{key}': {exc}", key=key) from None

        seed = obj.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigurationError("'seed' must be a non-negative integer", key="seed")
        conditions = obj.get("conditions", list(CONDITIONS))
        if not isinstance(conditions, list) or not all(isinstance(c, str) for c in conditions):
            raise ConfigurationError("'conditions' must be a list of names", key="conditions")
        train = build("train", TrainConfig)
        kwargs = {}
        for sec in ("data", "split", "model"):
            kwargs.update(parsed[sec])
        try:
            cfg = cls(
                **kwargs,
                train=train,
                dynanoise=build("dynanoise", DynaNoiseConfig),
                static_noise=build("static_noise", StaticNoiseConfig),
                selena=build("selena", SelenaConfig, submodel_train=train, distill_train=train),
                thresholds=build("thresholds", AttackThresholds),
                seed=seed,
                conditions=tuple(conditions),
            )
        except TypeError as exc:
            raise ConfigurationError(str(exc), key="data") from None
        cfg.validate()
        return cfg

    def validate(self):
        """Cheap checks that would otherwise fail deep inside the pipeline."""
        checks = (
            ("data.num_classes", self.num_classes >= 2, "must be >= 2"),
            ("data.num_classes", self.num_classes <= self.feature_dim, "must not exceed data.feature_dim"),
            ("data.per_class", self.per_class >= 1, "must be >= 1"),
            ("data.spread", self.spread > 0, "must be > 0"),
            ("split.target_fraction", 0 < self.target_fraction < 1, "must be in (0, 1)"),
            ("split.train_fraction_within_target", 0 < self.train_fraction_within_target < 1,
             "must be in (0, 1)"),
            ("model.hidden_width", self.hidden_width >= 1, "must be >= 1"),
        )
        for key, ok, msg in checks:
            if not ok:
                raise ConfigurationError(f"'{key}' {msg}", key=key)


def load_config(path) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None
    return ExperimentConfig.from_dict(obj)


@dataclass
class Prepared:
    """Everything shared by the defense conditions of one configuration."""

    dataset: Dataset
    split: SplitPlan
    target: MLPClassifier
    attack: ShadowModelAttack
    selena_probs: dict = field(default_factory=dict)


@dataclass
class PipelineResult:
    eval_reports: list
    midput_reports: list
    failures: dict
    target_train_accuracy: float
    target_test_accuracy: float
    leakage: dict

    @property
    def generalization_gap(self) -> float:
        return self.target_train_accuracy - self.target_test_accuracy

    def report(self, condition: str) -> EvalReport:
        for r in self.eval_reports:
            if r.defense == condition:
                return r
        raise KeyError(condition)

    def midput(self, condition: str):
        for r in self.midput_reports:
            if r.defense == condition:
                return r
        raise KeyError(condition)


def build_dataset(cfg: ExperimentConfig):
    """The blob dataset and split a run with ``cfg`` uses."""
    data = generate_blobs(cfg.num_classes, cfg.per_class, cfg.feature_dim, cfg.spread,
                          derive_seed(cfg.seed, _K_DATA))
    split = split_target_shadow(data, cfg.target_fraction, cfg.train_fraction_within_target,
                                derive_seed(cfg.seed, _K_SPLIT))
    return data, split


def prepare(cfg: ExperimentConfig) -> Prepared:
    data, split = build_dataset(cfg)
    # the three pools must never overlap
    assert not (set(split.target_train) | set(split.target_test)) & set(split.shadow_pool)
    tc = cfg.train
    target = MLPClassifier(cfg.hidden_width, tc.epochs, tc.learning_rate, tc.batch_size,
                           n_classes=cfg.num_classes, random_state=derive_seed(cfg.seed, _K_TARGET))
    target.fit(data.X[split.target_train], data.y[split.target_train])
    shadow = data.subset(split.shadow_pool)
    attack = ShadowModelAttack(cfg.hidden_width, tc.epochs, tc.learning_rate, tc.batch_size,
                               n_classes=cfg.num_classes, random_state=derive_seed(cfg.seed, _K_SHADOW))
    attack.fit(shadow.X, shadow.y)
    return Prepared(data, split, target, attack)


def _condition_probs(cond: str, cfg: ExperimentConfig, prep: Prepared, X_pool: np.ndarray) -> np.ndarray:
    if cond == "SELENA":
        key = (cfg.selena.num_submodels, cfg.selena.partitions_per_sample)
        if key not in prep.selena_probs:
            members = prep.dataset.subset(prep.split.target_train)
            model = selena_train(members, cfg.selena, derive_seed(cfg.seed, _K_SELENA), cfg.hidden_width)
            prep.selena_probs[key] = selena_inference(model, X_pool)
        return prep.selena_probs[key]
    logits = prep.target.decision_function(X_pool)
    if cond == NO_DEFENSE:
        return softmax(logits)
    master = derive_seed(cfg.seed, _K_NOISE[cond])
    if cond == "DynaNoise":
        d = cfg.dynanoise
        return DynaNoise(d.base_variance, d.lambda_scale, d.temperature, master).transform(logits)
    s = cfg.static_noise
    return StaticNoise(s.variance, s.temperature, master).transform(logits)


def _evaluate(cond, cfg, prep, pool_idx, n_members):
    X = prep.dataset.X[pool_idx]
    y = prep.dataset.y[pool_idx]
    P = _condition_probs(cond, cfg, prep, X)
    truth = np.arange(len(pool_idx)) < n_members
    suite = run_attack_suite(zip(P, y, truth), cfg.thresholds, prep.attack.params_,
                             sample_ids=[str(i) for i in pool_idx])
    report = EvalReport(cond, argmax_accuracy(P[n_members:], y[n_members:]),
                        suite.asr["confidence"], suite.asr["loss"], suite.asr["shadow"])
    return report, leakage_kl(P[:n_members], P[n_members:])


def run_pipeline(cfg: ExperimentConfig, threads: int = 1, prepared: Prepared | None = None) -> PipelineResult:
    """Run every requested defense condition and compare each against no defense.

    A failing condition is logged and listed in ``failures``; the others
    still produce reports.
    """
    prep = prepared if prepared is not None else prepare(cfg)
    split = prep.split
    pool_idx = np.concatenate([split.target_train, split.target_test])
    n_members = len(split.target_train)

    # the undefended baseline is needed for MIDPUT even when not requested
    needed = list(cfg.conditions)
    if NO_DEFENSE not in needed:
        needed.insert(0, NO_DEFENSE)

    def task(cond):
        try:
            return _evaluate(cond, cfg, prep, pool_idx, n_members)
        except MiaBenchError as exc:
            log.error("condition %s failed: %s", cond, exc)
            return exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            outcomes = list(ex.map(task, needed))
    else:
        outcomes = [task(c) for c in needed]

    results, failures = {}, {}
    for cond, out in zip(needed, outcomes):
        if isinstance(out, Exception):
            failures[cond] = f"{type(out).__name__}: {out}"
        else:
            results[cond] = out

    eval_reports = [results[c][0] for c in cfg.conditions if c in results]
    midputs = []
    if NO_DEFENSE in results:
        base = results[NO_DEFENSE][0]
        midputs = [compute_midput(base, results[c][0]) for c in cfg.conditions
                   if c != NO_DEFENSE and c in results]
    ds = prep.dataset
    return PipelineResult(
        eval_reports=eval_reports,
        midput_reports=midputs,
        failures=failures,
        target_train_accuracy=float(prep.target.score(ds.X[split.target_train], ds.y[split.target_train])),
        target_test_accuracy=float(prep.target.score(ds.X[split.target_test], ds.y[split.target_test])),
        leakage={c: results[c][1] for c in cfg.conditions if c in results},
    )


def write_run_outputs(outdir, cfg: ExperimentConfig, result: PipelineResult) -> list:
    """Write the four run artifacts; returns their paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "eval_report.csv": eval_reports_to_csv(result.eval_reports),
        "midput_report.csv": midput_reports_to_csv(result.midput_reports),
        "reports.json": reports_to_json(result.eval_reports, result.midput_reports) + "\n",
        "run_manifest.json": json.dumps({
            "artifact": "mia_bench",
            "version": __version__,
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "failures": result.failures,
            "target_train_accuracy": result.target_train_accuracy,
            "target_test_accuracy": result.target_test_accuracy,
            "leakage_kl": result.leakage,
        }, indent=2, sort_keys=True) + "\n",
    }
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths


# -- sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    base: ExperimentConfig

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMS:
            raise InvalidParameterError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.parameter!r}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise InvalidParameterError("sweep values must not be empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidParameterError("sweep values must be strictly increasing")
        object.__setattr__(self, "values", vals)


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list  # (value, PipelineResult)

    def rows(self):
        for value, res in self.points:
            for rep in res.eval_reports:
                for metric in SWEEP_METRICS:
                    yield value, rep.defense, metric, getattr(rep, metric)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["value", "condition", "metric", "measurement"])
        for value, cond, metric, m in self.rows():
            w.writerow([repr(value), cond, metric, repr(float(m))])
        return buf.getvalue()


def run_sweep(spec: SweepSpec, threads: int = 1) -> SweepResult:
    """Vary one DynaNoise knob; everything else, seeds included, stays fixed.

    Models do not depend on the swept knob, so they are trained once and
    reused for every point.
    """
    prep = prepare(spec.base)
    points = []
    for v in spec.values:
        cfg = replace(spec.base, dynanoise=replace(spec.base.dynanoise, **{spec.parameter: v}))
        points.append((v, run_pipeline(cfg, threads=threads, prepared=prep)))
    return SweepResult(spec, points)


# -- overhead ----------------------------------------------------------------

def overhead_benchmark(k_values, samples_per_k: int = 200, seed: int = 0,
                       cfg: DynaNoiseConfig | None = None) -> list:
    """Mean wall time of one ``dynanoise_transform`` call per output size ``k``.

    Returns a list of ``(k, seconds_per_sample)``.
    """
    k_values = [int(k) for k in k_values]
    if len(k_values) < 2 or any(b <= a for a, b in zip(k_values, k_values[1:])) or k_values[0] < 2:
        raise InvalidParameterError("k_values must be >= 2 entries, increasing, each >= 2")
    if samples_per_k < 1:
        raise InvalidParameterError("samples_per_k must be >= 1")
    cfg = cfg or DynaNoiseConfig()
    rows = []
    for k in k_values:
        Z = 3.0 * np.random.default_rng(derive_seed(seed, k)).standard_normal((samples_per_k, k))
        rngs = [SeededRng(seed, i) for i in range(samples_per_k)]
        for i in range(min(10, samples_per_k)):
            dynanoise_transform(Z[i], cfg, SeededRng(seed, 1 << 32 | i))
        start = time.perf_counter()
        for z, r in zip(Z, rngs):
            dynanoise_transform(z, cfg, r)
        rows.append((k, (time.perf_counter() - start) / samples_per_k))
    return rows


def overhead_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "mean_seconds_per_sample"])
    for k, t in rows:
        w.writerow([k, f"{t:.9e}"])
    return buf.getvalue()
