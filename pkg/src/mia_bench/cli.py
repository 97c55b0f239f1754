"""``mia-bench`` command line.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or config error.
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .attacks import AttackThresholds, run_attack_suite, write_decisions_csv
from .data import LogitsRecord, read_logits_file, save_dataset, save_logits_file
from .defenses import (
    DynaNoiseConfig,
    StaticNoiseConfig,
    dynanoise_transform,
    static_noise_transform,
)
from .exceptions import ConfigurationError, InvalidParameterError, MiaBenchError
from .harness import (
    CONDITIONS,
    SWEEP_PARAMS,
    ExperimentConfig,
    SweepSpec,
    build_dataset,
    load_config,
    overhead_benchmark,
    overhead_to_csv,
    prepare,
    run_pipeline,
    run_sweep,
    write_run_outputs,
)
from .metrics import NO_DEFENSE, compute_midput, midput_reports_to_csv, read_eval_reports
from .models import LogRegParams
from .numerics import SeededRng, softmax

LOGITS_SCHEMA = """\
Logits file: UTF-8 CSV with header
sample_id,membership,true_label,logit_0,...,logit_{k-1}; membership is
'member' or 'nonmember'. JSON lines with the same field names are also
accepted. Files written by 'defend' start with a '# defense: {...}' line
and hold probabilities in the logit_* columns."""


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigurationError as exc:
            key = f" [key: {exc.key}]" if exc.key else ""
            _fail(2, f"{exc}{key}")
        except InvalidParameterError as exc:
            _fail(2, str(exc))
        except (MiaBenchError, OSError) as exc:
            _fail(1, str(exc))
    return wrapper


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


threads_option = click.option(
    "--threads", type=click.IntRange(min=1), default=1, show_default=True, envvar="MIA_BENCH_THREADS",
    help="Worker threads (fallback env MIA_BENCH_THREADS). Never changes outputs.")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(package_name="mia-bench")
def main():
    """Membership-inference attacks, output-noise defenses and MIDPUT reporting."""


@main.command("gen-data")
@click.option("--classes", type=int, default=4, show_default=True, help="Number of classes k.")
@click.option("--per-class", type=int, default=200, show_default=True, help="Examples per class.")
@click.option("--dim", type=int, default=16, show_default=True, help="Feature dimension d (>= k).")
@click.option("--spread", type=float, default=1.0, show_default=True, help="Per-coordinate std.")
@click.option("--target-fraction", type=float, default=0.7, show_default=True)
@click.option("--train-fraction", type=float, default=0.5, show_default=True,
              help="Share of the target portion used for training (members).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", "out", type=click.Path(file_okay=False), required=True,
              help="Output directory.")
@handle_errors
def gen_data(classes, per_class, dim, spread, target_fraction, train_fraction, seed, out):
    """Generate Gaussian-blob data and its target/shadow split.

    The data and split are exactly those 'run' uses for the same settings.

    Writes OUT/dataset.csv ('# num_classes=k' line, then label,x_0..x_{d-1})
    and OUT/split.json (seed and the three index lists).
    """
    cfg = ExperimentConfig(num_classes=classes, per_class=per_class, feature_dim=dim, spread=spread,
                           target_fraction=target_fraction, train_fraction_within_target=train_fraction,
                           seed=seed)
    cfg.validate()
    ds, plan = build_dataset(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / "dataset.csv", ds)
    (out / "split.json").write_text(json.dumps(plan.to_dict()) + "\n", encoding="utf-8")
    click.echo(f"wrote {len(ds)} examples to {out}")


@main.command("run")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", "out", type=click.Path(file_okay=False), required=True)
@click.option("--conditions", default=None,
              help=f"Comma-separated subset of {','.join(CONDITIONS)}.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--save-models", is_flag=True,
              help="Also write target_model.json, attack_model.json and pool_logits.csv.")
@threads_option
@handle_errors
def run_cmd(config, out, conditions, seed, save_models, threads):
    """Run the seeded experiment described by a JSON CONFIG.

    \b
    Config sections (all optional, defaults = desk setup):
      data: num_classes, per_class, feature_dim, spread
      split: target_fraction, train_fraction_within_target
      model: hidden_width      train: epochs, learning_rate, batch_size
      dynanoise: base_variance, lambda_scale, temperature
      static_noise: variance, temperature
      selena: num_submodels, partitions_per_sample
      thresholds: tau, gamma    seed    conditions: [names]

    \b
    Writes eval_report.csv (defense,model,confidence,loss,shadow),
    midput_report.csv, reports.json and run_manifest.json.
    """
    cfg = load_config(config)
    if conditions:
        names = tuple(c.strip() for c in conditions.split(",") if c.strip())
        try:
            cfg = replace(cfg, conditions=names)
        except ConfigurationError as exc:
            raise click.BadParameter(str(exc), param_hint="--conditions") from None
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    prep = prepare(cfg)
    result = run_pipeline(cfg, threads=threads, prepared=prep)
    write_run_outputs(out, cfg, result)
    if save_models:
        _save_models(Path(out), prep)
    for rep in result.eval_reports:
        click.echo(f"{rep.defense:12s} acc={rep.test_accuracy:.4f} conf={rep.asr_confidence:.4f} "
                   f"loss={rep.asr_loss:.4f} shadow={rep.asr_shadow:.4f}")
    for m in result.midput_reports:
        click.echo(f"{m.defense:12s} MIDPUT={m.midput_overall:.4f}")
    if result.failures:
        for cond, msg in result.failures.items():
            click.echo(f"condition {cond} failed: {msg}", err=True)
        sys.exit(1)


def _save_models(out: Path, prep) -> None:
    out.joinpath("target_model.json").write_text(json.dumps(prep.target.params_.to_dict()) + "\n")
    out.joinpath("attack_model.json").write_text(json.dumps(prep.attack.params_.to_dict()) + "\n")
    ds, sp = prep.dataset, prep.split
    records = []
    for idx, membership in [(i, "member") for i in sp.target_train] + [(i, "nonmember") for i in sp.target_test]:
        z = prep.target.decision_function(ds.X[idx][None, :])[0]
        records.append(LogitsRecord(str(idx), membership, int(ds.y[idx]), tuple(z)))
    save_logits_file(out / "pool_logits.csv", ds.num_classes, records)


@main.command("defend", help=f"Apply a defense to every record of a logits file.\n\n{LOGITS_SCHEMA}")
@click.argument("logits_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", "out", type=click.Path(dir_okay=False), required=True)
@click.option("--defense", type=click.Choice(["dynanoise", "static"]), default="dynanoise", show_default=True)
@click.option("--base-variance", type=float, default=0.5, show_default=True, help="dynanoise base variance.")
@click.option("--lambda-scale", type=float, default=4.0, show_default=True, help="dynanoise risk scaling.")
@click.option("--variance", type=float, default=0.5, show_default=True, help="static noise variance.")
@click.option("--temperature", type=float, default=2.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Record i uses random stream (seed, i).")
@handle_errors
def defend(logits_file, out, defense, base_variance, lambda_scale, variance, temperature, seed):
    k, records, meta = read_logits_file(logits_file)
    if meta is not None:
        raise InvalidParameterError(f"{logits_file} already holds defended probabilities")
    if defense == "dynanoise":
        cfg = DynaNoiseConfig(base_variance, lambda_scale, temperature)
        fn = dynanoise_transform
        meta = {"name": "DynaNoise", "base_variance": base_variance, "lambda_scale": lambda_scale,
                "temperature": temperature, "seed": seed}
    else:
        cfg = StaticNoiseConfig(variance, temperature)
        fn = static_noise_transform
        meta = {"name": "StaticNoise", "variance": variance, "temperature": temperature, "seed": seed}
    defended = [
        LogitsRecord(r.sample_id, r.membership, r.true_label, tuple(fn(np.array(r.logits), cfg, SeededRng(seed, i))))
        for i, r in enumerate(records)
    ]
    save_logits_file(out, k, defended, metadata=meta)
    click.echo(f"defended {len(defended)} records -> {out}")


@main.command("attack", help=(
    "Run the membership attacks on a logits or defended-probabilities file.\n\n"
    f"{LOGITS_SCHEMA}\n\nWrites OUT/decisions.csv (sample_id,attack,verdict,truth) and "
    "OUT/asr.csv (attack,asr). The shadow attack runs only with --attack-model."))
@click.argument("input_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", "out", type=click.Path(file_okay=False), required=True)
@click.option("--tau", type=float, default=0.9, show_default=True, help="Confidence threshold.")
@click.option("--gamma", type=float, default=0.5, show_default=True, help="Loss threshold.")
@click.option("--attack-model", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Logistic attack JSON (as written by 'run --save-models').")
@handle_errors
def attack(input_file, out, tau, gamma, attack_model):
    k, records, meta = read_logits_file(input_file)
    values = np.array([r.logits for r in records])
    # undefended files carry raw logits
    probs = values if meta is not None else softmax(values)
    classifier = None
    if attack_model:
        try:
            classifier = LogRegParams.from_dict(json.loads(Path(attack_model).read_text(encoding="utf-8")))
        except (KeyError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"bad attack model file: {exc}", key="attack-model") from None
    res = run_attack_suite([(p, r.true_label, r.membership) for p, r in zip(probs, records)],
                           AttackThresholds(tau, gamma), classifier, sample_ids=[r.sample_id for r in records])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_decisions_csv(out / "decisions.csv", res)
    lines = ["attack,asr"] + [f"{name},{asr!r}" for name, asr in res.asr.items()]
    (out / "asr.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for name, asr in res.asr.items():
        click.echo(f"{name:10s} ASR={asr:.4f}")


@main.command("midput")
@click.option("--baseline", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Eval-report CSV holding the 'None' row.")
@click.option("--defended", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Eval-report CSV; every non-None row is scored.")
@click.option("-o", "--out", "out", type=click.Path(dir_okay=False), default=None,
              help="Optional MIDPUT CSV output path.")
@click.option("--json", "as_json", is_flag=True, help="Print JSON instead of text.")
@handle_errors
def midput(baseline, defended, out, as_json):
    """Compute MIDPUT from two eval-report CSVs (defense,model,confidence,loss,shadow)."""
    base = [r for r in read_eval_reports(baseline) if r.defense == NO_DEFENSE]
    if len(base) != 1:
        raise ConfigurationError(f"{baseline} must contain exactly one '{NO_DEFENSE}' row", key="baseline")
    reports = [compute_midput(base[0], r) for r in read_eval_reports(defended) if r.defense != NO_DEFENSE]
    if not reports:
        raise ConfigurationError(f"{defended} has no defended rows", key="defended")
    if out:
        Path(out).write_text(midput_reports_to_csv(reports), encoding="utf-8")
    if as_json:
        click.echo(json.dumps([r.to_dict() for r in reports], indent=2))
        return
    for r in reports:
        click.echo(f"{r.defense}: MIDPUT_C={r.midput_c:.4f} MIDPUT_L={r.midput_l:.4f} "
                   f"MIDPUT_S={r.midput_s:.4f} MIDPUT={r.midput_overall:.4f}")


@main.command("sweep")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--param", type=click.Choice(SWEEP_PARAMS), required=True)
@click.option("--values", required=True, help="Comma-separated, strictly increasing.")
@click.option("-o", "--out", "out", type=click.Path(file_okay=False), required=True)
@threads_option
@handle_errors
def sweep(config, param, values, out, threads):
    """Sweep one DynaNoise knob; writes OUT/sweep_<param>.csv (value,condition,metric,measurement)."""
    spec = SweepSpec(param, tuple(_float_list(values)), load_config(config))
    res = run_sweep(spec, threads=threads)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{param}.csv"
    path.write_text(res.to_csv(), encoding="utf-8")
    click.echo(f"wrote {path}")


@main.command("bench")
@click.option("--k", "k_values", default="10,100,1000", show_default=True,
              help="Comma-separated output sizes.")
@click.option("--samples", type=int, default=200, show_default=True, help="Timed calls per k.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", "out", type=click.Path(file_okay=False), required=True)
@handle_errors
def bench(k_values, samples, seed, out):
    """Time the per-sample DynaNoise transform; writes OUT/overhead.csv (k,mean_seconds_per_sample)."""
    ks = [int(v) for v in _float_list(k_values)]
    rows = overhead_benchmark(ks, samples, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "overhead.csv").write_text(overhead_to_csv(rows), encoding="utf-8")
    for k, t in rows:
        click.echo(f"k={k:6d} {t * 1e6:10.2f} us/sample")


if __name__ == "__main__":
    main()
