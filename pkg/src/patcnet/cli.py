"""Command-line interface.

Subcommands: ``synth`` (write a synthetic trial bundle), ``preprocess``
(band-pass / resample / CAR+baseline a bundle), ``train-loso`` (full
leave-one-subject-out run), ``ablate`` (variant table), ``noise-test``
(checkpoint robustness sweep), ``report`` (aggregate + render figures),
``selftest`` (oracle suite).  Exit codes: 0 success, 1 validation error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

from . import reporting
from .bundles import load_trial_bundle, save_trial_bundle
from .errors import PatcnetError
from .evaluation import (
    NoiseSpec,
    compute_metrics,
    inject_noise,
    predict_labels,
    run_ablation,
    run_loso,
)
from .profiles import configs_from_resolved, resolve_config
from .selftest import run_selftest
from .signals import Domain, TrialSet, epoch, preprocess_trials
from .synthgen import CohortSpec, generate_cohort
from .trainer import VARIANTS, load_checkpoint, model_from_checkpoint, save_checkpoint


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on usage errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("PATCNET_OUT")
    if not out:
        raise PatcnetError("no output directory: pass --out or set PATCNET_OUT")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_overrides(args) -> dict:
    overrides: dict = {}
    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise PatcnetError(f"config file not found: {cfg_path}")
        try:
            overrides = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise PatcnetError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(overrides, dict):
            raise PatcnetError("config file must hold a JSON object with config sections")
    train_keys = (
        "alpha", "tau_p", "delta_min", "warmup_epochs", "max_epochs",
        "learning_rate", "weight_decay", "batch_size", "seed", "variant",
    )
    for key in train_keys:
        value = getattr(args, key, None)
        if value is not None:
            overrides.setdefault("train", {})[key] = value
    return overrides


def _resolved(args) -> dict:
    return resolve_config(getattr(args, "profile", "custom"), _load_overrides(args))


def _echo_config(resolved: dict, out: Path) -> None:
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2))
    print(f"resolved config -> {out / 'resolved_config.json'}")


def cohort_from_bundle(ts: TrialSet) -> list[TrialSet]:
    """Group a bundle's trials into one TrialSet per subject."""
    cohort = []
    for sid in ts.subject_ids():
        trials = [t for t in ts.trials if t.subject_id == sid]
        cohort.append(TrialSet(trials, ts.class_count, list(ts.montage), ts.sampling_rate_hz))
    return cohort


def cmd_synth(args) -> int:
    out = _out_dir(args)
    overrides = _load_overrides(args).get("cohort", {})
    for key in ("subject_count", "trials_per_subject", "samples", "erd_depth",
                "slow_wave_gain", "subject_jitter", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    spec = CohortSpec(**overrides)
    recordings = generate_cohort(spec)
    trials = []
    for rec in recordings:
        trials.extend(epoch(rec, spec.samples, Domain.SOURCE).trials)
    ts = TrialSet(trials, 2, list(spec.channel_labels), spec.sampling_rate_hz)
    save_trial_bundle(ts, out)
    print(f"wrote {len(ts)} trials / {spec.subject_count} subjects -> {out}")
    return 0


def cmd_preprocess(args) -> int:
    out = _out_dir(args)
    ts = load_trial_bundle(args.data)
    processed = preprocess_trials(
        ts,
        low_hz=args.low,
        high_hz=args.high,
        target_hz=args.rate,
        baseline_fraction=args.baseline_frac,
    )
    save_trial_bundle(processed, out)
    print(
        f"preprocessed {len(processed)} trials "
        f"({ts.sampling_rate_hz:g} Hz -> {processed.sampling_rate_hz:g} Hz, "
        f"band {args.low:g}-{args.high:g} Hz) -> {out}"
    )
    return 0


def cmd_train_loso(args) -> int:
    out = _out_dir(args)
    resolved = _resolved(args)
    _echo_config(resolved, out)
    train_cfg, encoder_cfg, prsm_cfg = configs_from_resolved(resolved)
    ts = load_trial_bundle(args.data)
    cohort = cohort_from_bundle(ts)

    run = run_loso(cohort, train_cfg, encoder_cfg, prsm_cfg, jobs=args.jobs)
    for sid, ckpt in run.checkpoints.items():
        save_checkpoint(ckpt, out / f"checkpoint_{sid}.ckpt")

    reporting.write_fold_csv(run.fold_results, out / "fold_metrics.csv")
    reporting.write_summary_json(
        reporting.summarize_folds(run.fold_results), out / "summary.json"
    )
    for sid, log in run.epoch_logs.items():
        reporting.write_epoch_log_csv(log, out / f"epoch_log_{sid}.csv")
    print(f"mean LOSO accuracy: {run.mean_accuracy():.4f} over {len(run.fold_results)} folds")
    print(f"artifacts -> {out}")
    return 0


def cmd_ablate(args) -> int:
    out = _out_dir(args)
    resolved = _resolved(args)
    _echo_config(resolved, out)
    train_cfg, encoder_cfg, prsm_cfg = configs_from_resolved(resolved)
    ts = load_trial_bundle(args.data)
    cohort = cohort_from_bundle(ts)
    variants = args.variant or list(VARIANTS)
    rows = run_ablation(cohort, variants, train_cfg, encoder_cfg, prsm_cfg, jobs=args.jobs)
    reporting.write_ablation_csv(rows, out / "ablation.csv")
    reporting.write_summary_json(reporting.ablation_summary(rows), out / "ablation_summary.json")
    for row in rows:
        print(f"{row['variant']:>12}: {row['mean_accuracy']:.4f} +/- {row['std_accuracy']:.4f}")
    print(f"artifacts -> {out}")
    return 0


def cmd_noise_test(args) -> int:
    out = _out_dir(args)
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    ts = load_trial_bundle(args.data)
    labels = ts.labels()
    kinds = ["drift", "spike"] if args.noise_kind == "both" else [args.noise_kind]
    amplitudes = args.noise_amp or [0.0, 0.5, 1.0, 2.0]
    rows = []
    for kind in kinds:
        for amp in amplitudes:
            spec = NoiseSpec(kind=kind, amplitude=amp, seed=args.seed or 0)
            noisy = inject_noise(ts, spec)
            preds = predict_labels(model, noisy)
            metrics = compute_metrics(preds, labels, ts.class_count)
            rows.append(
                {
                    "kind": kind,
                    "amplitude": amp,
                    "accuracy": metrics.accuracy,
                    "kappa": metrics.kappa,
                }
            )
            print(f"{kind} amp={amp:g}: accuracy {metrics.accuracy:.4f}")
    reporting.write_noise_sweep_csv(rows, out / "noise_sweep.csv")
    print(f"artifacts -> {out}")
    return 0


def cmd_report(args) -> int:
    out = args.out or args.data
    written = reporting.render_report(args.data, out)
    if not written:
        raise PatcnetError(f"no report inputs found under {args.data}")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_selftest(args) -> int:
    return 0 if run_selftest() else 2


def build_parser() -> _Parser:
    parser = _Parser(prog="patcnet", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def add_common(p, data=True):
        if data:
            p.add_argument("--data", required=True, help="input trial bundle directory")
        p.add_argument("--out", help="output directory (or $PATCNET_OUT)")
        p.add_argument("--seed", type=int, default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic cohort bundle")
    add_common(p_synth, data=False)
    p_synth.add_argument("--config", help="JSON config with a 'cohort' section")
    p_synth.add_argument("--subjects", dest="subject_count", type=int, default=None)
    p_synth.add_argument("--trials", dest="trials_per_subject", type=int, default=None)
    p_synth.add_argument("--samples", type=int, default=None)
    p_synth.add_argument("--erd-depth", dest="erd_depth", type=float, default=None)
    p_synth.add_argument("--slow-wave-gain", dest="slow_wave_gain", type=float, default=None)
    p_synth.add_argument("--jitter", dest="subject_jitter", type=float, default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_prep = sub.add_parser("preprocess", help="band-pass, resample, CAR+baseline a bundle")
    add_common(p_prep)
    p_prep.add_argument("--low", type=float, default=8.0)
    p_prep.add_argument("--high", type=float, default=30.0)
    p_prep.add_argument("--rate", type=float, default=250.0)
    p_prep.add_argument("--baseline-frac", type=float, default=0.1)
    p_prep.set_defaults(func=cmd_preprocess)

    def add_train_flags(p):
        p.add_argument("--profile", choices=("xw", "s2019", "custom"), default="custom")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--jobs", type=int, default=1, help="concurrent folds")
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--tau-p", dest="tau_p", type=float, default=None)
        p.add_argument("--delta-min", dest="delta_min", type=float, default=None)
        p.add_argument("--warmup", dest="warmup_epochs", type=int, default=None)
        p.add_argument("--epochs", dest="max_epochs", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
        p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)

    p_train = sub.add_parser("train-loso", help="leave-one-subject-out training + evaluation")
    add_common(p_train)
    add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train_loso)

    p_abl = sub.add_parser("ablate", help="run ablation variants")
    add_common(p_abl)
    add_train_flags(p_abl)
    p_abl.add_argument(
        "--variant", action="append", choices=VARIANTS, help="repeatable; default all"
    )
    p_abl.set_defaults(func=cmd_ablate)

    p_noise = sub.add_parser("noise-test", help="evaluate a checkpoint under injected noise")
    add_common(p_noise)
    p_noise.add_argument("--checkpoint", required=True)
    p_noise.add_argument("--noise-kind", choices=("drift", "spike", "both"), default="both")
    p_noise.add_argument("--noise-amp", action="append", type=float, help="repeatable sweep value")
    p_noise.set_defaults(func=cmd_noise_test)

    p_rep = sub.add_parser("report", help="aggregate artifacts and render figures")
    p_rep.add_argument("--data", required=True, help="run directory with CSV artifacts")
    p_rep.add_argument("--out", help="directory for rendered outputs (default: --data)")
    p_rep.set_defaults(func=cmd_report)

    p_self = sub.add_parser("selftest", help="run the oracle/invariant suite")
    p_self.set_defaults(func=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except PatcnetError as exc:
        print(f"patcnet: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except Exception as exc:  # anything unexpected is a runtime failure
        traceback.print_exc()
        print(f"patcnet: runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
