"""``stimclean`` command line.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure,
4 file-system errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import adbs, dsp
from .baselines import pulse_blanking, template_subtraction, transient_blanking
from .bench import BenchConfig, quick_config, run_benchmark
from .core import (NumericError, RecordingIOError, ValidationError, load_recording, save_events,
                   save_recording, write_columns)
from .library import build_library, load_library, save_library
from .preprocess import preprocess
from .smarta import SmartaParams, clean_recording, clean_recording_exact
from .suite import METRICS, SuiteConfig, generate, run_methods, run_suite, score
from .synth import ArtifactModel, gen_lfp, load_truth, save_truth

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

log = logging.getLogger("stimclean")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
CLEAN_METHODS = ("smarta+", "smarta", "ts", "pulse-blank", "transient-blank")


# ---------------------------------------------------------------------------
# profiles

def load_profile(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise RecordingIOError(f"cannot read profile {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _coerce(value):
    return tuple(_coerce(v) for v in value) if isinstance(value, list) else value


def apply_table(obj, table: dict, where: str = "profile"):
    """Copy of dataclass ``obj`` with ``table`` entries applied; nested
    dataclass fields take sub-tables."""
    if not table:
        return obj
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, value in table.items():
        if key not in known:
            raise ValidationError(f"{where}: unknown key '{key}'")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ValidationError(f"{where}: '{key}' must be a table")
            updates[key] = apply_table(current, value, f"{where}.{key}")
        else:
            updates[key] = _coerce(value)
    try:
        return replace(obj, **updates)
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def suite_config(profile: dict, args) -> SuiteConfig:
    cfg = apply_table(SuiteConfig(), profile)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        over["threads"] = args.threads
    return replace(cfg, **over) if over else cfg


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    profile = load_profile(args.profile)
    mode = profile.pop("mode", "suite")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = suite_config(profile, args)
    if mode == "lfp":
        for m in range(cfg.n_recordings):
            rec, bursts = gen_lfp(cfg.duration_s, cfg.fs, cfg.lfp, seed=cfg.seed + m,
                                  id=f"lfp{m:02d}", f_sti=cfg.f_sti)
            save_recording(rec, out / f"lfp{m:02d}.f32")
            save_events(bursts, out / f"lfp{m:02d}_bursts.csv")
        return EXIT_OK
    if mode != "suite":
        raise ValidationError(f"unknown synth mode '{mode}' (lfp or suite)")
    data = generate(cfg)
    for m, (res, semi, truth, bursts) in enumerate(
            zip(data.adbs, data.semireal, data.truths, data.base_events)):
        d = out / f"rec{m:02d}"
        d.mkdir(exist_ok=True)
        save_recording(res.recording, d / "adbs.f32")
        p = res.schedule.periods
        write_columns(d / "adbs_schedule.csv", ["start_sample", "end_sample"], [p[:, 0], p[:, 1]])
        save_truth(d / "truth", semi, truth, preprocess(semi).peaks, bursts)
    save_library(data.library, out / "library")
    return EXIT_OK


def cmd_detect(args) -> int:
    rec = load_recording(args.input)
    pre = preprocess(rec, detrend=False)
    if args.peaks_out:
        write_columns(args.peaks_out, ["peak_sample"], [pre.peaks])
    if args.periods_out:
        p = pre.periods.periods
        write_columns(args.periods_out, ["start_sample", "end_sample"], [p[:, 0], p[:, 1]])
    if not (args.peaks_out or args.periods_out):
        print(f"{pre.peaks.size} peaks in {len(pre.periods)} periods")
    return EXIT_OK


def cmd_library_build(args) -> int:
    recs = [load_recording(p) for p in args.recordings]
    lib = build_library(recs)
    if not lib.entries:
        raise ValidationError("no recording produced a library entry")
    save_library(lib, args.out)
    return EXIT_OK


def cmd_clean(args) -> int:
    rec = load_recording(args.input)
    params = SmartaParams(seed=args.seed or 0, threads=args.threads or 1)
    report = None
    if args.method == "smarta+":
        if not args.library:
            raise ValidationError("--library is required for smarta+")
        lib = load_library(args.library)
        if args.exclude_self:
            lib = lib.without(args.exclude_self)
        out, report = clean_recording(rec, lib, params)
    elif args.method == "smarta":
        out, report = clean_recording_exact(rec, params)
    else:
        pre = preprocess(rec, detrend=False)
        if args.method == "ts":
            out = template_subtraction(rec, pre.peaks)[0]
        elif args.method == "pulse-blank":
            out = pulse_blanking(rec, pre.peaks)
        else:
            out, mask = transient_blanking(rec, pre.periods)
            if args.mask_out:
                idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(np.int8), [0]])))
                write_columns(args.mask_out, ["start_sample", "end_sample"],
                              [idx[0::2], idx[1::2]])
    save_recording(out, args.out)
    if args.report:
        body = report.to_dict() if report is not None else {
            "method": args.method, "recording_id": rec.id, "segments": []}
        _write_json(args.report, body)
    return EXIT_OK


def cmd_eval(args) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    est = load_recording(args.estimate)
    semi, truth, peaks = load_truth(args.truth_dir)
    if len(est) != len(truth.base_lfp):
        raise ValidationError("estimate and truth differ in length")
    if peaks is None:
        peaks = preprocess(semi, detrend=False).peaks
    mask = None
    if args.mask:
        iv = np.loadtxt(args.mask, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        mask = np.zeros(len(est), dtype=bool)
        for a, b in iv:
            mask[a:b] = True
    cfg = suite_config(load_profile(args.profile), args)
    rows = score({args.method: (est.samples, None, mask)}, truth.base_lfp, truth.schedule,
                 peaks, est.fs, semi.pre_samples, semi.post_samples, cfg.beta, metrics)
    _write_json(args.out, {"estimate": str(args.estimate), "metrics": list(metrics),
                           "rows": rows})
    return EXIT_OK


def cmd_beta_events(args) -> int:
    cfg = apply_table(adbs.BetaConfig(), load_profile(args.profile).get("beta", {}))
    rec = load_recording(args.input)
    ref = load_recording(args.threshold_from) if args.threshold_from else rec
    ref_amp, peak_hz = adbs.beta_amplitude(ref.samples, ref.fs, cfg)
    thr = adbs.calibrate_threshold(ref_amp, cfg, n_baseline=ref_amp.size)
    amp, _ = adbs.beta_amplitude(rec.samples, rec.fs, cfg, peak_hz=peak_hz)
    events = adbs.detect_beta_events(amp, thr, rec.fs, cfg.min_on_ms)
    save_events(events, args.out)
    if args.amplitude_out:
        step = max(1, int(round(rec.fs / 1000.0)))
        t = np.arange(0, amp.size, step) / rec.fs
        write_columns(args.amplitude_out, ["time_s", "amplitude"], [t, amp[::step]])
    return EXIT_OK


def cmd_adbs_sim(args) -> int:
    profile = load_profile(args.artifact_profile)
    model = apply_table(ArtifactModel(), profile.get("artifact", {}), "artifact")
    cfg = apply_table(adbs.BetaConfig(), profile.get("beta", {}), "beta")
    lfp = load_recording(args.lfp)
    res = adbs.simulate_adbs(lfp, model, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_recording(res.recording, out / "adbs.f32")
    for name, sched in (("schedule", res.schedule), ("clean_schedule", res.clean_schedule)):
        p = sched.periods
        write_columns(out / f"{name}.csv", ["start_sample", "end_sample"], [p[:, 0], p[:, 1]])
    _write_json(out / "summary.json", {
        "threshold": res.threshold, "peak_hz": res.peak_hz,
        "on_fraction": res.on_fraction(), "clean_on_fraction": res.clean_on_fraction(),
        "n_periods": len(res.schedule), "n_clean_periods": len(res.clean_schedule)})
    return EXIT_OK


def cmd_bench(args) -> int:
    profile = load_profile(args.profile).get("bench", {})
    cfg = quick_config() if args.quick else BenchConfig()
    cfg = apply_table(cfg, profile, "bench")
    over = {k: v for k, v in (("seed", args.seed), ("threads", args.threads)) if v is not None}
    report = run_benchmark(replace(cfg, **over) if over else cfg)
    _write_json(args.out, report)
    return EXIT_OK


def cmd_suite(args) -> int:
    cfg = suite_config(load_profile(args.profile), args)
    data = generate(cfg)
    report = run_suite(cfg, data)
    _write_json(args.out, report)
    if args.csv_dir:
        export_csv(Path(args.csv_dir), report, data, cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# CSV exports for external plotting

def export_csv(out: Path, report: dict, data, cfg: SuiteConfig) -> None:
    """Summary table, and per-method PSD and beta-amplitude traces of the
    first recording."""
    out.mkdir(parents=True, exist_ok=True)
    summary = report["summary"]
    methods = list(summary)
    keys = list(summary[methods[0]])
    header = ["method"] + [f"{k}_{s}" for k in keys for s in ("mean", "std")]
    cols = [methods] + [[summary[m][k][s] for m in methods] for k in keys for s in ("mean", "std")]
    write_columns(out / "summary.csv", header, cols)

    semi, truth, res = data.semireal[0], data.truths[0], data.adbs[0]
    outputs, _ = run_methods(semi, data.library, cfg, res.recording.id)
    traces = {"truth": truth.base_lfp, **{m: v[0] for m, v in outputs.items()}}
    psd_cols, amp_cols = [], []
    freqs = None
    step = max(1, int(round(semi.fs / 1000.0)))
    _, peak_hz = adbs.beta_amplitude(truth.base_lfp, semi.fs, cfg.beta)
    for name, y in traces.items():
        f, P = dsp.welch_psd(y, semi.fs)
        freqs = f
        psd_cols.append(P)
        amp_cols.append(adbs.beta_amplitude(y, semi.fs, cfg.beta, peak_hz=peak_hz)[0][::step])
    names = list(traces)
    keep = freqs <= 3000.0
    write_columns(out / "psd.csv", ["freq_hz"] + names, [freqs[keep]] + [p[keep] for p in psd_cols])
    t = np.arange(0, len(semi), step) / semi.fs
    write_columns(out / "beta_amplitude.csv", ["time_s"] + names, [t] + amp_cols)


def _write_json(path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n",
                              encoding="utf-8")
    except OSError as exc:
        raise RecordingIOError(f"cannot write {path}: {exc}") from exc


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (np.floating, float)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="stimclean", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate aDBS and semi-real data")
    p.add_argument("--profile", help="TOML profile")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", parents=[common], help="artifact peaks and stimulation periods")
    p.add_argument("input")
    p.add_argument("--peaks-out")
    p.add_argument("--periods-out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("library", help="artifact library operations")
    lsub = p.add_subparsers(dest="library_command", required=True)
    pb = lsub.add_parser("build", parents=[common], help="build a library from recordings")
    pb.add_argument("recordings", nargs="+")
    pb.add_argument("--out", required=True)
    pb.set_defaults(func=cmd_library_build)

    p = sub.add_parser("clean", parents=[common], help="remove artifacts from a recording")
    p.add_argument("input")
    p.add_argument("--method", choices=CLEAN_METHODS, default="smarta+")
    p.add_argument("--library")
    p.add_argument("--exclude-self", metavar="ID",
                   help="drop this entry id from the library before cleaning")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--mask-out", help="CSV of blanked intervals (transient-blank)")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("eval", parents=[common], help="score an estimate against ground truth")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--method", default="estimate", help="row label in the report")
    p.add_argument("--mask", help="CSV of intervals excluded from event detection")
    p.add_argument("--profile", help="TOML profile ([beta] table)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("beta-events", parents=[common], help="offline beta events")
    p.add_argument("input")
    p.add_argument("--threshold-from", help="recording that calibrates threshold and peak")
    p.add_argument("--profile", help="TOML profile ([beta] table)")
    p.add_argument("--amplitude-out", help="CSV trace of the beta amplitude")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_beta_events)

    p = sub.add_parser("adbs-sim", parents=[common], help="closed-loop stimulation simulation")
    p.add_argument("--lfp", required=True)
    p.add_argument("--artifact-profile", help="TOML with [artifact] and [beta] tables")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adbs_sim)

    p = sub.add_parser("bench", parents=[common], help="per-segment timing benchmark")
    p.add_argument("--profile", help="TOML profile ([bench] table)")
    p.add_argument("--quick", action="store_true", help="small pool smoke run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("suite", parents=[common], help="full synthetic evaluation suite")
    p.add_argument("--profile", help="TOML profile (SuiteConfig keys)")
    p.add_argument("--out", required=True)
    p.add_argument("--csv-dir", help="also export CSV tables and traces")
    p.set_defaults(func=cmd_suite)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return args.func(args)
    except RecordingIOError as exc:
        print(f"stimclean: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"stimclean: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"stimclean: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"stimclean: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
