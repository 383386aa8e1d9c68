"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 a ``--check`` gate failed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import io, pipeline
from ..watermark import Payload, WatermarkKey
from .config import ConfigError, ExperimentConfig, from_mapping, load_config
from .experiment import build_assets, run_experiment, trial_setup
from .report import ExperimentReport, save_report, write_rows_csv, write_series_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GATE = 3

_AXIS_MODES = {
    "cs_ratio": "ablate_cs",
    "proj_ratio": "ablate_proj",
    "T": "ablate_steps",
    "observation_mode": "ablate_observation",
    "distortion_sigma": "distortion_sweep",
}


def _parse_sets(pairs: list[str]) -> dict:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError({item: "overrides must look like key=value"})
        out[key.strip()] = value.strip()
    return out


def _config(args, **forced) -> ExperimentConfig:
    overrides = _parse_sets(args.set)
    overrides.update({k: v for k, v in forced.items() if v is not None})
    if args.config:
        return load_config(args.config, overrides)
    return from_mapping(overrides)


def _emit(report: ExperimentReport, args) -> None:
    if args.out:
        save_report(args.out, report)
    if args.csv:
        if report.axis:
            write_series_csv(args.csv, [report])
        else:
            write_rows_csv(args.csv, report)
    summary = {"aggregate": report.aggregate}
    if report.timing:
        summary["time_ratio"] = report.timing["time_ratio"]
    print(json.dumps(summary, indent=1, default=str))


def _gate_failures(report: ExperimentReport, cfg: ExperimentConfig) -> list[str]:
    bad = []
    groups = report.aggregate
    if cfg.mode == "fpr_calibration":
        for g in groups:
            if g["kind"] == "null" and g["detection_rate"] > 1.5 * g["point"]:
                bad.append(f"null rate {g['detection_rate']} exceeds 1.5 x fpr {g['point']}")
        return bad
    for g in groups:
        if g["kind"] == "benign" and cfg.mode in ("benign", "ablate_observation") and g["point"] in (None, "trajectory_intrinsic"):
            if g["detection_rate"] < 1.0:
                bad.append(f"benign TPR {g['detection_rate']} < 1.0 at {g['point']}")
        if g["kind"] in ("forge", "informed") and cfg.mode in ("forge", "informed_forge"):
            if cfg.scheme == "plain" and g["detection_rate"] < 0.9:
                bad.append(f"baseline ASR {g['detection_rate']} < 0.9")
            if cfg.scheme == "csguard" and g["detection_rate"] > 0.5 and cfg.matrix_similarity < 1.0:
                bad.append(f"ASR {g['detection_rate']} > 0.5")
    if cfg.mode in ("ablate_cs", "ablate_proj"):
        forged = [g for g in groups if g["kind"] == "forge"]
        for prev, cur in zip(forged, forged[1:]):
            if cur["ci_low"] > prev["ci_high"]:
                bad.append(f"ASR rises from {prev['point']} to {cur['point']} beyond the CI")
    return bad


def _finish(report, cfg, args) -> int:
    _emit(report, args)
    if args.check:
        failures = _gate_failures(report, cfg)
        for f in failures:
            print(f"GATE FAILED: {f}", file=sys.stderr)
        if failures:
            return EXIT_GATE
    return EXIT_OK


def _identity(args, s, meta=None):
    """Key and payload: command-line flags, then file metadata, then the trial's own."""
    meta = meta or {}
    key = args.key if args.key is not None else meta.get("key")
    payload = args.payload or meta.get("payload_hex")
    try:
        return (
            WatermarkKey(int(key)) if key is not None else s.key,
            Payload.from_hex(payload) if payload else s.payload,
        )
    except ValueError as exc:
        raise ConfigError({"payload" if payload else "key": str(exc)}) from exc


def cmd_generate(args) -> int:
    cfg = _config(args, mode="benign", allow_few_trials="true")
    assets = build_assets(cfg)
    s = trial_setup(cfg, args.trial)
    key, payload = _identity(args, s)
    if cfg.n % len(payload):
        raise ConfigError({"payload": f"{len(payload)} bits do not divide n={cfg.n}"})
    s = type(s)(s.seed, key, payload, s.prompt, s.adversarial_prompt)
    if cfg.scheme == "plain":
        record = pipeline.generate_plain(s.key, s.payload, s.prompt, assets.params, assets.prior, assets.sched, s.seed)
    else:
        record = pipeline.generate_watermarked(
            s.key, s.payload, s.prompt, assets.matrix, assets.params, assets.prior, assets.sched, s.seed
        )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "trial": args.trial,
        "seed": s.seed,
        "prompt_class": s.prompt.class_id,
        "key": s.key.key,
        "payload_hex": s.payload.to_hex() if len(s.payload) % 4 == 0 else None,
        "source_step": record.y.source_step,
        "trajectory_deviation": record.trajectory_deviation,
        "scheme": cfg.scheme,
        "config": cfg.to_dict(),
    }
    io.save_latent(out / "z0.csgl", record.z0, meta)
    io.save_latent(out / "zT.csgl", record.z_T_initial, {"trial": args.trial, "seed": s.seed})
    io.save_matrix(out / "matrix.csga", assets.matrix)
    io.save_prior(out / "prior.csgp", assets.prior)
    print(json.dumps({k: meta[k] for k in ("trial", "seed", "prompt_class", "trajectory_deviation")}))
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.latent is None:
        cfg = _config(args, mode=args.mode or "benign")
        if cfg.mode not in ("benign", "distortion_sweep", "ablate_observation"):
            raise ConfigError({"mode": "verify runs benign, distortion_sweep or ablate_observation"})
        return _finish(run_experiment(cfg, args.workers), cfg, args)
    z0, meta = io.load_latent(args.latent)
    data = dict(meta.get("config", {}))
    data.update(_parse_sets(args.set))
    data.update(mode="benign", allow_few_trials="true")
    cfg = from_mapping(data)
    trial = args.trial if args.trial is not None else int(meta.get("trial", 0))
    assets = build_assets(cfg)
    matrix = io.load_matrix(args.matrix) if args.matrix else assets.matrix
    s = trial_setup(cfg, trial)
    key, payload = _identity(args, s, meta if args.trial is None else None)
    s = type(s)(s.seed, key, payload, s.prompt, s.adversarial_prompt)
    if cfg.scheme == "plain":
        rep, _ = pipeline.invert_plain(z0, s.key, s.payload, assets.params, assets.prior, assets.sched)
    else:
        rep, _ = pipeline.invert_and_verify(z0, matrix, s.key, s.payload, assets.params, assets.prior, assets.sched)
    print(json.dumps(rep.to_dict()))
    return EXIT_GATE if args.check and not rep.detected else EXIT_OK


def cmd_attack(args) -> int:
    cfg = _config(args, mode=args.mode or "forge")
    if cfg.mode not in ("forge", "informed_forge"):
        raise ConfigError({"mode": "attack runs forge or informed_forge"})
    return _finish(run_experiment(cfg, args.workers), cfg, args)


def cmd_ablate(args) -> int:
    forced = {"mode": _AXIS_MODES.get(args.axis) if args.axis else None, "grid": args.grid}
    if args.axis and args.axis not in _AXIS_MODES:
        raise ConfigError({"axis": f"unknown axis {args.axis!r}; expected one of {sorted(_AXIS_MODES)}"})
    cfg = _config(args, **forced)
    if cfg.mode not in _AXIS_MODES.values():
        raise ConfigError({"mode": "ablate needs --axis or an ablate_* / distortion_sweep mode"})
    return _finish(run_experiment(cfg, args.workers), cfg, args)


def cmd_calibrate(args) -> int:
    cfg = _config(args, mode="fpr_calibration", grid=args.fpr_grid)
    return _finish(run_experiment(cfg, args.workers), cfg, args)


def cmd_bench(args) -> int:
    cfg = _config(args, mode="timing")
    return _finish(run_experiment(cfg, args.workers), cfg, args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csguard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, report=True):
        p.add_argument("--config", help="TOML or JSON experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
        p.add_argument("--check", action="store_true", help="exit 3 when an acceptance gate fails")
        if report:
            p.add_argument("--out", help="write the JSON report here")
            p.add_argument("--csv", help="write rows (or the sweep series) as CSV")
            p.add_argument("--workers", type=int, default=None, help="parallel trial workers")

    p = sub.add_parser("generate", help="generate one watermarked latent and write its artifacts")
    common(p, report=False)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--key", type=int, help="watermark key (decimal)")
    p.add_argument("--payload", help="payload bits as hex")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("verify", help="verify a latent file, or run the benign suite")
    common(p)
    p.add_argument("--latent")
    p.add_argument("--matrix")
    p.add_argument("--trial", type=int)
    p.add_argument("--key", type=int, help="watermark key (decimal)")
    p.add_argument("--payload", help="payload bits as hex")
    p.add_argument("--mode")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attack", help="run the forgery suite")
    common(p)
    p.add_argument("--mode", choices=("forge", "informed_forge"))
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("ablate", help="sweep one parameter")
    common(p)
    p.add_argument("--axis")
    p.add_argument("--grid", help="comma separated values")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("calibrate", help="empirical false-positive rate per threshold")
    common(p)
    p.add_argument("--fpr-grid", help="comma separated fpr values")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bench", help="generation time with vs without projection")
    common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for field_name, problem in exc.problems.items():
            print(f"config error: {field_name}: {problem}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
