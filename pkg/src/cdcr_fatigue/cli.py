"""Command-line front end.

Subcommands exchange data only through files (CSV/JSON), so every step of a
test campaign can be replayed from the shell. Exit codes:

    0 ok, 2 solver failure, 3 identification failure, 4 bad input, 5 infeasible design
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from cdcr_fatigue import __version__, detection, fatigue, geometry, ident, prbm, statics, synth
from cdcr_fatigue.calibration import healthy_params
from cdcr_fatigue.config import ChainConfig, ConfigError, ParameterDomainError, load_config

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_IDENT = 3
EXIT_INPUT = 4
EXIT_DESIGN = 5

log = logging.getLogger("cdcr_fatigue")


class InputError(ValueError):
    pass


@dataclass
class RunManifest:
    subcommand: str
    inputs: dict[str, str | None] = field(default_factory=dict)  # path -> sha256
    config: str | None = None
    config_sha256: str | None = None
    seed: int | None = None
    output: str | None = None
    output_sha256: str | None = None
    tool_version: str = __version__
    argv: list[str] = field(default_factory=list)


def sha256_file(path: str | Path) -> str | None:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return None


# --- helpers ------------------------------------------------------------------------


def _load_chain(args) -> tuple[ChainConfig, Any]:
    if args.config is None:
        return ChainConfig(), healthy_params()
    try:
        cfg, params = load_config(args.config)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ConfigError, ParameterDomainError) as exc:
        raise InputError(f"config {args.config}: {exc}") from None
    return cfg, params or healthy_params()


def _read_json(path: str) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def _json_default(o: Any) -> Any:
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _pose_csv(cfg: ChainConfig, q: np.ndarray) -> str:
    n = cfg.n_modules
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["index", "kind", "module", "slot", "value"])
    for i in range(n):
        for s in range(6):
            j = prbm.theta_index(n, i, s)
            w.writerow([j, "theta_rad", i, s, repr(float(q[j]))])
    for i in range(n):
        for s in range(5):
            j = prbm.ell_index(n, i, s)
            w.writerow([j, "ell_m", i, s, repr(float(q[j]))])
    return buf.getvalue()


class Output:
    """Collects the main output and writes it to --out (plus manifest) or stdout."""

    def __init__(self, args, manifest: RunManifest):
        self.args = args
        self.manifest = manifest
        self.extra: dict[str, str] = {}

    def emit(self, text: str) -> None:
        out = self.args.out
        if out is None:
            sys.stdout.write(text)
            return
        Path(out).write_text(text)
        for suffix, body in self.extra.items():
            Path(out).with_suffix(suffix).write_text(body)
        self.manifest.output = str(out)
        self.manifest.output_sha256 = sha256_file(out)
        Path(str(out) + ".manifest.json").write_text(_dump(asdict(self.manifest)))


# --- subcommands --------------------------------------------------------------------


def cmd_simulate(args, out: Output) -> int:
    cfg, params = _load_chain(args)
    if args.tension is not None:
        u = np.array((args.tension + [0.0])[:2], dtype=float)
    elif args.torque is not None:
        u = statics.torque_to_tension(cfg, (args.torque + [0.0])[:2])
    else:
        u = np.zeros(2)
    report: dict[str, Any] = {}
    try:
        if args.end_stop:
            st = statics.limit_state(cfg, params)
            report["end_stop_torque_Nm"] = statics.end_stop_torque(cfg, params).tolist()
            report["end_stop_tension_N"] = st.tension
        res = statics.solve_equilibrium(cfg, params, u, tip_force=args.tip_force)
    except statics.SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except ValueError as exc:
        raise InputError(str(exc)) from None
    report["tension_N"] = u.tolist()
    report["equilibrium"] = res.to_dict()
    report["complementarity_residual"] = statics.complementarity_residual(cfg, res)
    pose = _pose_csv(cfg, res.q_eq.vector)
    if args.format == "csv":
        out.emit(pose)
    else:
        out.extra[".pose.csv"] = pose
        out.emit(_dump(report))
    if not res.converged:
        log.error("equilibrium did not converge: %s", res.message)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_identify(args, out: Output) -> int:
    cfg, _ = _load_chain(args)
    if args.event is not None:
        out.manifest.inputs[args.event] = sha256_file(args.event)
        doc = _read_json(args.event)
        try:
            tau = float(doc["tau_lim"])
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{args.event}: expected a limit-event JSON with 'tau_lim'") from None
        torque = [abs(tau), 0.0]
    elif args.torque is not None:
        torque = (list(args.torque) + [0.0])[:2]
    else:
        raise InputError("identify needs --torque or --event")
    if not np.all(np.isfinite(torque)):
        raise InputError("torque must be finite")
    res = ident.identify(cfg, torque, ident.IdentOptions(max_evals=args.max_evals))
    out.emit(_dump({"input_torque_Nm": torque, **res.to_dict()}))
    if not res.converged:
        log.error("identification did not converge: %s", res.message)
        return EXIT_IDENT
    return EXIT_OK


def cmd_detect(args, out: Output) -> int:
    opts = detection.DetectionOptions()
    lines: list[str] = []
    if args.stream:
        src = sys.stdin if args.input in (None, "-") else open(args.input)
        try:
            det = detection.StreamingDetector(args.sample_rate or detection.SAMPLE_RATE_HZ, opts)
            for ev in det.feed(detection.iter_jsonl_samples(src)):
                lines.append(json.dumps(ev.to_dict()))
        finally:
            if src is not sys.stdin:
                src.close()
    else:
        if args.input is None:
            raise InputError("detect needs a telemetry CSV path (or --stream)")
        out.manifest.inputs[args.input] = sha256_file(args.input)
        try:
            trace = detection.read_trace_csv(args.input, args.sample_rate)
        except OSError as exc:
            raise InputError(str(exc)) from None
        event, reason = detection.explain_limit_event(trace, opts)
        log.info("%s", reason)
        if event is not None:
            lines.append(json.dumps(event.to_dict()))
    out.emit("".join(line + "\n" for line in lines))
    return EXIT_OK


def cmd_track(args, out: Output) -> int:
    if args.history is None:
        raise InputError("track needs a cycle-history CSV")
    out.manifest.inputs[args.history] = sha256_file(args.history)
    try:
        records = fatigue.read_history_csv(args.history)
    except OSError as exc:
        raise InputError(str(exc)) from None
    if not records:
        raise InputError(f"{args.history}: no cycle records")
    fit = None
    if args.surrogate is not None:
        out.manifest.inputs[args.surrogate] = sha256_file(args.surrogate)
        try:
            fit = ident.SurrogateFit.from_dict(_read_json(args.surrogate))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{args.surrogate}: {exc}") from None
    report = fatigue.assess(records, fit, feature_spacing=args.feature_spacing or None)
    out.emit(_dump(report.to_dict()))
    return EXIT_OK


def cmd_design(args, out: Output) -> int:
    cfg, _ = _load_chain(args)
    doc: dict[str, Any] = {}
    if args.geometry is not None:
        out.manifest.inputs[args.geometry] = sha256_file(args.geometry)
        doc = _read_json(args.geometry)
    mm = 1e3
    st = cfg.stopper
    g = {
        "L_t": doc.get("L_t", st.L_t * mm),
        "L_f": doc.get("L_f", st.L_f * mm),
        "c": doc.get("c", st.c * mm),
        "d0": doc.get("d0", cfg.shaft_spacing * mm),
        "d_limit": doc.get("d_limit", cfg.limit_spacing * mm),
        "safe_bound": doc.get("safe_bound", geometry.SAFE_COMPRESSION_MM),
    }
    try:
        L_s = geometry.stopper_length(g["L_t"], g["L_f"], g["c"])
        chk = geometry.limit_compression_check(g["d0"], g["d_limit"], g["safe_bound"])
        rows = []
        for r in doc.get("ntdr", []):
            rows.append({"label": r.get("label", ""), "delta_y_mm": r["delta_y"], "L_mm": r["L"],
                         "ntdr": round(geometry.ntdr(r["delta_y"], r["L"]), 4)})
    except geometry.DesignInfeasibleError as exc:
        log.error("infeasible design: %s", exc)
        return EXIT_DESIGN
    except ValueError as exc:
        log.error("infeasible design: %s", exc)
        return EXIT_DESIGN
    except (KeyError, TypeError) as exc:
        raise InputError(f"geometry: {exc}") from None
    if rows:
        best = min(r["ntdr"] for r in rows)
        for r in rows:
            r["ratio_to_best"] = round(r["ntdr"] / best, 2) if best > 0 else None
            r["reduction_by_best_pct"] = round(geometry.drift_reduction(r["ntdr"], best), 1) + 0.0 if r["ntdr"] > 0 else None
    report = {"inputs_mm": g, "L_s_mm": L_s, "delta_mm": chk.delta, "safe": chk.safe, "ntdr_table": rows}
    if args.format == "text":
        lines = [f"stopper length L_s = {L_s:g} mm",
                 f"limit compression delta = {chk.delta:g} mm ({'safe' if chk.safe else 'UNSAFE'}, "
                 f"bound {g['safe_bound']:g} mm)"]
        for r in rows:
            lines.append(f"{r['label'] or '-':>14}  NTDR {r['ntdr']:.4f}  x{r['ratio_to_best']}  "
                         f"-{r['reduction_by_best_pct']}%")
        out.emit("\n".join(lines) + "\n")
    else:
        out.emit(_dump(report))
    return EXIT_OK


def cmd_synth(args, out: Output) -> int:
    prof: dict[str, Any] = {}
    if args.profile is not None:
        out.manifest.inputs[args.profile] = sha256_file(args.profile)
        prof = _read_json(args.profile)
        if not isinstance(prof, dict):
            raise InputError(f"{args.profile}: expected a JSON object")
    try:
        if args.kind == "trace":
            kw = {**prof, "seed": args.seed if args.seed is not None else prof.get("seed", 0)}
            trace = synth.generate_limit_trace(**kw)
            out.emit(detection.trace_to_csv_text(trace))
        else:
            n_cycles = int(prof.pop("n_cycles", args.n_cycles))
            if args.seed is not None:
                prof["seed"] = args.seed
            records = synth.generate_degradation_series(synth.DegradationProfile(**prof), n_cycles)
            buf = io.StringIO()
            fatigue.write_history_csv(records, buf)
            out.emit(buf.getvalue())
    except (TypeError, ValueError) as exc:
        raise InputError(f"profile: {exc}") from None
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, Output], int]] = {
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "detect": cmd_detect,
    "track": cmd_track,
    "design": cmd_design,
    "synth": cmd_synth,
}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommands repeat the global flags with suppressed defaults, so flags
    # given before the subcommand are not overwritten
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="chain/stiffness config JSON")
    parser.add_argument("--seed", type=int, default=d(None), help="seed for generators")
    parser.add_argument("--out", default=d(None), help="output file (a .manifest.json is written next to it)")
    parser.add_argument("--format", choices=("json", "csv", "text"), default=d("json"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    p = argparse.ArgumentParser(prog="cdcr-fatigue", description=__doc__.split("\n\n")[0])
    _global_flags(p, suppress=False)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="static equilibrium under cable load")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--tension", type=float, nargs="+", metavar="N", help="cable tensions (N), inner [outer]")
    g.add_argument("--torque", type=float, nargs="+", metavar="NM", help="motor torques (N m), inner [outer]")
    s.add_argument("--tip-force", type=float, nargs=2, metavar=("FX", "FZ"), default=None)
    s.add_argument("--end-stop", action="store_true", help="also report the end-stop torque")

    s = sub.add_parser("identify", parents=[common], help="stiffness from end-stop torque")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--torque", type=float, nargs="+", metavar="NM")
    g.add_argument("--event", help="limit-event JSON (from detect)")
    s.add_argument("--max-evals", type=int, default=400)

    s = sub.add_parser("detect", parents=[common], help="limit events in telemetry")
    s.add_argument("input", nargs="?", help="t_s,torque_Nm,displacement_mm CSV (or JSON lines with --stream)")
    s.add_argument("--stream", action="store_true", help="read JSON-lines samples (default stdin)")
    s.add_argument("--sample-rate", type=float, default=None)

    s = sub.add_parser("track", parents=[common], help="fatigue assessment of a cycle history")
    s.add_argument("history", nargs="?", help="n,tau_lim_Nm[,k_hat_N_per_m] CSV")
    s.add_argument("--surrogate", help="surrogate fit JSON")
    s.add_argument("--feature-spacing", type=int, default=500, help="cycles between feature points (0: use all)")

    s = sub.add_parser("design", parents=[common], help="stopper sizing and drift metrics")
    s.add_argument("geometry", nargs="?", help="geometry JSON (mm)")

    s = sub.add_parser("synth", parents=[common], help="synthetic telemetry or cycle history")
    s.add_argument("kind", choices=("trace", "degradation"))
    s.add_argument("--profile", help="generator parameters JSON")
    s.add_argument("--n-cycles", type=int, default=10000)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=os.environ.get("CFL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest = RunManifest(args.command, config=args.config, seed=args.seed, argv=argv)
    if args.config:
        manifest.config_sha256 = sha256_file(args.config)
    out = Output(args, manifest)
    try:
        return COMMANDS[args.command](args, out)
    except (InputError, detection.TelemetryFormatError, fatigue.HistoryFormatError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
