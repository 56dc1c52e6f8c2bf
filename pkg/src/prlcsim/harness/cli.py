"""Command-line front end (``prlcsim``)."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..simulator import ConfigError, DivergenceError, ExperimentConfig, run
from .. import theory
from .io import RunManifest, export_series, now_iso
from .presets import PRESETS, run_preset
from .sweep import SweepSpec, run_sweep

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DIVERGENCE = 4
EXIT_IO = 5
EXIT_THEORY = 6

EPILOG = """exit codes:
  0  success
  2  usage error (unknown subcommand or flag, bad flag value, unknown preset)
  3  config error (config not found, invalid JSON, unknown or invalid keys)
  4  divergence (non-finite model during a run)
  5  I/O error while writing outputs
  6  theory domain or step-size precondition violated

environment:
  PRLC_OUT_DIR  default output root when --out is not given (else ./prlc_out)
"""


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _out_root(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get("PRLC_OUT_DIR") or "prlc_out")


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _cmd_run(args) -> int:
    given = [x for x in (args.config, args.preset, args.manifest) if x]
    if len(given) != 1:
        raise _UsageError("run: give exactly one of --config, --preset or --manifest")
    out = _out_root(args.out)
    if args.preset:
        seeds = [args.seed] if args.seed is not None else None
        summary = run_preset(args.preset, out_dir=out, fmt=args.format, seeds=seeds)
        print(json.dumps(summary, indent=1, default=str))
        return EXIT_OK
    if args.manifest:
        if not Path(args.manifest).is_file():
            raise ConfigError(f"config not found: {args.manifest}")
        d = RunManifest.load(args.manifest).config
    else:
        d = _load_json(args.config)
    if args.seed is not None:
        d = dict(d, seed=args.seed)
    cfg = ExperimentConfig.from_dict(d)
    started = now_iso()
    series = run(cfg)
    name = f"run_{cfg.digest()[:12]}.{args.format}"
    path, mpath = export_series(series, out / name, cfg.to_dict(), args.format, started)
    print(f"wrote {path}")
    print(f"wrote {mpath}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    d = _load_json(args.config)
    try:
        spec = SweepSpec.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_root(args.out)
    summary = run_sweep(spec, out, parallel=args.parallel, fmt=args.format)
    print(f"wrote {len(summary['cells'])} runs and {out / 'summary.json'}")
    return EXIT_OK


def _cmd_presets(args) -> int:
    for name in sorted(PRESETS):
        print(f"{name:22s} {PRESETS[name].description}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    d = _load_json(args.config)
    if "parameter" in d:
        SweepSpec.from_dict(d)
        print("valid sweep spec")
    else:
        cfg = ExperimentConfig.from_dict(d)
        print(f"valid config, digest {cfg.digest()}")
    return EXIT_OK


def _fmt(v) -> str:
    return format(v, ".6g") if isinstance(v, float) else str(v)


def _theory_result(args) -> dict:
    what = args.what
    if what == "eta-max":
        if args.alg == "prlc":
            return {"eta_max": theory.eta_max_prlc(args.L, args.r)}
        if args.alg == "pr":
            return {"eta_max": theory.eta_max_pr(args.L, args.r)}
        return {"eta_max": theory.eta_max_strong(args.L, args.r, args.P)}
    inp = theory.TheoryInputs(eta=args.eta, L=args.L, r=args.r, P=args.P, T=args.T, c=args.c,
                              G=args.G, sigma2=args.sigma2, f_gap=args.f_gap)
    if what == "bound":
        enforce = not args.no_enforce
        if args.alg == "prlc":
            return {"bound": theory.bound_prlc_nonconvex(inp, enforce)}
        if args.alg == "pr":
            return {"bound": theory.bound_pr(inp, enforce)}
        bound, plateau = theory.bound_strong(inp, args.t, enforce)
        return {"bound": bound, "plateau": plateau}
    if what == "min-T":
        t_min, eta = theory.min_T_prlc(inp)
        return {"T_min": t_min, "eta": eta}
    if what == "constants":
        return theory.theory_constants(inp, args.C0, args.C1).to_dict()
    if args.C0 is None or args.C1 is None:
        raise _UsageError("theory scalability: --C0 and --C1 are required (no defaults exist)")
    grid = [int(p) for p in args.P_grid.split(",")]
    rows = theory.scalability_compare(inp, args.C0, args.C1, grid)
    return {"rows": [vars(r) for r in rows]}


def _cmd_theory(args) -> int:
    result = _theory_result(args)
    if args.json:
        print(json.dumps(result, indent=1))
    elif "rows" in result:
        for row in result["rows"]:
            print(" ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    else:
        for k, v in result.items():
            print(f"{k}={_fmt(v)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prlcsim", description="Parameter-server SGD simulator with intermittent pulls.",
                epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    r = sub.add_parser("run", help="run one config, manifest or preset", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("--config", help="experiment config JSON")
    r.add_argument("--preset", choices=sorted(PRESETS), metavar="NAME",
                   help="named preset: " + ", ".join(sorted(PRESETS)))
    r.add_argument("--manifest", help="re-run the config stored in a run manifest")
    r.add_argument("--out", help="output directory (default $PRLC_OUT_DIR)")
    r.add_argument("--seed", type=int, help="override the seed (U64)")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.set_defaults(fn=_cmd_run)

    s = sub.add_parser("sweep", help="run a sweep spec", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--config", required=True, help="sweep spec JSON")
    s.add_argument("--out")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(fn=_cmd_sweep)

    t = sub.add_parser("theory", help="evaluate closed-form step sizes, constants and bounds",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("what", choices=("eta-max", "bound", "min-T", "constants", "scalability"))
    t.add_argument("--alg", choices=("prlc", "pr", "strong"), default="prlc")
    t.add_argument("--L", type=float, default=1.0)
    t.add_argument("--r", type=float, default=1.0)
    t.add_argument("--P", type=int, default=1)
    t.add_argument("--T", type=int, default=1)
    t.add_argument("--t", type=int, default=0, help="iteration for the strongly convex bound")
    t.add_argument("--eta", type=float, default=0.01)
    t.add_argument("--c", type=float, default=0.0)
    t.add_argument("--G", type=float, default=0.0)
    t.add_argument("--sigma2", type=float, default=0.0)
    t.add_argument("--f-gap", dest="f_gap", type=float, default=0.0)
    t.add_argument("--C0", type=float)
    t.add_argument("--C1", type=float)
    t.add_argument("--P-grid", dest="P_grid", default="2,4,8,16,32,64,128")
    t.add_argument("--no-enforce", action="store_true", help="skip the step-size precondition")
    t.add_argument("--json", action="store_true")
    t.set_defaults(fn=_cmd_theory)

    pr = sub.add_parser("presets", help="list presets")
    pr.set_defaults(fn=_cmd_presets)

    v = sub.add_parser("validate", help="check a config or sweep spec without running it")
    v.add_argument("--config", required=True)
    v.set_defaults(fn=_cmd_validate)
    return p


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:  # unknown preset
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (theory.DomainError, theory.PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_THEORY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_THEORY if args.command == "theory" else EXIT_CONFIG


def main() -> None:
    sys.exit(run_cli())
