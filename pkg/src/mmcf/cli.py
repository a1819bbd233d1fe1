"""Command line front end: ``mmcf flow | cmc | verify | sweep``.

Exit codes: 0 success (flow converged, all hard checks passed), 2 flow timed
out, 1 any error or failed hard check.

Configuration files are INI text (``configparser``) with the sections

    [flow]     sigma, eps, r, n, N, scheme, dt, cfl_safety, t_max,
               residual_tol, diag_every, discretization
    [initial]  kind, sigma0, bump
    [output]   snapshot_every

``r`` is a number, or ``x_left, x_right`` when n = 1.  ``dt = none`` selects
the CFL policy together with ``cfl_safety``.  Command line flags override
file values.  The output directory is ``--out``, else ``$MMCF_OUT_DIR``,
else ``./mmcf-out``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__, cmc, diagnostics as dg, verify
from .flow import (
    ConfigError,
    FlowConfig,
    Status,
    epsilon_continuation,
    initial_field,
    run_to_stationarity,
)
from .geometry import discrete_mean_curvature, save_snapshot

log = logging.getLogger("mmcf")

OUT_ENV = "MMCF_OUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_TIMEOUT = 0, 1, 2

FLOW_KEYS = {
    "sigma": float, "eps": float, "r": str, "n": int, "N": int, "scheme": str,
    "dt": str, "cfl_safety": float, "t_max": float, "residual_tol": float,
    "diag_every": int, "discretization": str,
}
INITIAL_KEYS = {"kind": str, "sigma0": float, "bump": float}
OUTPUT_KEYS = {"snapshot_every": int}
SECTIONS = {"flow": FLOW_KEYS, "initial": INITIAL_KEYS, "output": OUTPUT_KEYS}


# -- configuration -------------------------------------------------------------

def _convert(section, key, raw, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} in [{section}]") from None


def read_config(path):
    """Parse an INI file into ``{section: {key: value}}``; unknown keys are errors."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "N" distinct from "n"
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None
    out = {name: {} for name in SECTIONS}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{section}: unknown section")
        keys = SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"{key}: unknown key in [{section}]")
            out[section][key] = _convert(section, key, raw.strip(), keys[key])
    return out


def _parse_r(raw):
    parts = [p for p in str(raw).replace(",", " ").split() if p]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"r: cannot parse {raw!r}") from None
    if len(vals) == 1:
        return vals[0]
    if len(vals) == 2:
        return tuple(vals)
    raise ConfigError(f"r: expected one or two numbers, got {raw!r}")


def build_flow_config(values):
    """FlowConfig from a flat dict of [flow] values (strings or numbers)."""
    kw = dict(values)
    if "sigma" not in kw or "eps" not in kw:
        missing = "sigma" if "sigma" not in kw else "eps"
        raise ConfigError(f"{missing}: required key missing")
    if "r" in kw:
        kw["r"] = _parse_r(kw["r"])
    if "dt" in kw:
        raw = str(kw["dt"]).strip().lower()
        if raw in ("none", ""):
            kw["dt"] = None
        else:
            try:
                kw["dt"] = float(raw)
            except ValueError:
                raise ConfigError(f"dt: cannot parse {kw['dt']!r}") from None
    elif kw.get("cfl_safety") is not None:
        kw["dt"] = None
    return FlowConfig(**kw)


def _jsonable(obj):
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# -- outputs --------------------------------------------------------------------

def out_dir(args):
    path = Path(args.out or os.environ.get(OUT_ENV) or "mmcf-out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, data):
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, allow_nan=False) + "\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Run manifest, written atomically once the run has finished."""

    def __init__(self, command, config):
        self.command = command
        self.config = config
        self.started = _now()
        self.files = []

    def add(self, path):
        self.files.append(Path(path))

    def write(self, directory, status, exit_code):
        inventory = []
        for p in self.files:
            inventory.append({"path": p.relative_to(directory).as_posix(),
                              "sha256": _sha256(p), "bytes": p.stat().st_size})
        digest = hashlib.sha256("".join(e["sha256"] for e in inventory).encode()).hexdigest()
        data = {
            "tool": "mmcf",
            "version": __version__,
            "command": self.command,
            "config": self.config,
            "started": self.started,
            "finished": _now(),
            "status": status,
            "exit_code": exit_code,
            "outputs": inventory,
            "outputs_sha256": digest,
        }
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest.", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(_jsonable(data), fh, indent=2)
            fh.write("\n")
        os.replace(tmp, Path(directory) / "manifest.json")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_timeseries(path, records):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(dg.DiagnosticsRecord.CSV_COLUMNS)
        for rec in records:
            out.writerow(rec.csv_row())


# -- commands -------------------------------------------------------------------

def _flow_overrides(args):
    keys = ("sigma", "eps", "r", "n", "N", "scheme", "dt", "cfl_safety", "t_max",
            "residual_tol", "diag_every", "discretization")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def cmd_flow(args):
    sections = read_config(args.config) if args.config else {s: {} for s in SECTIONS}
    values = {**sections["flow"], **_flow_overrides(args)}
    if args.cfl_safety is not None and args.dt is None:
        values.pop("dt", None)
    config = build_flow_config(values)
    init = {"kind": "perturbed_cap", "sigma0": 0.9, "bump": 0.05, **sections["initial"]}
    for key in ("kind", "sigma0", "bump"):
        val = getattr(args, f"initial_{key}", None)
        if val is not None:
            init[key] = val
    snapshot_every = args.snapshot_every or sections["output"].get("snapshot_every", 0)

    directory = out_dir(args)
    manifest = Manifest("flow", {"flow": asdict(config), "initial": init,
                                 "output": {"snapshot_every": snapshot_every}})
    v0 = initial_field(config, init["kind"], sigma0=init["sigma0"], bump=init["bump"])
    result = run_to_stationarity(config, v0, keep_fields_every=snapshot_every)

    ts = directory / "timeseries.csv"
    write_timeseries(ts, result.records)
    manifest.add(ts)
    traj = directory / "trajectory.json"
    _write_json(traj, [r.as_dict() for r in result.records])
    manifest.add(traj)
    snaps = directory / "snapshots"
    snaps.mkdir(exist_ok=True)
    kept = list(result.fields)
    if not kept or kept[-1][0] != result.state.step_count:
        kept.append((result.state.step_count, result.state.t, result.field))
    for step, _, f in kept:
        p = snaps / f"step_{step:08d}.json"
        save_snapshot(f, p)
        manifest.add(p)

    checks = run_checks(result, v0)
    rep = directory / "checks.json"
    _write_json(rep, [c.as_dict() for c in checks])
    manifest.add(rep)

    code = EXIT_OK if result.status is Status.CONVERGED else EXIT_TIMEOUT
    manifest.write(directory, result.status.value, code)
    print(f"{result.status.value}: t={result.state.t:.6g} steps={result.state.step_count} "
          f"residual={result.records[-1].residual_sup:.3e}")
    return code


def run_checks(result, v0):
    cfg = result.config
    recs = result.records
    descent, balance = dg.check_energy_balance(recs)
    h0 = float(np.nanmin(discrete_mean_curvature(v0, cfg.discretization) - cfg.sigma))
    out = [descent, balance, dg.check_gradient_quantity(recs), dg.check_w_growth(recs),
           dg.check_monotone(recs, h0)]
    if cfg.n > 1:
        out.append(dg.check_height_bound(recs, float(cfg.r), cfg.eps, cfg.sigma))
    else:
        xl, xr = cfg.r
        out.append(dg.check_height_bound(recs, 0.5 * (xr - xl), cfg.eps, cfg.sigma))
    return out


def cmd_cmc(args):
    r = _parse_r(args.r)
    if not -1 < args.sigma0 <= 1:
        raise ConfigError("sigma0 out of (-1,1]")
    plan = None
    if args.sigma0 < 1:
        plan = cmc.ContinuationPlan(sigma_target=args.sigma0, step=args.step,
                                    newton_tol=args.newton_tol,
                                    discretization=args.discretization)
    directory = out_dir(args)
    manifest = Manifest("cmc", {"r": r, "eps": args.eps, "sigma0": args.sigma0, "n": args.n,
                                "N": args.N, "plan": asdict(plan) if plan else None})
    if plan is None:
        field, entries = cmc.horosphere(r, args.eps, args.n, args.N), []
    else:
        result = cmc.continuation(r, args.eps, plan, args.n, args.N)
        field, entries = result.field, result.log
    snap = directory / "initial.json"
    save_snapshot(field, snap)
    manifest.add(snap)
    logp = directory / "continuation.csv"
    cmc.write_continuation_log(logp, entries)
    manifest.add(logp)
    checks = cmc.height_checks(field, r, args.eps, args.sigma0)
    checks += cmc.euclidean_curvature_sandwich(field, r, args.eps, args.sigma0)
    checks.append(cmc.subharmonicity_report(field, args.sigma0))
    report = {"checks": [c.as_dict() for c in checks],
              "boundary_normal": cmc.boundary_normal_report(field, args.sigma0)}
    rep = directory / "report.json"
    _write_json(rep, report)
    manifest.add(rep)
    code = EXIT_OK if verify.hard_ok(checks) else EXIT_ERROR
    manifest.write(directory, "ok" if code == EXIT_OK else "failed_checks", code)
    print(f"sigma0={args.sigma0}: {len(entries)} continuation steps, checks "
          + ("passed" if code == EXIT_OK else "FAILED"))
    return code


def cmd_verify(args):
    if args.suite not in verify.SUITES:
        print(f"error: unknown suite {args.suite!r}; choose from {sorted(verify.SUITES)}",
              file=sys.stderr)
        return EXIT_ERROR
    directory = out_dir(args)
    manifest = Manifest("verify", {"suite": args.suite})
    results = verify.run_suite(args.suite)
    rep = directory / "verify_report.json"
    _write_json(rep, [{"check": c.check, "status": c.status, "measured": c.measured,
                       "bound": c.bound} for c in results])
    manifest.add(rep)
    for c in results:
        print(f"{c.status.upper():5s} {c.check}  measured={c.measured}  bound={c.bound}")
    code = EXIT_OK if verify.hard_ok(results) else EXIT_ERROR
    manifest.write(directory, "pass" if code == EXIT_OK else "fail", code)
    return code


def _float_list(raw, name):
    items = [p for p in (raw or "").replace(",", " ").split() if p]
    if not items:
        raise ConfigError(f"{name}: empty list")
    try:
        return [float(p) for p in items]
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def cmd_sweep(args):
    if (args.eps_list is None) == (args.N_list is None):
        raise ConfigError("sweep: give exactly one of --eps-list and --N-list")
    sections = read_config(args.config) if args.config else {s: {} for s in SECTIONS}
    directory = out_dir(args)
    if args.eps_list is not None:
        eps = _float_list(args.eps_list, "eps-list")
        values = {"eps": eps[0], **sections["flow"], **_flow_overrides(args)}
        values.setdefault("sigma", 0.5)
        base = build_flow_config(values)
        kind = sections["initial"].get("kind", "cmc")
        results, report = epsilon_continuation(base, eps, initial=kind, jobs=args.jobs)
        report["cauchy_ok"] = all(q <= 0.6 for q in report["ratios"])
        code = EXIT_TIMEOUT if report["partial"] else EXIT_OK
        manifest = Manifest("sweep", {"flow": asdict(base), "eps_list": eps, "jobs": args.jobs})
        for e, res in results.items():
            p = directory / f"stationary_eps{e:g}.json"
            save_snapshot(res.field, p)
            manifest.add(p)
    else:
        Ns = [int(x) for x in _float_list(args.N_list, "N-list")]
        values = {"eps": 0.05, "sigma": 0.5, **sections["flow"], **_flow_overrides(args)}
        base = build_flow_config(values)
        report = resolution_report(base, Ns)
        code = EXIT_OK
        manifest = Manifest("sweep", {"flow": asdict(base), "N_list": Ns})
    rep = directory / "sweep_report.json"
    _write_json(rep, report)
    manifest.add(rep)
    manifest.write(directory, "ok" if code == EXIT_OK else "partial", code)
    print(json.dumps(_jsonable(report)))
    return code


def resolution_report(base, Ns):
    """Curvature error of the exact stationary surface per N and observed orders."""
    errs, hs = [], []
    for N in Ns:
        cfg = base.with_(N=N)
        cap = initial_field(cfg, "cap")
        H = discrete_mean_curvature(cap, cfg.discretization)
        errs.append(float(np.nanmax(np.abs(H - cfg.sigma))))
        hs.append(cap.grid.h)
    orders = [math.log(e1 / e2) / math.log(h1 / h2)
              for e1, e2, h1, h2 in zip(errs, errs[1:], hs, hs[1:]) if e2 > 0]
    return {"N": Ns, "h": hs, "sup_error": errs, "orders": orders,
            "order_ok": all(p >= 1.9 for p in orders)}


# -- argument parsing -----------------------------------------------------------

def _add_flow_flags(p):
    p.add_argument("--sigma", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--r", type=str, help="radius, or 'x_left,x_right' for n = 1")
    p.add_argument("--n", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--scheme", choices=["explicit_rk2", "semi_implicit"])
    p.add_argument("--dt", type=float)
    p.add_argument("--cfl-safety", dest="cfl_safety", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--residual-tol", dest="residual_tol", type=float)
    p.add_argument("--diag-every", dest="diag_every", type=int)
    p.add_argument("--discretization", choices=["conservative", "central"])


def build_parser():
    parser = argparse.ArgumentParser(prog="mmcf", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"mmcf {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./mmcf-out)")
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("flow", help="run the flow to stationarity")
    common(p)
    p.add_argument("--config")
    _add_flow_flags(p)
    p.add_argument("--initial", dest="initial_kind",
                   choices=["cap", "perturbed_cap", "hemisphere", "cmc"])
    p.add_argument("--sigma0", dest="initial_sigma0", type=float)
    p.add_argument("--bump", dest="initial_bump", type=float)
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("cmc", help="construct a constant mean curvature initial surface")
    common(p)
    p.add_argument("--sigma0", type=float, default=0.9)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--r", type=str, default="1.0")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--newton-tol", dest="newton_tol", type=float, default=1e-12)
    p.add_argument("--discretization", choices=["conservative", "central"], default="conservative")
    p.set_defaults(func=cmd_cmc)

    p = sub.add_parser("verify", help="run an acceptance suite")
    common(p)
    p.add_argument("--suite", default="all", help="oracles | flow | all")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="eps continuation or resolution sweep")
    common(p)
    p.add_argument("--config")
    _add_flow_flags(p)
    p.add_argument("--eps-list", dest="eps_list")
    p.add_argument("--N-list", dest="N_list")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, cmc.ContinuationError, cmc.NoConvergence, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # numerical failure mid-run
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
