"""Command line: simulate, verify, analyze, dualize, lattice dump, scale.

Exit codes: 0 success, 1 verification failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis
from .config import OUTPUT_DIR_ENV, ConfigError, RunConfig, load_config, write_frozen
from .duality import BETA_SELF_DUAL, DualityRelation, dual_coupling, shift_table
from .lattice import GeometryError, Variant, build_replica_lattice, build_switching_lattice
from .model import Direction, ProtocolSchedule, clock_fourier_coeffs
from .neq import (CFUNCTION_FIELDS, WorkRecord, c_function_point, equilibration_sweeps, estimate_ratio,
                  reverse_consistency, run_ensemble)

log = logging.getLogger("kwreplica")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
EXACT_SITE_LIMIT = 24


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _out_dir(cfg: RunConfig | None, override: str | None) -> Path:
    if override:
        d = Path(override)
    elif cfg is not None:
        d = cfg.output_dir()
    else:
        d = Path(os.environ.get(OUTPUT_DIR_ENV) or "kwreplica-out")
    try:
        d.mkdir(parents=True, exist_ok=True)
        probe = d / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ConfigError(f"output directory {d} is not writable: {e}") from None
    return d


# simulate


def derive_seed(master_seed: int, point: int, direction: str) -> int:
    """Per-(point, direction) seed: SeedSequence(master, spawn_key=(point, 0|1)), first 63 bits."""
    d = 0 if direction == Direction.FORWARD.value else 1
    state = np.random.SeedSequence(int(master_seed), spawn_key=(int(point), d)).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


def plan_points(cfg: RunConfig) -> list:
    pts = []
    for beta in cfg.betas():
        for l in cfg.physics.l:
            pts.append({"point": len(pts), "beta": beta, "l": int(l)})
    return pts


def _schedule(cfg: RunConfig, direction: str) -> ProtocolSchedule:
    pr = cfg.protocol
    return ProtocolSchedule.linear(pr.n_steps, direction, sweeps_per_step=pr.sweeps_per_step,
                                   equilibration_sweeps=pr.equilibration_sweeps)


def _record_path(out: Path, point: int, direction: str) -> Path:
    return out / "records" / f"point{point:03d}_{direction}.jsonl"


def read_records(path: Path, repair: bool = False) -> list:
    """Parse a JSON-lines record file; a torn final line (crash mid-write) is dropped."""
    if not path.exists():
        return []
    raw = path.read_bytes()
    lines = raw.split(b"\n")
    good, good_bytes = [], 0
    for i, line in enumerate(lines):
        if not line:
            if i < len(lines) - 1:
                good_bytes += 1
            continue
        try:
            rec = WorkRecord.from_json_dict(json.loads(line))
        except (ValueError, KeyError):
            break
        if i == len(lines) - 1:
            # complete JSON without its newline: keep it but finish the line
            good.append(rec)
            good_bytes += len(line)
            if repair:
                with open(path, "ab") as f:
                    f.write(b"\n")
            return good
        good.append(rec)
        good_bytes += len(line) + 1
    if repair and good_bytes < len(raw):
        with open(path, "r+b") as f:
            f.truncate(good_bytes)
    return good


def _check_records(recs, seed, direction, beta, n_steps, ghash, path):
    for i, r in enumerate(recs):
        if (r.seed, r.stream, r.direction, r.n_steps, r.geometry_hash) != (seed, i, direction, n_steps, ghash) \
                or r.beta != beta:
            raise ConfigError(f"{path} holds records from a different configuration (line {i + 1}); "
                              "use a fresh output directory")


def _append(path: Path, recs) -> None:
    with open(path, "a") as f:
        for r in recs:
            f.write(json.dumps(r.to_json_dict()) + "\n")
        f.flush()
        os.fsync(f.fileno())


def cmd_simulate(cfg: RunConfig, out: Path, dry_run: bool = False, quiet: bool = False) -> int:
    if cfg.geometry.variant != Variant.STANDARD_CUT.value:
        raise ConfigError("[geometry].variant: switching simulations use standard_cut")
    pr = cfg.protocol
    points = plan_points(cfg)
    write_frozen(cfg, out)
    if dry_run or pr.n_trajectories == 0:
        plan = []
        for p in points:
            g = build_switching_lattice(cfg.spec(p["l"] + 1))
            eq = pr.equilibration_sweeps
            per = (eq if eq is not None else 100) + pr.n_steps * pr.sweeps_per_step
            plan.append({**p, "n_sites": g.n_sites, "n_bonds": g.n_bonds, "geometry_hash": g.geometry_hash(),
                         "directions": pr.directions, "n_trajectories": pr.n_trajectories,
                         "sweeps_per_trajectory": per, "equilibration": "fixed" if eq is not None else "auto, >= 100",
                         "estimated_sweeps": per * pr.n_trajectories * len(pr.directions)})
        (out / "plan.json").write_text(_dump({"points": plan}))
        sys.stdout.write(_dump({"plan": plan}))
        return EXIT_OK
    (out / "records").mkdir(exist_ok=True)
    ratios, cpoints = [], []
    for p in points:
        g = build_switching_lattice(cfg.spec(p["l"] + 1))
        ghash = g.geometry_hash()
        est = {}
        for direction in pr.directions:
            seed = derive_seed(pr.master_seed, p["point"], direction)
            sched = _schedule(cfg, direction)
            path = _record_path(out, p["point"], direction)
            recs = read_records(path, repair=True)
            _check_records(recs, seed, direction, p["beta"], pr.n_steps, ghash, path)
            if len(recs) > pr.n_trajectories:
                recs = recs[:pr.n_trajectories]
            if len(recs) < pr.n_trajectories:
                if sched.equilibration_sweeps is None:
                    sched = replace(sched, equilibration_sweeps=equilibration_sweeps(
                        g, p["beta"], sched, seed)["equilibration_sweeps"])
                t0 = time.perf_counter()
                while len(recs) < pr.n_trajectories:
                    k = min(cfg.io.checkpoint_interval, pr.n_trajectories - len(recs))
                    new = run_ensemble(g, p["beta"], sched, seed, k, start=len(recs), workers=cfg.io.workers)
                    _append(path, new)
                    recs.extend(new)
                if not quiet:
                    log.info("point %d %s: %d trajectories in %.1f s", p["point"], direction,
                             pr.n_trajectories, time.perf_counter() - t0)
            if len(recs) >= 2:
                est[direction] = estimate_ratio(recs, n_boot=pr.n_bootstrap, seed=seed)
        row = {**p, "geometry_hash": ghash, "n_trajectories": pr.n_trajectories}
        for d, e in est.items():
            row[d] = {"log_ratio": e.log_ratio, "error": e.error, "mean_work": e.mean_work,
                      "work_std": e.work_std, "n_bootstrap": e.n_bootstrap}
        if len(est) == 2:
            row["reverse_consistency"] = reverse_consistency(est["forward"], est["reverse"])
            if row["reverse_consistency"]["flagged"]:
                log.warning("point %d: forward/reverse discrepancy %.2f sigma (protocol too fast?)",
                            p["point"], row["reverse_consistency"]["n_sigma"])
        if g.n_sites <= EXACT_SITE_LIMIT:
            from .oracle import exact_log_ratio

            row["exact_log_ratio"] = exact_log_ratio(g, p["beta"])
        ratios.append(row)
        primary = est.get("forward") or est.get("reverse")
        if primary is not None and cfg.geometry.n_replicas >= 2:
            cp = c_function_point(primary, cfg.spec(p["l"]), scale=cfg.physics.n_tau_c)
            cpoints.append(cp.to_row())
    (out / "ratios.json").write_text(_dump({"points": ratios}))
    write_points_csv(out / "cfunction.csv", cpoints)
    sys.stdout.write(_dump({"output_dir": str(out), "points": ratios}))
    return EXIT_OK


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_points_csv(path: Path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CFUNCTION_FIELDS)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in CFUNCTION_FIELDS])
    path.write_text(buf.getvalue())


def _write_rows(path: Path, rows, fields) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(";".join(r[k]) if isinstance(r.get(k), list) else r.get(k)) for k in fields])
    path.write_text(buf.getvalue())


# analyze


def _read_points(paths) -> list:
    pts = []
    for p in paths:
        try:
            with open(p, newline="") as f:
                for row in csv.DictReader(f):
                    pts.append(analysis.point_from_row(row))
        except OSError as e:
            raise ConfigError(f"cannot read input {p}: {e}") from None
    return pts


def _read_mg_table(path) -> list:
    try:
        with open(path, newline="") as f:
            rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    except OSError as e:
        raise ConfigError(f"cannot read m_g table {path}: {e}") from None
    if rows and rows[0][0].strip().lower() == "beta":
        rows = rows[1:]
    return [(float(b), float(m)) for b, m in rows]


def cmd_analyze(cfg: RunConfig, inputs, out: Path) -> int:
    an = cfg.analysis
    if not inputs:
        inputs = [cfg.output_dir() / "cfunction.csv"]
    points = _read_points(inputs)
    if not points:
        raise ConfigError("no c-function points in the inputs")
    if an.c2_cft is None:
        raise ConfigError("C_2^CFT is not set: supply analysis.c2_cft in the run config")
    mg_table = _read_mg_table(an.mg_table) if an.mg_table else None
    try:
        res = analysis.run_pipeline(points, an.c2_cft, mg_over_tc=an.mg_over_tc, mg_table=mg_table, fits=an.fits,
                                    ansatz_window=an.ansatz_window, powerlaw_window=an.powerlaw_window,
                                    min_volumes=an.min_volumes)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    ad = out / "analysis"
    ad.mkdir(exist_ok=True)
    write_frozen(cfg, ad)
    _write_rows(ad / "thermo.csv", res.thermo,
                ["dimension", "n", "n_tau_c", "n_tau", "beta", "l", "value", "error", "value_mid", "error_mid", "flags"])
    _write_rows(ad / "continuum.csv", res.continuum,
                ["dimension", "n", "l_tc", "x", "value", "stat", "syst", "error", "backward", "mid", "n_spacings",
                 "flags"])
    report = {"fits": [f.to_json_dict() for f in res.fits],
              "thermo_fits": [f.to_json_dict() for f in res.thermo_fits],
              "mg_over_tc": res.mg_over_tc, "warnings": res.warnings,
              "reference": analysis.REFERENCE_RESULTS}
    (ad / "fits.json").write_text(_dump(report))
    if res.fits and res.continuum:
        xs = [r["x"] for r in res.continuum]
        analysis.plot_cfunction(ad / "cfunction.png", xs, [r["value"] for r in res.continuum],
                                [r["error"] for r in res.continuum], res.fits)
    for w in res.warnings:
        log.warning(w)
    sys.stdout.write(_dump({"output_dir": str(ad), "fits": report["fits"], "warnings": res.warnings}))
    return EXIT_OK


# verify / dualize / lattice / scale


def cmd_verify(suite: str, out: Path | None) -> int:
    from .verify import SUITES, run_suite

    names = list(SUITES) if suite == "all" else [suite]
    for n in names:
        if n not in SUITES:
            raise UsageError(f"unknown suite {n!r}; available: all, {', '.join(SUITES)}")
    reports = [run_suite(n).to_json_dict() for n in names]
    doc = {"passed": all(r["passed"] for r in reports), "suites": reports}
    text = _dump(doc)
    if out is not None:
        (out / f"verify-{suite}.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if doc["passed"] else EXIT_FAIL


def cmd_dualize(args, cfg: RunConfig | None) -> int:
    if args.what == "beta":
        if args.value is None:
            raise UsageError("dualize beta needs a coupling value")
        beta = float(args.value)
        try:
            bs = dual_coupling(beta)
        except ValueError as e:
            raise UsageError(str(e)) from None
        doc = {"beta": beta, "beta_star": bs, "beta_self_dual": BETA_SELF_DUAL}
        if cfg is not None:
            g = cfg.geometry
            try:
                spec = cfg.spec(max(1, cfg.physics.l[0]))
            except GeometryError as e:
                raise ConfigError(str(e)) from None
            V = int(np.prod(g.extents))
            rel = DualityRelation(g.dimension, g.n_replicas, Variant(g.variant))
            ng = V - 1 if g.dimension == 3 else None
            a, b = rel.coefficients(V, ng, spec.boundary_sites if g.n_replicas > 1 else None)
            doc["prefactor"] = {"ln2_coefficient": str(a), "ln_sinh_2beta_star_coefficient": str(b),
                                "n_sites": V, "n_tree": ng, "boundary_sites": spec.boundary_sites}
            doc["entropy_shifts"] = [{"relation": r, "quantity": q, "value": v}
                                     for r, q, v in shift_table(g.dimension, g.n_replicas, spec.boundary_sites)]
        sys.stdout.write(_dump(doc))
        return EXIT_OK
    N = int(args.N)
    beta = float(args.value if args.value is not None else args.beta)
    try:
        c = clock_fourier_coeffs(N, beta)
    except ValueError as e:
        raise UsageError(str(e)) from None
    sys.stdout.write("k,C_k\n" + "".join(f"{k},{float(v)!r}\n" for k, v in enumerate(c)))
    return EXIT_OK


def cmd_lattice_dump(cfg: RunConfig, l: int | None, switching: bool, output: str | None) -> int:
    l = cfg.physics.l[0] if l is None else l
    try:
        g = build_switching_lattice(cfg.spec(l + 1)) if switching else build_replica_lattice(cfg.spec(l))
    except GeometryError as e:
        raise ConfigError(str(e)) from None
    text = g.to_csv()
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_scale(n_tau_c: int) -> int:
    try:
        beta_c, aT = analysis.scale_lookup(n_tau_c)
    except ValueError as e:
        raise UsageError(str(e)) from None
    _, err = analysis.SCALE_TABLE.lookup(n_tau_c)
    sys.stdout.write(_dump({"n_tau_c": n_tau_c, "beta_c": beta_c, "beta_c_error": err, "a_T_c": aT}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kwreplica", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run switching ensembles and write WorkRecords")
    s.add_argument("config")
    s.add_argument("-o", "--output-dir")
    s.add_argument("--dry-run", action="store_true", help="print the plan and exit")

    s = sub.add_parser("verify", help="run a named oracle suite")
    s.add_argument("suite", help="suite name or 'all'")
    s.add_argument("-o", "--output-dir")

    s = sub.add_parser("analyze", help="extrapolate and fit c-function points")
    s.add_argument("config")
    s.add_argument("inputs", nargs="*", help="c-function CSV files (default: <output_dir>/cfunction.csv)")
    s.add_argument("-o", "--output-dir")

    s = sub.add_parser("dualize", help="beta <-> beta*, prefactors, clock coefficients")
    s.add_argument("what", choices=["beta", "coeffs"])
    s.add_argument("value", nargs="?", help="coupling beta")
    s.add_argument("--config", help="geometry for prefactor coefficients and entropy shifts")
    s.add_argument("--N", type=int, default=3, help="clock model order for 'coeffs'")
    s.add_argument("--beta", type=float, default=1.0)

    s = sub.add_parser("lattice", help="geometry debugging")
    lsub = s.add_subparsers(dest="lattice_command", required=True)
    d = lsub.add_parser("dump", help="bond list as CSV site_a,site_b,class,sign")
    d.add_argument("config")
    d.add_argument("--l", type=int, help="slab length (default: first of physics.l)")
    d.add_argument("--switching", action="store_true", help="dump the switching graph for l -> l+1")
    d.add_argument("-o", "--output")

    s = sub.add_parser("scale", help="beta_c and a T_c for a tabulated N_tau,c")
    s.add_argument("n_tau_c", type=int)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "simulate":
            cfg = load_config(args.config)
            return cmd_simulate(cfg, _out_dir(cfg, args.output_dir), dry_run=args.dry_run)
        if args.command == "verify":
            out = _out_dir(None, args.output_dir) if args.output_dir else None
            return cmd_verify(args.suite, out)
        if args.command == "analyze":
            cfg = load_config(args.config)
            return cmd_analyze(cfg, args.inputs, _out_dir(cfg, args.output_dir))
        if args.command == "dualize":
            cfg = load_config(args.config) if args.config else None
            return cmd_dualize(args, cfg)
        if args.command == "lattice":
            return cmd_lattice_dump(load_config(args.config), args.l, args.switching, args.output)
        if args.command == "scale":
            return cmd_scale(args.n_tau_c)
    except (ConfigError, UsageError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
