"""
Command-line entry point.

``polsq run SCENARIO`` measures every entry of a scenario and writes CSV
tables, a text summary and the fully resolved scenario (which re-runs to
identical output). ``polsq poincare`` exports a sampled noise cloud,
``polsq calibrate`` fits a shot-noise record and ``polsq examples`` lists the
bundled scenarios.

Exit codes: 0 success, 1 invalid input, 2 failed measurement or fit.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .calib import CalibrationError, RegionPolicy, fit_shot_noise, format_report, read_record
from .imperfect import measure_imperfect, mixing_sensitivity, phase_sweep
from .optics import TARGETS, apply_chain, ideal_config
from .polcore import (
    StokesEstimate,
    local_stokes_coefficients,
    stokes_linearized,
    uncertainty_report,
)
from .scenario import (
    SCHEMA_VERSION,
    ScenarioError,
    bundled_names,
    bundled_path,
    load_scenario,
    parse_scenario,
)

__all__ = ["RunResult", "run_scenario", "write_outputs", "poincare_export",
           "main"]

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(path, header, rows, meta=None):
    """CSV with a ``# schema_version`` comment, optional ``# key=value``
    comments, and a header row."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        for key, value in (meta or {}).items():
            fh.write(f"# {key}={_fmt(value)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


@dataclass
class RunResult:
    scenario: object
    output_state: object
    records: list
    report: object
    sweep: list | None
    sensitivity: dict | None

    @property
    def failed(self):
        return [r for r in self.records if r.saturated]


def run_scenario(scn):
    """Evaluate every measurement, sweep and sensitivity scan of a scenario."""
    out = apply_chain(scn.state, scn.chain)
    records = []
    for spec in scn.measurements:
        records.append(measure_imperfect(
            out, spec.config, scn.detector, scn.environment, mode=spec.mode,
            shots=spec.shots or 100_000, seed=spec.seed,
            breakdown=scn.outputs.get("breakdown", True),
        ))

    # classification uses measured variances where available
    est = stokes_linearized(out)
    v = np.array(est.normalized, dtype=float)
    for rec in records:
        v[TARGETS.index(rec.target)] = rec.normalized
    n = est.shot_noise
    report = uncertainty_report(StokesEstimate(est.mean, v * n, n))

    sweep = None
    if scn.phase_sweep:
        cfg = ideal_config(scn.phase_sweep["target"])
        sweep = phase_sweep(out, cfg, scn.detector, scn.environment,
                            scn.phase_sweep["phi"])
    sens = None
    if scn.sensitivity:
        sens = {}
        for t in scn.sensitivity["targets"]:
            sens[t] = mixing_sensitivity(
                out, ideal_config(t), scn.detector, scn.environment,
                scn.sensitivity["parameter"], scn.sensitivity["grid"],
            )
    return RunResult(scn, out, records, report, sweep, sens)


def _summary(res):
    scn, rep = res.scenario, res.report
    lines = [f"scenario: {scn.name}"]
    if scn.description:
        lines.append(f"description: {scn.description}")
    st = res.output_state
    lines.append(f"mean photon number: {st.mean_photon_number:.6g}")
    lines.append("")
    lines.append("measurements (dB relative to shot noise):")
    for rec in res.records:
        err = ""
        if rec.stderr is not None:
            err = f" +- {10 * rec.stderr / (rec.normalized * math.log(10)):.3f}"
        flag = "  SATURATED" if rec.saturated else ""
        lines.append(f"  {rec.target} [{rec.mode}] {rec.db:+.3f}{err}"
                     f" (ideal {rec.ideal_db:+.3f}){flag}")
        for name, delta in rec.breakdown.items():
            if abs(delta) > 5e-7:
                lines.append(f"      {name}: {delta:+.6f}")
    lines.append("")
    lines.append("classification:")
    for j in range(4):
        partner = rep.conjugate_partner.get(j)
        extra = f" (conjugate S{partner})" if partner is not None else ""
        lines.append(f"  S{j}: {rep.classification[j].value}{extra}")
    if rep.degenerate:
        lines.append("  all Stokes means vanish; uncertainty bounds are trivial")
    return "\n".join(lines) + "\n"


def write_outputs(res, out_dir):
    """Write results, breakdown, sweep and sensitivity tables, summary and
    resolved scenario into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"scenario": res.scenario.name}

    rows = []
    for rec, spec in zip(res.records, res.scenario.measurements):
        cfg = spec.config
        rows.append([
            rec.target, rec.mode, rec.channel,
            None if cfg.hwp_angle is None else math.degrees(cfg.hwp_angle),
            None if cfg.qwp_angle is None else math.degrees(cfg.qwp_angle),
            rec.variance, rec.shot_noise, rec.normalized, rec.db, rec.stderr,
            rec.ideal, rec.ideal_db, rec.shots, rec.seed,
            res.report.classification[TARGETS.index(rec.target)].value,
            rec.saturated,
        ])
    write_table(out_dir / "results.csv",
                ["target", "mode", "channel", "hwp_deg", "qwp_deg",
                 "variance", "shot_noise", "normalized", "db", "stderr",
                 "ideal_normalized", "ideal_db", "shots", "seed",
                 "classification", "saturated"], rows, meta)

    rows = [[rec.target, name, delta] for rec in res.records
            for name, delta in rec.breakdown.items()]
    write_table(out_dir / "breakdown.csv",
                ["target", "mechanism", "delta_normalized"], rows, meta)

    if res.sweep is not None:
        rows = [[math.degrees(r.phi), *r.means[1:], *r.linearized[1:],
                 r.normalized, r.db] for r in res.sweep]
        write_table(out_dir / "phase_sweep.csv",
                    ["phi_deg", "mean_s1", "mean_s2", "mean_s3",
                     "ideal_v1", "ideal_v2", "ideal_v3", "normalized", "db"],
                    rows, {**meta, "target": res.scenario.phase_sweep["target"]})

    if res.sensitivity is not None:
        param = res.scenario.sensitivity["parameter"]
        angular = param in ("hwp", "qwp", "jitter")
        rows = [[t, math.degrees(r.value) if angular else r.value,
                 r.normalized, r.db, r.degradation_db]
                for t, scan in res.sensitivity.items() for r in scan]
        write_table(out_dir / "sensitivity.csv",
                    ["target", "value_deg" if angular else "value",
                     "normalized", "db", "degradation_db"],
                    rows, {**meta, "parameter": param})

    (out_dir / "summary.txt").write_text(_summary(res))
    with open(out_dir / "resolved.yaml", "w") as fh:
        yaml.safe_dump(res.scenario.resolved, fh, sort_keys=False)
    return out_dir


def poincare_export(state, samples, seed, path):
    """Sample ``samples`` points of the linearized Stokes noise cloud.

    The CSV header records the mean Stokes vector and the shot-noise radius
    ``sqrt(<n>)``. Returns ``(mean, radius, points)``.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    est = stokes_linearized(state)
    coeffs = local_stokes_coefficients(state)[1:]
    rng = np.random.default_rng(seed)
    q = rng.multivariate_normal(np.zeros(4), state.cov, size=samples,
                                method="cholesky")
    points = est.mean[1:] + q @ coeffs.T
    radius = math.sqrt(state.mean_photon_number)
    mean = est.mean[1:]
    write_table(path, ["s1", "s2", "s3"], points.tolist(), {
        "mean_s1": mean[0], "mean_s2": mean[1], "mean_s3": mean[2],
        "shot_noise_radius": radius, "samples": int(samples), "seed": seed,
    })
    return mean, radius, points


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _parser():
    p = _Parser(prog="polsq", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="evaluate a scenario")
    r.add_argument("scenario", help="scenario file or bundled scenario name")
    r.add_argument("--out", help="output directory")

    q = sub.add_parser("poincare", help="export a sampled Stokes noise cloud")
    q.add_argument("scenario")
    q.add_argument("--samples", type=int, default=2000)
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--out", help="output CSV path")

    c = sub.add_parser("calibrate", help="fit a shot-noise calibration record")
    c.add_argument("record", help="CSV with dc,ac_power columns")
    c.add_argument("--dark-fraction", type=float, default=0.1)
    c.add_argument("--slope-ratio", type=float, default=0.9)
    c.add_argument("--window", type=int, default=5)
    c.add_argument("--weighted", action="store_true")
    c.add_argument("--out", help="write the report to this file")

    e = sub.add_parser("examples", help="bundled scenarios")
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--list", action="store_true")
    g.add_argument("--show", metavar="NAME")
    return p


def _default_dir(scn):
    if scn.outputs.get("dir"):
        return Path(scn.outputs["dir"])
    return Path("out") / scn.name


def _cmd_run(args):
    scn = load_scenario(args.scenario)
    res = run_scenario(scn)
    out_dir = write_outputs(res, args.out or _default_dir(scn))
    sys.stdout.write(_summary(res))
    print(f"outputs written to {out_dir}")
    if res.failed:
        bad = ", ".join(r.target for r in res.failed)
        print(f"error: detectors saturated beyond model validity: {bad}",
              file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _cmd_poincare(args):
    scn = load_scenario(args.scenario)
    if args.samples < 1:
        raise ScenarioError("--samples must be positive")
    state = apply_chain(scn.state, scn.chain)
    path = Path(args.out) if args.out else _default_dir(scn) / "poincare.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    mean, radius, _ = poincare_export(state, args.samples, args.seed, path)
    print(f"mean Stokes vector: {mean[0]:.6g} {mean[1]:.6g} {mean[2]:.6g}")
    print(f"shot-noise radius: {radius:.6g}")
    print(f"{args.samples} samples written to {path}")
    return EXIT_OK


def _cmd_calibrate(args):
    rec = read_record(args.record)
    policy = RegionPolicy(args.dark_fraction, args.slope_ratio, args.window,
                          args.weighted)
    try:
        fit = fit_shot_noise(rec, policy)
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    text = format_report(fit, rec)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


def _cmd_examples(args):
    if args.list:
        for name in bundled_names():
            scn = parse_scenario(bundled_path(name).read_text(), name)
            print(f"{name:20s} {scn.description}")
        return EXIT_OK
    if args.show not in bundled_names():
        raise ScenarioError(f"no bundled scenario named '{args.show}'")
    sys.stdout.write(bundled_path(args.show).read_text())
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "poincare": _cmd_poincare,
             "calibrate": _cmd_calibrate, "examples": _cmd_examples}


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code or EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (ScenarioError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
