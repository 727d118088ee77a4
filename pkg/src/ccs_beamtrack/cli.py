"""Command-line entry point: run scenario batches and compare summaries.

``run`` writes one CSV per replication, a batch summary JSON (with a
content hash of the semantic configuration) and a ``curves/`` directory
of plot-ready two-column tables.  ``compare`` prints a side-by-side
table of headline metrics from two or more summaries.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadTransitionMatrix,
    BeamTrackError,
    DegenerateSegment,
    IoError,
    OffRoad,
    OutOfRange,
    SchemaMismatch,
    SingularGeometry,
    SingularInnovation,
    TooFewPoints,
    UsageError,
)
from .harness import MetricsSummary, aggregate, run_scenario, scenario_from_dict

__all__ = ["CliInvocation", "parse_and_validate", "run_batch", "compare", "main"]

SCHEMA_VERSION = 1

CSV_HEADER = (
    "epoch,t_ms,s_true,n_true,s_est,n_est,s_pred,n_pred,theta_deg,phi_deg,"
    "active_m,active_n,kappa_t,rate_bpshz,aligned,p_lk,p_lc"
)

_TRACKER_FLAGS = {
    "imm": "imm",
    "ekf-lk": "ekf-lk",
    "ekf-lc": "ekf-lc",
    "cartesian": "cartesian",
    "straight": "straight",
}


@dataclass
class CliInvocation:
    command: str
    scenario_path: str | None = None
    seed: int | None = None
    runs: int | None = None
    out_dir: str = "out"
    tracker: str | None = None
    beam_mode: str | None = None
    gamma: float | None = None
    jobs: int = 1
    verbosity: int = 0
    compare_paths: tuple[str, ...] = ()


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); surface as UsageError
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="ccs-beamtrack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario batch")
    run_p.add_argument("--scenario", required=True, metavar="PATH")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--runs", type=int, default=None)
    run_p.add_argument("--out", default="out", metavar="DIR")
    run_p.add_argument("--tracker", choices=sorted(_TRACKER_FLAGS), default=None)
    run_p.add_argument("--beam", choices=["constant", "dynamic", "oracle"], default=None)
    run_p.add_argument("--gamma", type=float, default=None)
    run_p.add_argument("--jobs", type=int, default=1)
    run_p.add_argument("-v", "--verbose", action="count", default=0)

    cmp_p = sub.add_parser("compare", help="compare batch summaries")
    cmp_p.add_argument("summaries", nargs="+", metavar="SUMMARY_JSON")

    return p


def parse_and_validate(argv=None) -> CliInvocation:
    """Parse argv into a validated invocation; raises UsageError."""
    ns = _build_parser().parse_args(argv)
    if ns.command == "compare":
        if len(ns.summaries) < 2:
            raise UsageError("compare needs at least two summary files")
        return CliInvocation(command="compare", compare_paths=tuple(ns.summaries))

    seed = ns.seed
    if seed is None and os.environ.get("ISAC_SEED"):
        try:
            seed = int(os.environ["ISAC_SEED"])
        except ValueError as exc:
            raise UsageError(f"ISAC_SEED is not an integer: {exc}") from exc
    if ns.runs is not None and ns.runs < 1:
        raise UsageError("--runs must be a positive integer")
    if ns.gamma is not None and not 0.0 < ns.gamma < 1.0:
        raise UsageError("--gamma must lie strictly in (0, 1)")
    if ns.jobs < 1:
        raise UsageError("--jobs must be a positive integer")
    return CliInvocation(
        command="run",
        scenario_path=ns.scenario,
        seed=seed,
        runs=ns.runs,
        out_dir=ns.out,
        tracker=ns.tracker,
        beam_mode=ns.beam,
        gamma=ns.gamma,
        jobs=ns.jobs,
        verbosity=ns.verbose,
    )


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def _write_run_csv(path: str, records) -> None:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            ",".join(
                [
                    str(r.epoch),
                    format(r.t_ms, ".3f"),
                    _fmt(r.truth.s),
                    _fmt(r.truth.n),
                    _fmt(r.est.s),
                    _fmt(r.est.n),
                    _fmt(r.pred.s),
                    _fmt(r.pred.n),
                    _fmt(np.degrees(r.theta_point)),
                    _fmt(np.degrees(r.phi_point)),
                    str(r.active_m),
                    str(r.active_n),
                    _fmt(r.kappa_t),
                    _fmt(r.rate),
                    "1" if r.aligned else "0",
                    _fmt(r.p_lk),
                    _fmt(r.p_lc),
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_curve(path: str, xs, ys, header: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for x, y in zip(xs, ys):
            fh.write(f"{_fmt(x)},{_fmt(y)}\n")


def _subsample(xs, ys, cap: int = 1001):
    if len(xs) <= cap:
        return xs, ys
    idx = np.linspace(0, len(xs) - 1, cap).round().astype(int)
    return [xs[i] for i in idx], [ys[i] for i in idx]


def _write_curves(curve_dir: str, m: MetricsSummary) -> None:
    os.makedirs(curve_dir, exist_ok=True)
    t = m.t_ms
    _write_curve(os.path.join(curve_dir, "rmse_s_vs_t.csv"), t, m.rmse_s, "t_ms,rmse_s_m")
    _write_curve(os.path.join(curve_dir, "rmse_n_vs_t.csv"), t, m.rmse_n, "t_ms,rmse_n_m")
    _write_curve(os.path.join(curve_dir, "rmse_pos_vs_t.csv"), t, m.rmse_pos, "t_ms,rmse_pos_m")
    _write_curve(
        os.path.join(curve_dir, "rate_vs_t.csv"), t, m.mean_rate_trace, "t_ms,rate_bpshz"
    )
    xs, ys = _subsample(m.rate_cdf_values, m.rate_cdf_probs)
    _write_curve(os.path.join(curve_dir, "rate_cdf.csv"), xs, ys, "rate_bpshz,cdf")
    _write_curve(
        os.path.join(curve_dir, "misalignment_vs_t.csv"),
        t,
        m.misalignment_trace,
        "t_ms,misalignment",
    )
    _write_curve(
        os.path.join(curve_dir, "pred_mse_s_vs_t.csv"),
        t,
        m.pred_mse_s_trace,
        "t_ms,pred_mse_s_m2",
    )
    _write_curve(
        os.path.join(curve_dir, "pred_mse_n_vs_t.csv"),
        t,
        m.pred_mse_n_trace,
        "t_ms,pred_mse_n_m2",
    )
    if m.p_lk_trace:
        _write_curve(os.path.join(curve_dir, "p_lk_vs_t.csv"), t, m.p_lk_trace, "t_ms,p_lk")
        _write_curve(os.path.join(curve_dir, "p_lc_vs_t.csv"), t, m.p_lc_trace, "t_ms,p_lc")


def scenario_hash(semantic: dict) -> str:
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _summary_metrics(m: MetricsSummary) -> dict:
    d = m.to_dict()
    d["rate_cdf_values"], d["rate_cdf_probs"] = _subsample(
        d["rate_cdf_values"], d["rate_cdf_probs"]
    )
    d["overall_rmse_s"] = float(np.sqrt(np.mean(np.square(m.rmse_s))))
    d["overall_rmse_n"] = float(np.sqrt(np.mean(np.square(m.rmse_n))))
    d["overall_rmse_pos"] = float(np.sqrt(np.mean(np.square(m.rmse_pos))))
    return d


def run_batch(inv: CliInvocation) -> int:
    """Execute a batch and write CSVs, summary JSON and curve tables."""
    if not os.path.exists(inv.scenario_path):
        raise IoError(f"scenario file not found: {inv.scenario_path}")
    try:
        with open(inv.scenario_path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read scenario: {exc}") from exc

    # overrides become part of the semantic configuration (and its hash)
    if inv.seed is not None:
        cfg["seed"] = inv.seed
    if inv.runs is not None:
        cfg["mc_runs"] = inv.runs
    if inv.tracker is not None:
        cfg["tracker"] = inv.tracker
    if inv.beam_mode is not None:
        cfg.setdefault("beam", {})["mode"] = inv.beam_mode
    if inv.gamma is not None:
        cfg.setdefault("beam", {})["gamma"] = inv.gamma

    sc = scenario_from_dict(cfg, base_dir=os.path.dirname(inv.scenario_path) or ".")
    results = run_scenario(sc, jobs=inv.jobs)
    metrics = aggregate(results)

    os.makedirs(inv.out_dir, exist_ok=True)
    for res in results:
        _write_run_csv(os.path.join(inv.out_dir, f"run_{res.run_idx:03d}.csv"), res.records)
    _write_curves(os.path.join(inv.out_dir, "curves"), metrics)

    summary = {
        "schema_version": SCHEMA_VERSION,
        "scenario_hash": scenario_hash(sc.semantic),
        "config": sc.semantic,
        "metrics": _summary_metrics(metrics),
    }
    with open(os.path.join(inv.out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if inv.verbosity:
        print(
            f"{sc.tracker}/{sc.beam_mode}: mean rate {metrics.mean_rate:.3f} b/s/Hz, "
            f"misalignment {metrics.misalignment:.4f}, "
            f"{metrics.diverged_runs}/{metrics.runs} diverged"
        )
    return 0


_COMPARE_KEYS = ("mean_rate", "overall_rmse_s", "overall_rmse_n", "overall_rmse_pos",
                 "misalignment")


def compare(paths) -> list[dict]:
    """Load summaries and tabulate headline metrics side by side."""
    rows = []
    for path in paths:
        if not os.path.exists(path):
            raise IoError(f"summary not found: {path}")
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatch(f"{path}: schema {data.get('schema_version')}")
        metrics = data.get("metrics", {})
        if not all(k in metrics for k in _COMPARE_KEYS):
            raise SchemaMismatch(f"{path}: missing metric keys")
        rows.append(
            {
                "path": path,
                "tracker": data.get("config", {}).get("tracker", "?"),
                **{k: metrics[k] for k in _COMPARE_KEYS},
            }
        )
    return rows


def _print_compare(rows) -> None:
    cols = ("tracker", *_COMPARE_KEYS)
    widths = {c: max(len(c), 12) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for row in rows:
        cells = [str(row["tracker"]).ljust(widths["tracker"])]
        for key in _COMPARE_KEYS:
            cells.append(format(row[key], ".6g").ljust(widths[key]))
        print("  ".join(cells))
    base = rows[0]
    for row in rows[1:]:
        deltas = ", ".join(
            f"{k} {row[k] - base[k]:+.6g}" for k in _COMPARE_KEYS
        )
        print(f"delta vs {base['tracker']}: {deltas}")


def main(argv=None) -> int:
    try:
        inv = parse_and_validate(argv)
        if inv.command == "compare":
            _print_compare(compare(inv.compare_paths))
            return 0
        return run_batch(inv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (IoError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except (TooFewPoints, DegenerateSegment, OutOfRange, OffRoad, SingularGeometry) as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return 4
    except (SingularInnovation, BadTransitionMatrix) as exc:
        print(f"tracking error: {exc}", file=sys.stderr)
        return 5
    except SchemaMismatch as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return 7
    except BeamTrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
