"""Command-line interface.

Subcommands: validate, psi, local-rate, path-cost, quasipotential,
simulate, stationary, tail, verify.  Every subcommand prints its resolved
configuration (defaults included) as ``# key = value`` comment lines for
auditability, and the same header is prepended to CSV outputs.  Exit
codes: 0 pass, 1 verification fail, 2 invalid input, 3 internal error.

Numbers in CSV output are formatted with %.10g; path CSVs use full
precision (%.17g) so that a re-ingested path reproduces its action
exactly.
"""

from __future__ import annotations

import argparse
import gzip
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .cramer import renewal_rate_cost, routing_cost
from .errors import GJNetError, InvalidInputError, ModelError, SolverError
from .local_rates import GatingWindow, solve_local_rate, zero_face
from .network import NetworkSpec, load_spec, spec_to_dict, validate
from .path_action import (PiecewiseLinearPath, action, action_delayed,
                          path_from_rows, path_to_rows)
from .quasipotentials import quasipotential
from .simulator import (default_burn_in, default_spacing, estimate_tail,
                        simulate, stationary_sample)

_FMT = "%.10g"
_PATH_FMT = "%.17g"


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"cannot parse vector {text!r}") from exc


def _parse_targets(text: str) -> list[np.ndarray]:
    return [_parse_vector(part) for part in text.split(";") if part.strip()]


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise InvalidInputError(f"cannot parse integer list {text!r}") from exc


def _header_lines(config: dict) -> list[str]:
    return [f"# {key} = {value}" for key, value in config.items()]


def _print_header(config: dict) -> None:
    for line in _header_lines(config):
        print(line)


def _open_out(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "wt", encoding="utf-8", newline="")
    return open(path, "w", encoding="utf-8", newline="")


def _write_csv(path, config: dict, columns: list[str], rows, fmt: str = _FMT) -> None:
    with _open_out(path) as fh:
        for line in _header_lines(config):
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for cell in row:
                if isinstance(cell, (float, np.floating)):
                    cells.append(fmt % cell)
                else:
                    cells.append(str(cell))
            fh.write(",".join(cells) + "\n")


def read_path_csv(path) -> PiecewiseLinearPath:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line[0].isalpha() or line.startswith('"'):
                continue   # header row
            rows.append([float(x) for x in line.split(",")])
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    return path_from_rows(np.array(rows))


def write_path_csv(path, pl_path: PiecewiseLinearPath, config: dict) -> None:
    cols = ["t"] + [f"x_{k + 1}" for k in range(pl_path.K)]
    _write_csv(path, config, cols, path_to_rows(pl_path), fmt=_PATH_FMT)


def spec_digest(spec: NetworkSpec) -> str:
    blob = json.dumps(spec_to_dict(spec), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# --- verification workflow ------------------------------------------------

@dataclass
class TargetResult:
    x: np.ndarray
    value: float = math.nan
    slope: float = math.nan
    slope_stderr: float = math.nan
    rel_err: float = math.nan
    passed: bool = False
    skipped: str = ""


@dataclass
class VerificationReport:
    digest: str
    tolerance: float
    targets: list[TargetResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(t.passed or t.skipped for t in self.targets)


def run_verify(spec: NetworkSpec, targets, n_grid, tolerance: float = 0.15,
               seed: int = 0, samples_per_n: int = 100_000, n_starts: int = 16,
               max_segments: int | None = None) -> VerificationReport:
    """Validate, compute the quasipotential per target, estimate the
    empirical decay slope per target, and compare at the given relative
    tolerance.  Deterministic given the seed (target i uses the derived
    stream seed ``seed * 1000003 + i``)."""
    report_v = validate(spec)
    if not report_v.ok:
        raise ModelError(f"network specification invalid: {report_v.first_failure}")
    out = VerificationReport(digest=spec_digest(spec), tolerance=tolerance)
    for i, x in enumerate(targets):
        x = np.asarray(x, dtype=float)
        tr = TargetResult(x=x)
        if np.max(np.abs(x)) == 0.0:
            tr.skipped = "target is the origin: V = 0, no decay rate to verify"
            out.targets.append(tr)
            continue
        qp = quasipotential(spec, x, n_starts=n_starts, seed=seed,
                            max_segments=max_segments)
        tr.value = qp.value
        tail = estimate_tail(spec, x, n_grid, samples_per_n=samples_per_n,
                             seed=(seed * 1_000_003 + i) % (2 ** 63))
        tr.slope = tail.slope
        tr.slope_stderr = tail.slope_stderr
        if math.isfinite(tail.slope) and qp.value > 0:
            tr.rel_err = abs(tail.slope - qp.value) / qp.value
            tr.passed = tr.rel_err <= tolerance
        out.targets.append(tr)
    return out


# --- subcommand handlers ----------------------------------------------------

def _cmd_validate(args) -> int:
    spec = load_spec(args.spec)
    config = {"command": "validate", "spec": args.spec, "digest": spec_digest(spec)}
    _print_header(config)
    report = validate(spec)
    print(report)
    return 0 if report.ok else 1


def _cmd_psi(args) -> int:
    spec = load_spec(args.spec)
    config = {"command": "psi", "spec": args.spec, "kind": args.kind,
              "station": args.station, "rate": args.rate, "row": args.row}
    _print_header(config)
    k = args.station
    if k < 0 or k >= spec.K:
        raise InvalidInputError(f"station index {k} out of range for K = {spec.K}")
    if args.kind == "arrival":
        value = renewal_rate_cost(spec.arrival[k], float(args.rate))
    elif args.kind == "service":
        value = renewal_rate_cost(spec.service[k], float(args.rate))
    else:
        if args.row is None:
            raise InvalidInputError("routing cost needs --row")
        value = routing_cost(spec.routing[k], _parse_vector(args.row))
    print(_FMT % value)
    return 0


def _cmd_local_rate(args) -> int:
    spec = load_spec(args.spec)
    x = _parse_vector(args.x)
    y = _parse_vector(args.y)
    gating = None
    if args.t is not None:
        u = _parse_vector(args.u) if args.u else np.zeros(spec.K)
        v = _parse_vector(args.v) if args.v else np.zeros(spec.K)
        gating = GatingWindow.at(u, v, float(args.t))
    config = {"command": "local-rate", "spec": args.spec, "x": args.x, "y": args.y,
              "u": args.u, "v": args.v, "t": args.t, "strict_gating": args.strict_gating}
    _print_header(config)
    sol = solve_local_rate(spec, y, empty=zero_face(x), gating=gating,
                           strict_gating=args.strict_gating)
    record = {
        "value": sol.value,
        "arrival_rates": sol.a.tolist(),
        "departure_rates": sol.d.tolist(),
        "flows": sol.flows.tolist(),
        "empty_stations": sorted(sol.empty),
        "duality_gap": sol.duality_gap,
        "balance_residual": sol.balance_residual,
    }
    text = json.dumps(record, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _cmd_path_cost(args) -> int:
    spec = load_spec(args.spec)
    path = read_path_csv(args.path)
    q0 = _parse_vector(args.q0) if args.q0 else None
    config = {"command": "path-cost", "spec": args.spec, "path": args.path,
              "q0": args.q0, "u": args.u, "v": args.v}
    _print_header(config)
    if args.u or args.v:
        u = _parse_vector(args.u) if args.u else np.zeros(spec.K)
        v = _parse_vector(args.v) if args.v else np.zeros(spec.K)
        value = action_delayed(spec, path, u, v, q0=q0)
    else:
        value = action(spec, path, q0=q0)
    print(_FMT % value)
    return 0


def _cmd_quasipotential(args) -> int:
    spec = load_spec(args.spec)
    x = _parse_vector(args.x)
    config = {"command": "quasipotential", "spec": args.spec, "x": args.x,
              "segments": args.segments, "starts": args.starts, "seed": args.seed,
              "horizon": args.horizon}
    _print_header(config)
    res = quasipotential(spec, x, max_segments=args.segments, n_starts=args.starts,
                         seed=args.seed, t_horizon=args.horizon)
    print(f"value = {_FMT % res.value}")
    print(f"segments_used = {res.segments_used}")
    print(f"multistart_spread = {_FMT % res.multistart_spread}")
    if res.spread_warning:
        print("warning: multistart spread above 5% of the best value; "
              "consider more starts or segments")
    if args.path_out:
        write_path_csv(args.path_out, res.optimal_path, config)
        print(f"path written to {args.path_out}")
    return 0


def _cmd_simulate(args) -> int:
    spec = load_spec(args.spec)
    config = {"command": "simulate", "spec": args.spec, "horizon": args.horizon,
              "seed": args.seed, "sample_dt": args.sample_dt,
              "events_out": args.events_out, "max_events": args.max_events}
    _print_header(config)
    sample_times = None
    if args.sample_dt:
        sample_times = np.arange(0.0, args.horizon + 0.5 * args.sample_dt, args.sample_dt)
    res = simulate(spec, args.horizon, args.seed, sample_times=sample_times,
                   collect_events=bool(args.events_out), max_events=args.max_events)
    print(f"events = {res.n_events}")
    print("final_queue = " + ",".join(str(v) for v in res.final.queue))
    print("busy_fraction = " + ",".join(
        _FMT % (b / args.horizon) for b in res.final.busy_time))
    if args.events_out:
        rows = zip(res.events.times, res.events.stations, res.events.kinds,
                   res.events.dests)
        _write_csv(args.events_out, config, ["time", "station", "kind", "dest"], rows)
        print(f"event log written to {args.events_out}")
    if args.out and res.samples is not None:
        cols = (["t"] + [f"q_{k + 1}" for k in range(spec.K)]
                + [f"u_{k + 1}" for k in range(spec.K)]
                + [f"w_{k + 1}" for k in range(spec.K)]
                + [f"b_{k + 1}" for k in range(spec.K)])
        rows = np.hstack([res.samples.times[:, None], res.samples.queue,
                          res.samples.excess_arrival, res.samples.residual_service,
                          res.samples.busy_time])
        _write_csv(args.out, config, cols, rows)
        print(f"samples written to {args.out}")
    return 0


def _cmd_stationary(args) -> int:
    spec = load_spec(args.spec)
    burn_in = args.burn_in if args.burn_in is not None else default_burn_in(spec)
    spacing = args.spacing if args.spacing is not None else default_spacing(spec)
    config = {"command": "stationary", "spec": args.spec, "samples": args.samples,
              "burn_in": burn_in, "spacing": spacing, "seed": args.seed}
    _print_header(config)
    samples = stationary_sample(spec, args.samples, burn_in=burn_in,
                                spacing=spacing, seed=args.seed)
    cols = (["t"] + [f"q_{k + 1}" for k in range(spec.K)]
            + [f"u_{k + 1}" for k in range(spec.K)]
            + [f"w_{k + 1}" for k in range(spec.K)])
    rows = np.hstack([samples.times[:, None], samples.queue,
                      samples.excess_arrival, samples.residual_service])
    if args.out:
        _write_csv(args.out, config, cols, rows)
        print(f"samples written to {args.out}")
    else:
        print(f"collected {samples.queue.shape[0]} samples; "
              "mean queue = " + ",".join(_FMT % m for m in samples.queue.mean(axis=0)))
    return 0


def _cmd_tail(args) -> int:
    spec = load_spec(args.spec)
    x = _parse_vector(args.x)
    n_grid = _parse_int_list(args.n_grid)
    burn_in = args.burn_in if args.burn_in is not None else default_burn_in(spec)
    spacing = args.spacing if args.spacing is not None else default_spacing(spec)
    config = {"command": "tail", "spec": args.spec, "x": args.x,
              "n_grid": args.n_grid, "samples": args.samples,
              "burn_in": burn_in, "spacing": spacing, "seed": args.seed}
    _print_header(config)
    est = estimate_tail(spec, x, n_grid, samples_per_n=args.samples, seed=args.seed,
                        burn_in=burn_in, spacing=spacing)
    for w in est.warnings:
        print(f"warning: {w}")
    print(f"slope = {_FMT % est.slope}")
    print(f"slope_stderr = {_FMT % est.slope_stderr}")
    rows = [(int(n), p, lo, hi, int(h), int(c))
            for n, p, lo, hi, h, c in zip(est.n_grid, est.p_hat, est.ci_lo,
                                          est.ci_hi, est.hits, est.censored)]
    if args.out:
        hdr = dict(config)
        hdr["slope"] = _FMT % est.slope
        hdr["slope_stderr"] = _FMT % est.slope_stderr
        _write_csv(args.out, hdr, ["n", "p_hat", "ci_lo", "ci_hi", "hits", "censored"],
                   rows)
        print(f"estimates written to {args.out}")
    else:
        for row in rows:
            print(",".join(str(c) if isinstance(c, int) else _FMT % c for c in row))
    return 0


def _cmd_verify(args) -> int:
    spec = load_spec(args.spec)
    targets = _parse_targets(args.targets)
    n_grid = _parse_int_list(args.n_grid)
    config = {"command": "verify", "spec": args.spec, "digest": spec_digest(spec),
              "targets": args.targets, "n_grid": args.n_grid,
              "tolerance": args.tolerance, "samples": args.samples,
              "starts": args.starts, "seed": args.seed}
    _print_header(config)
    report = run_verify(spec, targets, n_grid, tolerance=args.tolerance,
                        seed=args.seed, samples_per_n=args.samples,
                        n_starts=args.starts)
    rows = []
    for tr in report.targets:
        label = "skip" if tr.skipped else ("pass" if tr.passed else "FAIL")
        print(f"[{label}] x = {tr.x.tolist()}  V = {_FMT % tr.value}  "
              f"slope = {_FMT % tr.slope}  rel_err = {_FMT % tr.rel_err}"
              + (f"  ({tr.skipped})" if tr.skipped else ""))
        rows.append((";".join(_FMT % c for c in tr.x), tr.value, tr.slope,
                     tr.slope_stderr, tr.rel_err, int(tr.passed), tr.skipped))
    if args.out:
        _write_csv(args.out, config,
                   ["target", "V", "slope", "slope_stderr", "rel_err", "passed",
                    "skipped"], rows)
        print(f"report written to {args.out}")
    return 0 if report.passed else 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gjnet",
                                description="Large-deviations toolkit for generalized "
                                            "Jackson networks")
    sub = p.add_subparsers(dest="command", required=True)

    def with_spec(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--spec", required=True, help="network JSON file")
        return sp

    with_spec("validate", "check every model assumption")

    sp = with_spec("psi", "renewal or routing cost at one station")
    sp.add_argument("--kind", choices=["arrival", "service", "routing"], required=True)
    sp.add_argument("--station", type=int, default=0, help="0-based station index")
    sp.add_argument("--rate", type=float, help="stream rate (arrival/service kinds)")
    sp.add_argument("--row", help="comma-separated routing frequencies (routing kind)")

    sp = with_spec("local-rate", "local rate at a position and velocity")
    sp.add_argument("--x", required=True)
    sp.add_argument("--y", required=True)
    sp.add_argument("--u", help="arrival delays (with --t)")
    sp.add_argument("--v", help="service delays (with --t)")
    sp.add_argument("--t", type=float, help="elapsed time for the delayed variant")
    sp.add_argument("--strict-gating", action="store_true",
                    help="pin gated-off variables to zero")
    sp.add_argument("--out", help="write the JSON record here")

    sp = with_spec("path-cost", "action of a piecewise-linear path CSV")
    sp.add_argument("--path", required=True, help="CSV rows (t, x_1..x_K)")
    sp.add_argument("--q0", help="required start position")
    sp.add_argument("--u", help="arrival delays for the delayed action")
    sp.add_argument("--v", help="service delays for the delayed action")

    sp = with_spec("quasipotential", "cheapest path action from the origin")
    sp.add_argument("--x", required=True)
    sp.add_argument("--segments", type=int, default=None)
    sp.add_argument("--starts", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--horizon", type=float, default=None)
    sp.add_argument("--path-out", help="write the optimal path CSV here")

    sp = with_spec("simulate", "event-driven simulation")
    sp.add_argument("--horizon", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sample-dt", type=float, default=None)
    sp.add_argument("--events-out", help="event log CSV (use .gz to compress)")
    sp.add_argument("--out", help="sampled-state CSV")
    sp.add_argument("--max-events", type=int, default=50_000_000)

    sp = with_spec("stationary", "sample the stationary state")
    sp.add_argument("--samples", type=int, required=True)
    sp.add_argument("--burn-in", type=float, default=None)
    sp.add_argument("--spacing", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="samples CSV")

    sp = with_spec("tail", "Monte Carlo tail probabilities across the scaling")
    sp.add_argument("--x", required=True)
    sp.add_argument("--n-grid", required=True, help="comma-separated scales")
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--burn-in", type=float, default=None)
    sp.add_argument("--spacing", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="estimates CSV")

    sp = with_spec("verify", "end-to-end check: quasipotential vs Monte Carlo slope")
    sp.add_argument("--targets", required=True,
                    help="semicolon-separated targets, e.g. '1;0.5,0.5'")
    sp.add_argument("--n-grid", default="5,10,15,20")
    sp.add_argument("--tolerance", type=float, default=0.15)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--starts", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="report CSV")
    return p


_HANDLERS = {
    "validate": _cmd_validate,
    "psi": _cmd_psi,
    "local-rate": _cmd_local_rate,
    "path-cost": _cmd_path_cost,
    "quasipotential": _cmd_quasipotential,
    "simulate": _cmd_simulate,
    "stationary": _cmd_stationary,
    "tail": _cmd_tail,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except (InvalidInputError, ModelError, FileNotFoundError) as exc:
        print(f"gjnet: invalid input: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"gjnet: solver failure: {exc} {exc.diagnostics}", file=sys.stderr)
        return 3
    except GJNetError as exc:
        print(f"gjnet: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
