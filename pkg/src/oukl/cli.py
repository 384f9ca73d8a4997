"""Batch front end: ``oukl --config run.json --suite <name> --out report.json``.

A config is a JSON object::

    {
      "seed": 0,
      "suite": "recurrence",
      "model": {"N": 2, "B": [[0, -1], [1, 0]], "Q": [[1, 0], [0, 1]]},
      "p": 5,
      "quadrature": {"scheme": "tensor-grid", "n_slices": 48, "n_per_slice": 24},
      "mc": {"n_paths": 2000, "step": 0.001, "horizon": 10.0},
      "params": {...suite specific...},
      "outputs": {"report": "report.json", "csv": "rows.csv"}
    }

Only ``seed``, ``suite`` and ``model.B`` are required (``--seed``/``--suite``
override the file).  Exit codes: 0 all checks pass, 1 a check failed,
2 config error, 3 internal error.  Diagnostics for codes 2 and 3 go to stderr
as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import InvalidInputError
from .group_core import DriftModel, GroupPoint
from .harnack import (
    exponential_gap_threshold,
    harnack_constant,
    harnack_verify,
    kernel_lower_bound,
    kernel_upper_bound,
    liouville_limit_demo,
    loglog_slope,
    scaling_exponent,
    test_family,
)
from .mvf import OnionSpec, QuadratureConfig, exactness_check, onion_volume_weight_check, random_specs
from .onion_geometry import analytic_theta, two_onion_sweep
from .ou_stochastic import (
    OUModel,
    classify,
    excessivity_check,
    hitting_probability,
    occupation_time,
    sample_path,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3
SUITES = ("mvf-check", "onion-theta", "harnack", "liouville", "recurrence", "simulate")
ANALYTIC_SUITES = ("mvf-check", "onion-theta", "harnack", "liouville")

ANCHOR_MVF = "mean-value formula on onions (normalization with u = 1)"
ANCHOR_MVF_EXACT = "mean-value formula on onions (exactness for solutions)"
ANCHOR_THETA = "two-onion inclusion lemma"
ANCHOR_KERNEL = "kernel bounds and their scaling in r"
ANCHOR_HARNACK = "global Harnack inequality on the paraboloid P(z0)"
ANCHOR_LIOUVILLE = "one-side Liouville theorem: limit at t -> -infinity"
ANCHOR_KALMAN = "Kalman rank condition"
ANCHOR_HR = "condition (HR)"
ANCHOR_INTEGRAL = "integral test: int_1^inf det(Q_t)^(-1/2) dt = infinity"
ANCHOR_RECURRENCE = "recurrence equivalence theorem for OU processes"
ANCHOR_PATH = "OU SDE with exact Gaussian transitions"
ANCHOR_HITTING = "hitting probability phi_O(x) = P(tau_O < infinity)"
ANCHOR_OCCUPATION = "expected occupation time / potential U1_A"
ANCHOR_EXCESSIVE = "excessivity P_r phi <= phi"


class ConfigError(Exception):
    """A malformed config; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


@dataclass
class RunConfig:
    seed: int
    suite: str
    B: np.ndarray
    Q: np.ndarray | None
    p: int = 5
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    mc: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    report_path: str | None = None
    csv_path: str | None = None
    raw: dict = field(default_factory=dict)

    @property
    def drift(self) -> DriftModel:
        return DriftModel(self.B, self.Q)

    def echo(self) -> dict:
        return {
            "seed": self.seed,
            "suite": self.suite,
            "model": {"N": int(self.B.shape[0]), "B": self.B.tolist(),
                      "Q": None if self.Q is None else self.Q.tolist()},
            "p": self.p,
            "quadrature": {"scheme": self.quadrature.scheme, "n_slices": self.quadrature.n_slices,
                           "n_per_slice": self.quadrature.n_per_slice},
            "mc": dict(self.mc),
            "params": dict(self.params),
        }


# --- serialization ------------------------------------------------------------------


def _float_token(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    s = format(v, ".17g")
    return s if any(c in s for c in ".en") else s + ".0"


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits (round-trip exact)."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float_token(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist(), indent, _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, bool, np.number)) or v is None for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical(report: dict) -> str:
    """The report without timing fields, serialized; equal for identical runs."""
    return to_json({k: v for k, v in report.items() if k != "timing"})


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_float_token(float(v)).strip('"') if isinstance(v, (float, np.floating)) else v
                        for v in row])


# --- config parsing -------------------------------------------------------------------------


def _matrix(value, name: str) -> np.ndarray:
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ConfigError(name, "must be a non-empty list of rows")
    width = {len(r) for r in value}
    if len(width) != 1 or width.pop() != len(value):
        raise ConfigError(name, "must be square (every row as long as the number of rows)")
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(name, "entries must be numbers") from None
    if not np.all(np.isfinite(M)):
        raise ConfigError(name, "entries must be finite")
    return M


def _int(d: dict, key: str, name: str, default=None, lo=None):
    v = d.get(key, default)
    if v is None:
        raise ConfigError(name, "is required")
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(name, "must be an integer")
    if lo is not None and v < lo:
        raise ConfigError(name, f"must be >= {lo}")
    return v


def _float(d: dict, key: str, name: str, default=None, positive=False):
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(name, "must be a finite number")
    if positive and not v > 0:
        raise ConfigError(name, "must be positive")
    return float(v)


def parse_config(raw: dict, *, seed=None, suite=None, out=None, csv_path=None) -> RunConfig:
    """Validate a raw config dict (plus command-line overrides) into a RunConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    suite = suite if suite is not None else raw.get("suite")
    if suite not in SUITES:
        raise ConfigError("suite", f"must be one of {list(SUITES)}, got {suite!r}")
    seed = seed if seed is not None else raw.get("seed")
    if seed is None:
        raise ConfigError("seed", "is required (no wall-clock seeding)")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")

    model = raw.get("model")
    if not isinstance(model, dict):
        raise ConfigError("model", "must be an object with at least B")
    if "B" not in model:
        raise ConfigError("model.B", "is required")
    B = _matrix(model["B"], "model.B")
    if "N" in model and model["N"] != B.shape[0]:
        raise ConfigError("model.N", f"is {model['N']} but model.B is {B.shape[0]}x{B.shape[0]}")
    Q = None
    if model.get("Q") is not None:
        Q = _matrix(model["Q"], "model.Q")
        if Q.shape != B.shape:
            raise ConfigError("model.Q", f"must have the shape of model.B {B.shape}")
        try:
            DriftModel(B, Q)
        except InvalidInputError as exc:
            raise ConfigError("model.Q", str(exc)) from None
    if suite in ANALYTIC_SUITES:
        if np.max(np.abs(B + B.T)) > 1e-12:
            raise ConfigError("model.B", f"suite {suite!r} needs an antisymmetric B")
        if Q is not None and not np.array_equal(Q, np.eye(B.shape[0])):
            raise ConfigError("model.Q", f"suite {suite!r} needs Q = I")

    p = _int(raw, "p", "p", default=5, lo=1)
    qd = raw.get("quadrature", {})
    if not isinstance(qd, dict):
        raise ConfigError("quadrature", "must be an object")
    try:
        quad = QuadratureConfig(
            qd.get("scheme", "tensor-grid"),
            _int(qd, "n_slices", "quadrature.n_slices", 48, 1),
            _int(qd, "n_per_slice", "quadrature.n_per_slice", 24, 1),
            seed,
        )
    except InvalidInputError as exc:
        raise ConfigError("quadrature.scheme", str(exc)) from None
    mcd = raw.get("mc", {})
    if not isinstance(mcd, dict):
        raise ConfigError("mc", "must be an object")
    mc = {
        "n_paths": _int(mcd, "n_paths", "mc.n_paths", 2000, 1),
        "step": _float(mcd, "step", "mc.step", 1e-3, positive=True),
        "horizon": _float(mcd, "horizon", "mc.horizon", 10.0, positive=True),
    }
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params", "must be an object")
    outputs = raw.get("outputs", {})
    if not isinstance(outputs, dict):
        raise ConfigError("outputs", "must be an object")
    return RunConfig(seed, suite, B, Q, p, quad, mc, dict(params),
                     out if out is not None else outputs.get("report"),
                     csv_path if csv_path is not None else outputs.get("csv"), raw)


# --- suites --------------------------------------------------------------------------------


def _record(name, anchor, value, tolerance, passed) -> dict:
    return {"name": name, "anchor": anchor, "value": value, "tolerance": tolerance,
            "pass": bool(passed)}


def _families(drift: DriftModel, kinds) -> list:
    out = []
    for kind in kinds:
        try:
            out.append(test_family(drift, kind))
        except InvalidInputError:
            continue  # e.g. no exponential solutions when ker B = 0
    return out


def cmd_mvf_check(cfg: RunConfig):
    drift = cfg.drift
    prm = cfg.params
    tol = float(prm.get("tolerance", 2e-3))
    records = []
    for p in prm.get("p_values", [cfg.p]):
        for r in prm.get("r_values", [0.1, 1.0, 10.0]):
            rep = onion_volume_weight_check(OnionSpec(GroupPoint.origin(drift.dim), r, p, drift),
                                            cfg.quadrature)
            records.append(_record(f"normalization N={drift.dim} p={p} r={r:g}", ANCHOR_MVF,
                                   rep.deviation, tol, rep.deviation <= tol))
    n_pairs = int(prm.get("n_pairs", 4))
    kinds = prm.get("families", ["constant", "quadratic", "exponential", "fundamental"])
    for fam in _families(drift, kinds):
        for u in fam.members:
            specs = random_specs(drift, cfg.p, n_pairs, seed=cfg.seed, floor=u.domain_floor)
            reps = [exactness_check(u, s, cfg.quadrature, tol) for s in specs]
            worst = max(reps, key=lambda rr: rr.abs_error / rr.tolerance)
            records.append(_record(f"exactness {u.label}", ANCHOR_MVF_EXACT, worst.abs_error,
                                   worst.tolerance, all(rr.passed for rr in reps)))
    return records, None


def cmd_onion_theta(cfg: RunConfig):
    drift = cfg.drift
    prm = cfg.params
    r_grid = prm.get("r_grid", [1e-2, 0.1, 1.0, 10.0, 100.0])
    k = int(prm.get("k", 16))
    reps = two_onion_sweep(r_grid, drift, cfg.p, k, seed=cfg.seed, tol=float(prm.get("tol", 1e-3)))
    theta_a = analytic_theta(drift.dim, cfg.p)
    records = []
    for r in r_grid:
        sub = [rep for rep in reps if rep.r == r]
        th = max(rep.theta_empirical for rep in sub)
        ok = th <= theta_a and all(rep.inclusion_verified for rep in sub)
        records.append(_record(f"theta_empirical r={r:g}", ANCHOR_THETA, th, theta_a, ok))
    return records, None


def cmd_harnack(cfg: RunConfig):
    drift = cfg.drift
    prm = cfg.params
    p = cfg.p
    r_grid = prm.get("r_grid", [0.1, 1.0, 10.0])
    n_z, n_zeta = int(prm.get("n_z", 8)), int(prm.get("n_zeta", 2000))
    slope_tol = float(prm.get("slope_tolerance", 0.05))
    a = scaling_exponent(drift.dim, p)
    records = []
    lows = [kernel_lower_bound(r, p, drift, n_z, n_zeta, cfg.seed).extreme for r in r_grid]
    highs = [kernel_upper_bound(r, p, drift, n_z, n_zeta, cfg.seed).extreme for r in r_grid]
    for label, ext in (("lower", lows), ("upper", highs)):
        s = loglog_slope(r_grid, ext)
        records.append(_record(f"kernel {label} bound slope", ANCHOR_KERNEL, s, slope_tol,
                               abs(s - a) <= slope_tol))
    C = harnack_constant(drift, p, r_grid, n_z, n_zeta, cfg.seed)
    records.append(_record("Harnack constant C", ANCHOR_HARNACK, C, None, math.isfinite(C)))
    z0 = GroupPoint.origin(drift.dim)
    n_samples = int(prm.get("n_samples", 10_000))
    depth = float(prm.get("depth", 50.0))
    sharp_tol = float(prm.get("sharp_tolerance", 1e-3))
    for fam in _families(drift, prm.get("families", ["exponential", "fundamental"])):
        for u in fam.members:
            rep = harnack_verify(u, z0, drift, C, n_samples, cfg.seed, depth, p)
            records.append(_record(f"sup u/u(z0) <= C: {u.label}", ANCHOR_HARNACK, rep.sup_ratio, C,
                                   rep.passed))
            if fam.kind == "exponential":
                err = abs(rep.sup_ratio - math.e)
                records.append(_record(f"sharp sup = e: {u.label}", ANCHOR_HARNACK, err, sharp_tol,
                                       err <= sharp_tol))
    return records, None


def liouville_rows(drift: DriftModel, x_values, t_grid, eps: float):
    """Run the exponential-family demo; returns records and CSV rows."""
    fams = _families(drift, ["exponential"])
    if not fams:
        raise ConfigError("model.B", "the liouville suite needs a nontrivial kernel of B")
    records, rows = [], []
    for u, b in zip(fams[0].members, _kernel_vectors(drift)):
        table = liouville_limit_demo(u, 0.0, x_values, t_grid, eps)
        for row in table.rows:
            rows.append((u.label, *row.x, row.t, row.u, row.gap))
        for x in x_values:
            thr = exponential_gap_threshold(b, x, math.log(1.0 / eps))
            gaps = [row.gap for row in table.rows if row.x == tuple(x) and row.t < thr]
            worst = max(gaps) if gaps else 0.0
            records.append(_record(f"gap below predicted threshold {thr:.6g}: {u.label} x={list(x)}",
                                   ANCHOR_LIOUVILLE, worst, eps, bool(gaps) and worst <= eps))
    return records, rows


def _kernel_vectors(drift: DriftModel):
    from scipy.linalg import null_space

    ker = null_space(drift.B, rcond=1e-10)
    return [s * ker[:, j] for j in range(ker.shape[1]) for s in (1.0, -1.0)]


def cmd_liouville(cfg: RunConfig):
    drift = cfg.drift
    prm = cfg.params
    rng = np.random.default_rng(cfg.seed)
    x_values = prm.get("x_values")
    if x_values is None:
        x_values = np.round(rng.uniform(-3.0, 3.0, size=(5, drift.dim)), 6).tolist()
    t_grid = -np.geomspace(float(prm.get("t_min", 1e-2)), float(prm.get("t_max", 1e3)),
                           int(prm.get("n_t", 400)))
    eps = float(prm.get("eps", 1e-6))
    records, rows = liouville_rows(drift, [list(map(float, x)) for x in x_values], t_grid, eps)
    header = ["member"] + [f"x{i + 1}" for i in range(drift.dim)] + ["t", "u", "gap"]
    return records, (header, rows)


def cmd_recurrence(cfg: RunConfig):
    prm = cfg.params
    model = OUModel(cfg.drift)
    v = classify(model, float(prm.get("t_max", 1e4)), int(prm.get("n_points", 64)))
    expected = prm.get("expected")
    records = [
        _record("kalman_rank", ANCHOR_KALMAN, v.kalman_ok, None, v.kalman_ok),
        _record("hr_classify", ANCHOR_HR, v.hr, None, True),
        _record("integral_test", ANCHOR_INTEGRAL, v.integral_test, None,
                v.integral_test != "inconclusive"),
        _record("integral_test exponent", ANCHOR_INTEGRAL, v.evidence.get("exponent"),
                v.evidence.get("exponent_stderr"), True),
    ]
    ok = v.verdict == expected if expected is not None else v.verdict != "unknown"
    records.append(_record("verdict", ANCHOR_RECURRENCE, v.verdict, expected, ok))
    return records, None


def _ball(prm, n):
    ball = prm.get("ball", {"center": [0.0] * n, "radius": 1.0})
    center = ball.get("center", [0.0] * n)
    if len(center) != n:
        raise ConfigError("params.ball.center", f"must have length {n}")
    radius = ball.get("radius", 1.0)
    if not isinstance(radius, (int, float)) or not radius > 0:
        raise ConfigError("params.ball.radius", "must be positive")
    return np.asarray(center, dtype=float), float(radius)


def cmd_simulate(cfg: RunConfig):
    model = OUModel(cfg.drift)
    if not model.kalman_ok:
        raise ConfigError("model.Q", "simulation needs the Kalman rank condition")
    n = model.dim
    prm = cfg.params
    mc = cfg.mc
    x0 = prm.get("x0", [2.0] + [0.0] * (n - 1))
    if len(x0) != n:
        raise ConfigError("params.x0", f"must have length {n}")
    x0 = np.asarray(x0, dtype=float)
    ball = _ball(prm, n)
    records = []
    path_dt = float(prm.get("path_step", 1e-2))
    t_grid = np.arange(int(round(float(prm.get("path_horizon", 1.0)) / path_dt)) + 1) * path_dt
    path = sample_path(model, x0, t_grid, cfg.seed)
    records.append(_record("sample_path finite", ANCHOR_PATH, len(t_grid), None,
                           bool(np.all(np.isfinite(path)))))
    hit = hitting_probability(model, x0, ball, mc["horizon"], mc["n_paths"], mc["step"], cfg.seed)
    expected = prm.get("expected_hitting")
    if expected is not None:
        lo, hi = float(expected[0]), float(expected[1])
        ok = lo <= hit.p_hat <= hi
        tol = [lo, hi]
    else:
        ok, tol = 0.0 <= hit.p_hat <= 1.0, None
    records.append(_record("hitting probability", ANCHOR_HITTING, hit.p_hat, tol, ok))
    records.append(_record("hitting probability ci95", ANCHOR_HITTING, list(hit.ci95), None, True))
    if prm.get("occupation", True):
        occ_step = float(prm.get("occupation_step", 1e-2))
        occ = occupation_time(model, x0, ball, mc["horizon"], mc["n_paths"], occ_step, cfg.seed)
        z = (occ.mean - occ.analytic) / occ.stderr if occ.stderr > 0 else 0.0
        records.append(_record("occupation time MC vs density quadrature (z-score)", ANCHOR_OCCUPATION,
                               z, 3.0, abs(z) <= 3.0))
    if prm.get("excessivity", False):
        rep = excessivity_check(model, ball, prm.get("x_grid", [x0.tolist()]),
                                prm.get("r_list", [1.0, 0.1, 0.01]), mc["horizon"],
                                int(prm.get("excessivity_paths", mc["n_paths"])), cfg.seed, mc["step"])
        worst = max(row.p_r_phi - row.phi for row in rep.rows)
        records.append(_record("P_r phi - phi (max over grid)", ANCHOR_EXCESSIVE, worst, None,
                               rep.passed))
    header = ["t"] + [f"x{i + 1}" for i in range(n)]
    return records, (header, [(float(t), *map(float, x)) for t, x in zip(t_grid, path)])


COMMANDS = {
    "mvf-check": cmd_mvf_check,
    "onion-theta": cmd_onion_theta,
    "harnack": cmd_harnack,
    "liouville": cmd_liouville,
    "recurrence": cmd_recurrence,
    "simulate": cmd_simulate,
}


def run(cfg: RunConfig) -> tuple[dict, tuple | None]:
    """Run the configured suite and assemble the report."""
    t0 = time.perf_counter()
    records, table = COMMANDS[cfg.suite](cfg)
    elapsed = time.perf_counter() - t0
    report = {
        "tool": "oukl",
        "version": __version__,
        "suite": cfg.suite,
        "config": cfg.echo(),
        "records": records,
        "pass": all(rec["pass"] for rec in records),
        "timing": {"seconds": elapsed},
    }
    return report, table


def _diagnostic(kind: str, **kw) -> None:
    print(to_json({"error": kind, **kw}, indent=0).replace("\n", ""), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oukl", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="report path (default: stdout)")
    ap.add_argument("--seed", type=int, help="root seed, overrides the config")
    ap.add_argument("--suite", choices=SUITES, help="suite to run, overrides the config")
    ap.add_argument("--csv", help="path for tabular output (liouville, simulate)")
    ap.add_argument("--version", action="version", version=f"oukl {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError("--config", f"cannot read: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
        cfg = parse_config(raw, seed=args.seed, suite=args.suite, out=args.out, csv_path=args.csv)
        report, table = run(cfg)
    except ConfigError as exc:
        _diagnostic("config", field=exc.field, message=exc.message)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        _diagnostic("internal", type=type(exc).__name__, message=str(exc))
        return EXIT_INTERNAL
    text = to_json(report) + "\n"
    if cfg.report_path:
        with open(cfg.report_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if table is not None and cfg.csv_path:
        _write_csv(cfg.csv_path, *table)
    return EXIT_OK if report["pass"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
