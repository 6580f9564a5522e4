"""``eris-lab``: run scenario files and write JSON reports plus CSV traces.

Exit codes: 0 success, 1 malformed input, 2 channel validation failure,
3 tolerance or iteration failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import matcore, structure
from ._rng import rng_for
from .driver import IIDDriver
from .eris import MAX_CESARO_TERMS, Eris, _checkpoints, cesaro_monte_carlo
from .errors import ConvergenceError, ErisError
from .fields import RandomField
from .matcore import DEFAULT_TOL, ToleranceProfile
from .scenarios import Scenario, ScenarioError, list_builtins, resolve

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_MALFORMED, EXIT_INVALID, EXIT_TOLERANCE = 0, 1, 2, 3

TOL_PROFILES = {
    "default": DEFAULT_TOL,
    "strict": ToleranceProfile(eig_tol=1e-11, rank_tol=1e-11, psd_tol=1e-12, fixpoint_tol=1e-11),
    "loose": ToleranceProfile(eig_tol=1e-7, rank_tol=1e-7, psd_tol=1e-8, fixpoint_tol=1e-7),
}
#: Symbols of a lazily generated channel family that ``validate`` checks.
FAMILY_VALIDATE_SAMPLES = 8


def resolve_tolerance(ref: Optional[str]) -> ToleranceProfile:
    """Named profile or path to a JSON object of overrides."""
    if ref is None:
        return DEFAULT_TOL
    if ref in TOL_PROFILES:
        return TOL_PROFILES[ref]
    path = Path(ref)
    if not path.exists():
        raise ScenarioError(f"--tol-profile {ref!r}: not a profile name {sorted(TOL_PROFILES)} or a file")
    try:
        return ToleranceProfile.from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{ref}: invalid JSON ({exc})") from None


# --- JSON helpers ----------------------------------------------------------------------------------


def _plain(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON-native types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def write_trace(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "value", "residual"])
        for step, value, residual in rows:
            w.writerow([int(step), f"{float(value):.17g}", f"{float(residual):.17g}"])


# --- state / observable specs --------------------------------------------------------------------


def _random_state(d: int, rng) -> np.ndarray:
    G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def _random_observable(d: int, rng) -> np.ndarray:
    G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return 0.5 * (G + G.conj().T)


class Runner:
    """Runs the analyses of one scenario on a resolved process."""

    def __init__(self, scenario: Scenario, e: Eris, tol: ToleranceProfile, seed: int, threads: int, max_iters: int):
        self.scenario = scenario
        self.e = e
        self.tol = tol
        self.seed = seed
        self.threads = threads
        self.max_iters = max_iters
        self.traces = {}
        self._decomposition = None

    def params(self, analysis: str) -> dict:
        p = self.scenario.params.get(analysis, {})
        if not isinstance(p, dict):
            raise ScenarioError(f"params.{analysis} must be an object")
        return p

    def rng(self, *keys):
        return rng_for(self.seed, *keys)

    def matrix_or_field(self, spec, role: str, rng):
        """Resolve a state/observable spec to a matrix or (exact backend) a field."""
        d = self.e.dim
        if isinstance(spec, str):
            if spec == "maximally_mixed":
                return np.eye(d) / d
            if spec == "identity":
                return np.eye(d)
            if spec.startswith("pure"):
                k = int(spec[5:] or 0) if spec.startswith("pure:") else int(spec[4:] or 0)
                if not 0 <= k < d:
                    raise ScenarioError(f"{role}: basis index {k} out of range")
                m = np.zeros((d, d))
                m[k, k] = 1.0
                return m
            if spec == "random":
                if self.e.is_exact:
                    gen = _random_state if role == "state" else _random_observable
                    return RandomField(np.stack([gen(d, rng) for _ in range(self.e.n)]))
                return (_random_state if role == "state" else _random_observable)(d, rng)
            if spec in ("recurrent", "transient"):
                P_r, P_t = structure.recurrent_projection(self.e, self.tol)
                return P_r if spec == "recurrent" else P_t
            raise ScenarioError(f"{role}: unknown spec {spec!r}")
        if isinstance(spec, dict) and "field" in spec:
            return RandomField.from_json(spec["field"])
        if isinstance(spec, dict) and "matrix" in spec:
            return matcore.matrix_from_json(spec["matrix"])
        if isinstance(spec, (dict, list)):
            return matcore.matrix_from_json(spec)
        raise ScenarioError(f"{role}: cannot interpret {spec!r}")

    def as_field(self, value) -> RandomField:
        if isinstance(value, RandomField):
            return value
        return RandomField.constant(value, self.e.n)

    def decomposition(self) -> structure.Decomposition:
        if self._decomposition is None:
            self._decomposition = structure.minimal_decomposition(self.e, self.tol)
        return self._decomposition

    # analyses ------------------------------------------------------------------------------------

    def validate(self) -> dict:
        e = self.e
        if e.family is not None:
            symbols = list(range(FAMILY_VALIDATE_SAMPLES))
        else:
            symbols = sorted(e.channels)
        reports = {str(s): e.channel(s).validate(self.tol).to_dict() for s in symbols}
        ok = all(r["passed"] for r in reports.values())
        return {"ok": ok, "channels": reports, "sampled": e.family is not None}

    def decompose(self) -> dict:
        e, tol = self.e, self.tol
        dec = self.decomposition()
        out = dec.to_json()
        out["is_minimal"] = [structure.is_minimal(e, b.projection, tol) for b in dec.blocks]
        out["dual_reducing_complement"] = [
            structure.is_reducing_dual(e, e.identity_field() - b.projection, tol) for b in dec.blocks
        ]
        out["fixed_space_dim"] = structure.fixed_space(e, tol).dim_complex
        out["ok"] = self._residuals_ok(dec.residuals) and all(out["is_minimal"])
        return out

    def _residuals_ok(self, res: dict) -> bool:
        limit = 10 * self.tol.fixpoint_tol
        return (
            res["orthogonality"] <= 1e-9
            and res["sum_to_recurrent"] <= 1e-9
            and all(x <= limit for x in res["cocycle"])
            and all(x <= 1e-6 for x in res["support"])
        )

    def cesaro(self) -> dict:
        p = self.params("cesaro")
        M = int(p.get("M", 1000))
        state = self.matrix_or_field(p.get("state", "maximally_mixed"), "state", self.rng(1))
        target = p.get("target")
        target_m = None if target is None else self.matrix_or_field(target, "target", self.rng(2))
        if self.e.is_exact:
            return self._cesaro_exact(self.as_field(state), M)
        R = int(p.get("R", 1))
        res = cesaro_monte_carlo(
            self.e, state, M, R, seed=self.seed, threads=self.threads, target=target_m
        )
        self.traces["cesaro"] = res.trace
        out = {
            "backend": "monte_carlo",
            "M": M,
            "R": R,
            "mean": matcore.matrix_to_json(res.mean),
            "std_err": res.std_err,
            "ok": True,
        }
        if target_m is not None:
            out["trace_distance_to_target"] = res.trace_distance_to(target_m)
            if "threshold" in p:
                out["ok"] = out["trace_distance_to_target"] <= float(p["threshold"])
        return out

    def _cesaro_exact(self, state: RandomField, M: int) -> dict:
        e = self.e
        limit = e.cesaro_exact(state, self.max_iters)
        T = e.block_transfer().matrix
        marks = set(_checkpoints(M).tolist())
        v = state.vector()
        acc = np.zeros_like(v)
        rows = []
        for N in range(1, M + 1):
            v = T @ v
            acc += v
            if N in marks:
                A = RandomField.from_vector(acc / N, e.n, e.dim)
                rows.append((N, 0.5 * A.distance(limit, 1), (e.step_L(A) - A).max_norm(1)))
        self.traces["cesaro"] = rows
        idem = (e.cesaro_exact(limit) - limit).max_norm(1)
        return {
            "backend": "exact",
            "M": M,
            "limit": limit.to_json(),
            "limit_mean_trace": limit.mean_trace().real,
            "final_trace_distance": rows[-1][1],
            "fixed_point_residual": (e.step_L(limit) - limit).max_norm(1),
            "idempotence_residual": idem,
            "ok": idem <= 10 * self.tol.fixpoint_tol,
        }

    def cocycle_check(self) -> dict:
        p = self.params("cocycle_check")
        limit = 10 * self.tol.fixpoint_tol
        out = {}
        if "state" in p:
            rho = self.as_field(self.matrix_or_field(p["state"], "state", self.rng(3)))
            out["state_residual"] = self.e.check_cocycle(rho)
        residuals = [self.e.check_cocycle(b.stationary_state) for b in self.decomposition().blocks]
        out["block_residuals"] = residuals
        out["limit"] = limit
        out["ok"] = all(r <= limit for r in residuals)
        return out

    def ergodic_average(self) -> dict:
        e, p = self.e, self.params("ergodic_average")
        M = int(p.get("M", 1000))
        state = self.as_field(self.matrix_or_field(p.get("state", "maximally_mixed"), "state", self.rng(4)))
        obs = self.as_field(self.matrix_or_field(p.get("observable", "identity"), "observable", self.rng(5)))
        limit = float(e.cesaro_exact(state, self.max_iters).mean_inner(obs).real)
        rows = structure.ergodic_average_trace(e, state, obs, M, _checkpoints(M))
        self.traces["ergodic_average"] = [(N, v, abs(v - limit)) for N, v in rows]
        value = rows[-1][1]
        out = {"M": M, "value": value, "cesaro_limit": limit, "deviation": abs(value - limit), "ok": True}
        dec = self.decomposition()
        if dec.dynamically_ergodic:
            rho = dec.blocks[0].stationary_state
            out["stationary_prediction"] = float(state.mean_trace().real * rho.mean_inner(obs).real)
        return out

    def schaefer(self) -> dict:
        e, tol = self.e, self.tol
        dec = self.decomposition()
        rng = self.rng(6)
        rows = []
        for i, b in enumerate(dec.blocks):
            X = _corner_state(b.projection, rng)
            rows.append(
                {
                    "block": i,
                    "schaefer": structure.schaefer_test(e, b.projection, X, tol),
                    "is_minimal": structure.is_minimal(e, b.projection, tol),
                }
            )
        if len(dec.blocks) > 1:
            X = _corner_state(dec.blocks[0].projection, rng)
            rows.append(
                {
                    "block": "recurrent",
                    "schaefer": structure.schaefer_test(e, dec.recurrent, X, tol),
                    "is_minimal": structure.is_minimal(e, dec.recurrent, tol),
                }
            )
        return {"tests": rows, "ok": all(r["schaefer"] == r["is_minimal"] for r in rows)}

    def iid_decompose(self) -> dict:
        e, p = self.e, self.params("iid_decompose")
        if not isinstance(e.driver, IIDDriver):
            raise ScenarioError("iid_decompose needs an i.i.d. driver")
        if e.family is not None:
            k = int(p.get("samples", 50))
            channels = [e.channel(s) for s in range(k)]
            weights = np.full(k, 1.0 / k)
        else:
            channels = [e.channel(s) for s in range(e.driver.alphabet_size)]
            weights = e.driver.probabilities
        dec = structure.iid_deterministic_decomposition(channels, weights, self.tol)
        out = dec.to_json()
        out["channels_used"] = len(channels)
        out["ok"] = self._residuals_ok(dec.residuals)
        return out


def _corner_state(P: RandomField, rng) -> RandomField:
    """Random positive field with support exactly ``P`` (full rank in each corner)."""
    vals = []
    for Pw in P.values:
        B = matcore.projection_basis(Pw)
        r = B.shape[1]
        G = rng.standard_normal((r, r)) + 1j * rng.standard_normal((r, r))
        Y = G @ G.conj().T + np.eye(r)
        vals.append(B @ Y @ B.conj().T / np.trace(Y).real)
    return RandomField(np.stack(vals))


# --- running ----------------------------------------------------------------------------------------


def run_scenario(
    scenario: Scenario,
    out_dir: Path,
    tol: ToleranceProfile = DEFAULT_TOL,
    seed: Optional[int] = None,
    threads: int = 1,
    max_iters: int = MAX_CESARO_TERMS,
) -> int:
    """Run every analysis of ``scenario`` and write ``report.json`` (+ traces) into ``out_dir``."""
    start = time.perf_counter()
    seed = scenario.seed if seed is None else seed
    report = {
        "scenario": scenario.to_json(),
        "tolerance": tol.to_dict(),
        "flags": {"seed": seed, "threads": threads, "max_iters": max_iters},
        "results": {},
    }
    code = EXIT_OK
    runner = None
    try:
        e = scenario.build_eris(tol)
        runner = Runner(scenario, e, tol, seed, threads, max_iters)
        validation = runner.validate()
        if "validate" in scenario.analyses or not validation["ok"]:
            report["results"]["validate"] = validation
        if not validation["ok"]:
            code = EXIT_INVALID
        else:
            if e.is_exact:
                e.cesaro_projector(max_iters)
            for name in scenario.analyses:
                if name == "validate":
                    continue
                result = getattr(runner, name)()
                report["results"][name] = result
                if not result.get("ok", True):
                    code = EXIT_TOLERANCE
    except ConvergenceError as exc:
        report["error"] = str(exc)
        code = EXIT_TOLERANCE
    except (ErisError, ValueError, KeyError, TypeError) as exc:
        report["error"] = str(exc)
        code = EXIT_MALFORMED
    report["exit_code"] = code
    report["status"] = {0: "ok", 1: "malformed", 2: "invalid", 3: "tolerance"}[code]
    report["wall_time"] = time.perf_counter() - start

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(_plain(report), sort_keys=True, indent=2) + "\n")
    if runner is not None and runner.traces:
        primary = "cesaro" if "cesaro" in runner.traces else next(iter(runner.traces))
        write_trace(out_dir / "trace.csv", runner.traces[primary])
        for name, rows in runner.traces.items():
            write_trace(out_dir / f"trace_{name}.csv", rows)
    return code


def _cmd_run(args) -> int:
    tol = resolve_tolerance(args.tol_profile)
    scenarios = [resolve(ref) for ref in args.scenario]
    out = Path(args.out)
    many = len(scenarios) > 1

    def job(sc):
        target = out / sc.name if many else out
        # replicas use the thread pool only when there is a single scenario
        return run_scenario(sc, target, tol, args.seed, 1 if many else args.threads, args.max_iters)

    if many and args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            codes = list(pool.map(job, scenarios))
    else:
        codes = [job(sc) for sc in scenarios]
    for sc, code in zip(scenarios, codes):
        print(f"{sc.name}: exit {code}")
    return max(codes)


def _cmd_list(args) -> int:
    for name, what in list_builtins():
        print(f"{name:22s} {what}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    tol = resolve_tolerance(args.tol_profile)
    sc = resolve(args.scenario)
    e = sc.build_eris(tol)
    report = Runner(sc, e, tol, sc.seed, 1, MAX_CESARO_TERMS).validate()
    for sym, rep in report["channels"].items():
        status = "ok" if rep["passed"] else "FAIL"
        print(f"channel {sym}: {status} (tp residual {rep['tp_residual']:.3g}, choi min eig {rep['choi_min_eig']:.3g})")
    return EXIT_OK if report["ok"] else EXIT_INVALID


class _Parser(argparse.ArgumentParser):
    """Usage errors are malformed input (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_MALFORMED, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eris-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run scenario files or builtin scenario names")
    run.add_argument("scenario", nargs="+")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--tol-profile", default=None, help=f"one of {sorted(TOL_PROFILES)} or a JSON file")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--max-iters", type=int, default=MAX_CESARO_TERMS, help="cap on averaged Cesaro terms")
    run.set_defaults(func=_cmd_run)

    lst = sub.add_parser("list", help="list builtin scenarios")
    lst.set_defaults(func=_cmd_list)

    val = sub.add_parser("validate", help="check that every channel is CPTP")
    val.add_argument("scenario")
    val.add_argument("--tol-profile", default=None)
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except (ErisError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
