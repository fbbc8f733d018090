"""Command-line driver.

``lsmrkit solve`` reads a Matrix Market file, runs LSMR, LSQR or both in
lockstep, streams a CSV trace and prints a JSON summary.
``lsmrkit generate`` writes a seeded synthetic problem.

Exit codes: 0 converged (S1, S2, breakdown, zero rhs or a machine-precision
stop), 2 condition limit, 3 iteration limit, 1 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backerr import dense_minnorm_solve, optimal_backward_error, stewart_e1
from .gk import ReorthMode
from .linop import AugmentedOperator, ScalingError, column_unit_scale, to_dense
from .lsmr import IterationRecord, SolveOptions, SolveResult, StopReason, lsmr_solve
from .lsqr import LockstepRecord, lsqr_solve, run_lockstep
from .mmio import MatrixMarketError, read_matrix_market, read_vector, write_matrix_market, write_vector
from .problems import as_csr, make_problem

EXIT_OK, EXIT_USAGE, EXIT_COND, EXIT_MAXITER = 0, 1, 2, 3

ESTIMATE_COLUMNS = ["normr_est", "normAr_est", "normx_est", "normA_est", "cond_est"]
DIAGNOSTIC_COLUMNS = ["normr_true", "normAr_true", "lemma31_resid", "e1", "e2", "mu_tilde"]


@dataclass
class CliConfig:
    matrix_path: Optional[str] = None
    rhs_path: Optional[str] = None
    rhs_mode: str = "file"
    solver: str = "lsmr"
    lam: float = 0.0
    atol: float = 1e-6
    btol: float = 1e-6
    conlim: float = 1e8
    max_iter: Optional[int] = None
    reorth: str = "none"
    scale: bool = False
    trace_path: Optional[str] = None
    solution_path: Optional[str] = None
    diagnostics: bool = False
    # generate
    seed: int = 0
    rows: int = 20
    cols: int = 10
    cond: float = 1e3
    rank: Optional[int] = None
    consistent: bool = False
    matrix_out: Optional[str] = None
    rhs_out: Optional[str] = None


class UsageError(Exception):
    pass


def exit_code(reason: StopReason) -> int:
    if reason is StopReason.S3_COND_LIMIT:
        return EXIT_COND
    if reason is StopReason.MAX_ITER:
        return EXIT_MAXITER
    return EXIT_OK


def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".17g")


class _DiagnosticContext:
    """Dense quantities for the E1 and mu~ columns (desk-scale problems only)."""

    def __init__(self, A, b: np.ndarray, lam: float):
        op = AugmentedOperator(A, lam) if lam else A
        self.A = to_dense(op)
        self.b = np.concatenate((b, np.zeros(A.ncols))) if lam else b
        x_hat = dense_minnorm_solve(self.A, self.b)
        self.r_hat = self.b - self.A @ x_hat

    def e1_mu(self, x: np.ndarray) -> tuple[Optional[float], Optional[float]]:
        if not np.any(x):
            return None, None
        r = self.b - self.A @ x
        return stewart_e1(x, r, self.r_hat), optimal_backward_error(self.A, self.b, x)


def _load(config: CliConfig):
    if not config.matrix_path:
        raise UsageError("a matrix file is required")
    A = read_matrix_market(config.matrix_path)
    if config.rhs_mode == "ones":
        b = np.ones(A.nrows)
    elif config.rhs_mode in ("file", "from-matrix-objective"):
        if not config.rhs_path:
            raise UsageError(f"rhs mode {config.rhs_mode!r} needs --rhs")
        b = read_vector(config.rhs_path)
        if config.rhs_mode == "from-matrix-objective":
            A = A.transpose()
    else:
        raise UsageError(f"unknown rhs mode {config.rhs_mode!r}")
    if b.shape != (A.nrows,):
        raise UsageError(f"rhs has {b.size} entries but the matrix has {A.nrows} rows")
    return A, b


def _options(config: CliConfig) -> SolveOptions:
    return SolveOptions(atol=config.atol, btol=config.btol, conlim=config.conlim, lam=config.lam,
                        max_iter=config.max_iter, reorth=ReorthMode.parse(config.reorth),
                        diagnostics=config.diagnostics)


def _summary(solver: str, res: SolveResult) -> dict:
    return {"solver": solver, "reason": str(res.reason), "iterations": res.iterations,
            "normr": res.norm_r, "normAr": res.norm_atr, "normx": res.norm_x,
            "normA": res.norm_a, "cond": res.cond_a}


def run_solve(config: CliConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    if config.solver not in ("lsmr", "lsqr", "both-lockstep"):
        raise UsageError(f"unknown solver {config.solver!r}")
    opts = _options(config)
    A, b = _load(config)
    report = None
    if config.scale:
        A, b, report = column_unit_scale(A, b)
    diag = _DiagnosticContext(A, b, opts.lam) if config.diagnostics else None

    trace_fh = open(config.trace_path, "w", newline="", encoding="ascii") if config.trace_path else None
    writer = csv.writer(trace_fh, lineterminator="\n") if trace_fh else None
    try:
        start = time.perf_counter()
        if config.solver == "both-lockstep":
            sink = _lockstep_sink(writer, trace_fh, diag) if writer else None
            res, res_q = run_lockstep(A, b, opts, sink)
        else:
            sink = _single_sink(writer, trace_fh, diag) if writer else None
            solve = lsmr_solve if config.solver == "lsmr" else lsqr_solve
            res, res_q = solve(A, b, opts, sink), None
        wall = time.perf_counter() - start
    finally:
        if trace_fh:
            trace_fh.close()

    x = report.unscale(res.x) if report else res.x
    if config.solution_path:
        write_vector(config.solution_path, x)
    summary = _summary("lsmr" if res_q else config.solver, res)
    if res_q is not None:
        summary["lsqr"] = _summary("lsqr", res_q)
    summary["wall_seconds"] = wall
    stdout.write(json.dumps(summary) + "\n")
    return exit_code(res.reason)


def _single_sink(writer, fh, diag):
    header = ["k"] + ESTIMATE_COLUMNS + (DIAGNOSTIC_COLUMNS if diag else [])
    writer.writerow(header)
    fh.flush()

    def sink(rec: IterationRecord):
        row = [str(rec.k)] + [_fmt(v) for v in (rec.norm_r_est, rec.norm_atr_est, rec.norm_x_est,
                                                rec.norm_a_est, rec.cond_est)]
        if diag:
            e1, mu = diag.e1_mu(rec.x)
            row += [_fmt(v) for v in (rec.norm_r_true, rec.norm_atr_true, rec.lemma31_residual,
                                      e1, rec.e2, mu)]
        writer.writerow(row)
        fh.flush()

    return sink


def _lockstep_sink(writer, fh, diag):
    header = ["k"]
    for name in ("lsmr", "lsqr"):
        header += [f"{name}_{c}" for c in ESTIMATE_COLUMNS]
    header += ["e2_lsmr", "e2_lsqr"]
    if diag:
        for name in ("lsmr", "lsqr"):
            header += [f"{name}_normr_true", f"{name}_normAr_true", f"{name}_mu_tilde"]
    writer.writerow(header)
    fh.flush()

    def est(rec):
        if rec is None:
            return [""] * len(ESTIMATE_COLUMNS)
        return [_fmt(v) for v in (rec.norm_r_est, rec.norm_atr_est, rec.norm_x_est,
                                  rec.norm_a_est, rec.cond_est)]

    def e2(rec):
        if rec is None:
            return ""
        return _fmt(rec.norm_atr_est / rec.norm_r_est if rec.norm_r_est > 0 else 0.0)

    def sink(row: LockstepRecord):
        out = [str(row.k)] + est(row.lsmr) + est(row.lsqr) + [e2(row.lsmr), e2(row.lsqr)]
        if diag:
            for rec in (row.lsmr, row.lsqr):
                if rec is None:
                    out += ["", "", ""]
                else:
                    out += [_fmt(rec.norm_r_true), _fmt(rec.norm_atr_true), _fmt(diag.e1_mu(rec.x)[1])]
        writer.writerow(out)
        fh.flush()

    return sink


def run_generate(config: CliConfig) -> int:
    if not config.matrix_out or not config.rhs_out:
        raise UsageError("generate needs --matrix-out and --rhs-out")
    prob = make_problem(config.seed, config.rows, config.cols, config.cond, config.rank, config.consistent)
    comment = (f"seed={config.seed} cond={config.cond:g} rank={config.rank if config.rank is not None else 'full'}"
               f" consistent={config.consistent}")
    write_matrix_market(config.matrix_out, as_csr(prob.A), comment=comment)
    write_vector(config.rhs_out, prob.b)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # exit code 2 is reserved for the condition-limit stop
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lsmrkit", description="Sparse least squares with LSMR and LSQR.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve a least-squares problem from a Matrix Market file")
    s.add_argument("matrix", help="Matrix Market file with A")
    s.add_argument("--rhs", dest="rhs_path", help="right-hand side file, one value per line")
    s.add_argument("--rhs-mode", choices=["file", "ones", "from-matrix-objective"], default=None,
                   help="'from-matrix-objective' solves with A transposed and b read from --rhs")
    s.add_argument("--solver", choices=["lsmr", "lsqr", "both-lockstep"], default="lsmr")
    s.add_argument("--lambda", dest="lam", type=float, default=0.0, help="damping parameter")
    s.add_argument("--atol", type=float, default=1e-6)
    s.add_argument("--btol", type=float, default=1e-6)
    s.add_argument("--conlim", type=float, default=1e8)
    s.add_argument("--max-iter", type=_positive_int, default=None)
    s.add_argument("--reorth", default="none", help="none|v|u|both|local:<L>|restart:<L>")
    s.add_argument("--scale", action="store_true", help="scale columns of A and b to unit norm first")
    s.add_argument("--trace", dest="trace_path", help="CSV trace output")
    s.add_argument("--solution", dest="solution_path", help="solution output, one value per line")
    s.add_argument("--diagnostics", action="store_true",
                   help="add true norms and backward errors to the trace (dense, desk-scale only)")

    g = sub.add_parser("generate", help="write a seeded synthetic problem")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rows", type=_positive_int, default=20)
    g.add_argument("--cols", type=_positive_int, default=10)
    g.add_argument("--cond", type=float, default=1e3)
    g.add_argument("--rank", type=int, default=None)
    g.add_argument("--consistent", action="store_true")
    g.add_argument("--matrix-out", required=True)
    g.add_argument("--rhs-out", required=True)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    fields = {k: v for k, v in vars(args).items() if k != "command"}
    if args.command == "solve":
        fields["matrix_path"] = fields.pop("matrix")
        if fields["rhs_mode"] is None:
            fields["rhs_mode"] = "file" if fields["rhs_path"] else "ones"
    config = CliConfig(**fields)
    try:
        if args.command == "solve":
            return run_solve(config)
        return run_generate(config)
    except (UsageError, OSError, MatrixMarketError, ScalingError, ValueError) as exc:
        print(f"lsmrkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
