"""Command line: analyze, construct, verify and gen.

Problem files are TOML:

    [chart]
    names = ["x", "y"]
    box = [[1, 2], [1, 2]]
    base = [1.5, 1.5]          # optional, defaults to the box centre

    [form]
    entries = [["4*x^2", "4*x*y"], ["4*x*y", "4*y^2"]]

    [tolerances]               # optional overrides of flatform.config.Tolerances
    tol_flat = 1e-5

    [options]                  # optional
    grid_res = 7
    cert_res = 9

Reports are JSON with a ``schema_version`` field.
"""
from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import json
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from . import __version__
from . import exprcore as ex
from .config import DEFAULT, Tolerances
from .constructor import ConstructionError, UnsupportedCase, construct, verify_flat_chart
from .curvature import flatness_verdict
from .forms import BilinearFormField, Chart, ExprChartMap, SingularJacobianError

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3


class ProblemError(ValueError):
    """Invalid problem or chart file; the message names the offending location."""


@dataclass
class Problem:
    chart: Chart
    form: BilinearFormField
    tol: Tolerances
    raw: dict
    path: str | None = None


# ---------------------------------------------------------------------------
# input


def _read_table(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ProblemError(f"{path}: cannot read ({e.strerror})") from e
    if path.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ProblemError(f"{path}: line {e.lineno}: {e.msg}") from e
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ProblemError(f"{path}: {e}") from e


def problem_from_dict(data: dict, path: str | None = None) -> Problem:
    where = path or "<problem>"
    try:
        ch = data["chart"]
        names = ch["names"]
        box = ch["box"]
    except (KeyError, TypeError) as e:
        raise ProblemError(f"{where}: missing chart field {e}") from e
    try:
        chart = Chart(names, box, ch.get("base"))
    except (ValueError, TypeError) as e:
        raise ProblemError(f"{where}: chart: {e}") from e
    entries = data.get("form", {}).get("entries")
    if entries is None:
        raise ProblemError(f"{where}: missing form.entries")
    n = chart.n
    if len(entries) != n or any(len(r) != n for r in entries):
        raise ProblemError(f"{where}: form.entries must be {n}x{n}")
    parsed = []
    for i, row in enumerate(entries):
        prow = []
        for j, text in enumerate(row):
            try:
                prow.append(ex.parse(str(text), chart))
            except ex.ParseError as e:
                raise ProblemError(f"{where}: form.entries[{i}][{j}]: {e}") from e
        parsed.append(prow)
    over = dict(data.get("tolerances", {}))
    opts = data.get("options", {})
    for key in ("grid_res", "cert_res"):
        if key in opts:
            over[key] = int(opts[key])
    try:
        tol = DEFAULT.with_overrides(**over)
    except KeyError as e:
        raise ProblemError(f"{where}: {e.args[0]}") from e
    return Problem(chart, BilinearFormField(chart, parsed), tol, data, path)


def load_problem(path) -> Problem:
    return problem_from_dict(_read_table(path), str(path))


def load_chart_map(path, chart: Chart) -> ExprChartMap:
    data = _read_table(path)
    table = data.get("chart_map") or data.get("ground_truth") or data
    comps = table.get("components")
    if comps is None:
        raise ProblemError(f"{path}: missing components")
    names = table.get("names")
    if names is not None and tuple(names) != chart.names:
        raise ProblemError(f"{path}: chart map variables {names} differ from problem {list(chart.names)}")
    try:
        return ExprChartMap(chart, comps)
    except (ex.ParseError, ValueError) as e:
        raise ProblemError(f"{path}: invalid chart map: {e}") from e


# ---------------------------------------------------------------------------
# reports


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    return x


def _header(command: str, prob: Problem | None) -> dict:
    head = {"schema_version": SCHEMA_VERSION, "tool": "flatform", "tool_version": __version__,
            "command": command,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    if prob is not None:
        head["problem"] = {"names": list(prob.chart.names), "box": prob.chart.box,
                           "base": prob.chart.base, "path": prob.path}
        head["config"] = prob.tol.as_dict()
    return head


def dumps(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True)


def analyze(prob: Problem) -> dict:
    rep = _header("analyze", prob)
    rep.update(flatness_verdict(prob.form, tol=prob.tol))
    return rep


def export_chart(res, prob: Problem) -> dict:
    """Sampled forward map on the certification grid plus metadata."""
    X = prob.chart.grid(res.cert_res)
    out = {"schema_version": SCHEMA_VERSION, "kind": res.kind, "names": list(prob.chart.names),
           "base": prob.chart.base, "C": res.C, "max_deviation": res.max_deviation,
           "cert_res": res.cert_res, "grid": X, "values": res.chart_map(X),
           "diagnostics": res.diagnostics}
    if res.functions is not None and res.c is not None:
        out["flat_functions"] = res.functions(X)
        out["c"] = res.c
    return out


def construct_report(prob: Problem) -> tuple[dict, dict | None]:
    rep = analyze(prob)
    rep["command"] = "construct"
    if rep["verdict"] != "FLAT":
        rep["construction"] = {"status": "skipped", "reason": f"verdict is {rep['verdict']}"}
        return rep, None
    try:
        res = construct(prob.form, prob.tol)
    except UnsupportedCase as e:
        rep["construction"] = {"status": "unsupported", "message": str(e)}
        return rep, None
    scale = rep["scale"]
    tol = prob.tol.tol_construct * scale
    rep["construction"] = {"status": "pass" if res.max_deviation <= tol else "fail", "kind": res.kind,
                           "C": res.C, "max_deviation": res.max_deviation, "tol": tol,
                           "cert_res": res.cert_res, "diagnostics": res.diagnostics}
    if res.c is not None:
        rep["construction"]["c"] = res.c
    return rep, export_chart(res, prob)


def verify_report(prob: Problem, phi: ExprChartMap, worst: int = 10) -> dict:
    rep = _header("verify", prob)
    res = prob.tol.cert_res or None
    from .config import default_cert_res
    res = res or default_cert_res(prob.chart.n)
    X = prob.chart.grid(res)
    scale = prob.form.scale(X)
    tol = prob.tol.tol_construct * scale
    try:
        out = verify_flat_chart(prob.form, phi, X, tol=prob.tol)
    except SingularJacobianError as e:
        rep.update({"status": "fail", "reason": str(e), "tol": tol})
        return rep
    order = np.argsort(-out["per_point"])[:worst]
    rep.update({"status": "pass" if out["max_deviation"] <= tol else "fail",
                "max_deviation": out["max_deviation"], "tol": tol, "C": out["C"],
                "min_abs_det": out["min_abs_det"], "cert_res": res,
                "deviation_table": [{"point": X[i], "deviation": out["per_point"][i]} for i in order]})
    return rep


# ---------------------------------------------------------------------------
# fixture generation


class GenerationError(RuntimeError):
    pass


def _unit_upper(rng, n):
    A = np.eye(n, dtype=int) + np.triu(rng.integers(-1, 2, size=(n, n)), 1)
    perm = rng.permutation(n)
    return A[np.ix_(perm, perm)]


def _frac_matrix(M) -> list:
    return [[Fraction(int(v)) if float(v).is_integer() else Fraction(v).limit_denominator(10**6)
             for v in row] for row in np.asarray(M)]


def generate(seed: int, n: int, rank_g: int, rank_w: int, deform: float, max_tries: int = 100) -> dict:
    """A problem B = J^T C J for a constant C of the requested ranks and a
    polynomial perturbation phi of the identity, with phi as the known chart."""
    if not (0 <= rank_g <= n and 0 <= rank_w <= n) or rank_w % 2:
        raise ProblemError("infeasible ranks: need 0 <= rank_g <= n, 0 <= rank_w <= n, rank_w even")
    if rank_g + rank_w == 0:
        raise ProblemError("infeasible ranks: the form would vanish")
    if deform < 0:
        raise ProblemError("deformation must be non-negative")
    rng = np.random.default_rng(seed)
    names = [f"x{i + 1}" for i in range(n)]
    chart = Chart(names, [[-0.5, 0.5]] * n, [0.0] * n)
    A = _unit_upper(rng, n)
    S = np.zeros((n, n), dtype=int)
    signs = rng.choice([-1, 1], size=rank_g)
    signs[0:1] = 1 if rank_g else signs[0:1]
    for i in range(rank_g):
        S[i, i] = signs[i]
    Cg = A.T @ S @ A
    Bm = _unit_upper(rng, n)
    J0 = np.zeros((n, n), dtype=int)
    for a in range(rank_w // 2):
        J0[2 * a, 2 * a + 1], J0[2 * a + 1, 2 * a] = 1, -1
    Cw = Bm.T @ J0 @ Bm
    dscale = Fraction(deform).limit_denominator(1000)
    V = [ex.Var(v) for v in names]
    for attempt in range(max_tries):
        comps = []
        for i in range(n):
            terms = [V[i]]
            if dscale:
                for _ in range(2):
                    deg = int(rng.integers(2, 4))
                    idx = rng.integers(0, n, size=deg)
                    coef = dscale * Fraction(int(rng.integers(-8, 9)), 8)
                    terms.append(ex.mul(ex.Const(coef), *[V[k] for k in idx]))
            comps.append(ex.add(*terms))
        phi = ExprChartMap(chart, comps)
        if phi.min_abs_det(7) >= 0.25:
            break
    else:
        raise GenerationError(f"no invertible map after {max_tries} tries")
    J = [[ex.differentiate(c, v) for v in names] for c in comps]
    Cgf, Cwf = _frac_matrix(Cg), _frac_matrix(Cw)

    def pulled(C, i, j):
        return ex.add(*[ex.mul(ex.Const(C[a][b]), J[a][i], J[b][j])
                        for a in range(n) for b in range(n) if C[a][b] != 0])

    G = [[None] * n for _ in range(n)]
    W = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            G[i][j] = pulled(Cgf, i, j)
            G[j][i] = G[i][j]
            W[i][j] = ex.ZERO if i == j else pulled(Cwf, i, j)
            W[j][i] = ex.neg(W[i][j])
    entries = [[ex.to_string(ex.add(G[i][j], W[i][j])) for j in range(n)] for i in range(n)]
    return {
        "chart": {"names": names, "box": [[-0.5, 0.5]] * n, "base": [0.0] * n},
        "form": {"entries": entries},
        "ground_truth": {"names": names, "components": [ex.to_string(c) for c in comps],
                         "C": (np.array(Cg, float) + np.array(Cw, float)).tolist()},
        "gen": {"seed": seed, "dim": n, "rank_g": rank_g, "rank_w": rank_w, "deform": deform,
                "attempts": attempt + 1},
    }


# ---------------------------------------------------------------------------
# entry point


def _threads():
    val = os.environ.get("FLATFORM_THREADS")
    if not val:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(limits=max(1, int(val)))


def _write(text: str, path: str | None):
    if path:
        Path(path).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flatform", description="Flat coordinates for bilinear forms.")
    p.add_argument("--version", action="version", version=f"flatform {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", help="run the flatness decision procedure")
    a.add_argument("file")
    a.add_argument("--report", help="write the JSON report here instead of stdout")
    c = sub.add_parser("construct", help="analyze, then build and certify a flat chart")
    c.add_argument("file")
    c.add_argument("-o", "--output", help="write the sampled chart export (JSON)")
    c.add_argument("--report")
    v = sub.add_parser("verify", help="certify a closed-form chart against a problem")
    v.add_argument("file")
    v.add_argument("--chart", required=True)
    v.add_argument("--report")
    g = sub.add_parser("gen", help="generate a flat fixture with a known chart")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--rank-g", type=int, required=True)
    g.add_argument("--rank-w", type=int, required=True)
    g.add_argument("--deform", type=float, default=0.1)
    g.add_argument("-o", "--output", help="problem file to write (TOML); stdout if omitted")
    g.add_argument("--chart-out", help="also write the ground-truth chart here (TOML)")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _threads():
            if args.command == "gen":
                data = generate(args.seed, args.dim, args.rank_g, args.rank_w, args.deform)
                _write(tomli_w.dumps(data).rstrip("\n"), args.output)
                if args.chart_out:
                    Path(args.chart_out).write_text(tomli_w.dumps({"chart_map": data["ground_truth"]}))
                return EXIT_OK
            prob = load_problem(args.file)
            if args.command == "analyze":
                _write(dumps(analyze(prob)), args.report)
                return EXIT_OK
            if args.command == "construct":
                rep, export = construct_report(prob)
                _write(dumps(rep), args.report)
                if export is not None and args.output:
                    Path(args.output).write_text(dumps(export) + "\n")
                if rep["construction"]["status"] == "unsupported":
                    print(rep["construction"]["message"], file=sys.stderr)
                    return EXIT_INTERNAL
                return EXIT_OK
            phi = load_chart_map(args.chart, prob.chart)
            _write(dumps(verify_report(prob, phi)), args.report)
            return EXIT_OK
    except (ProblemError, ex.ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ConstructionError, ArithmeticError, RuntimeError, ValueError) as e:
        print(f"internal failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
