"""
Roundtrip through a generated problem
=====================================

gen pushes a constant form through a random polynomial change of
coordinates, so a flat chart is known in closed form.  We analyze the result,
build a chart from scratch and check both charts by pullback.
"""

import time

from flatform import ExprChartMap, construct, flatness_verdict
from flatform.cli import generate, problem_from_dict, verify_report

for seed, (n, rank_g, rank_w) in enumerate([(2, 1, 2), (3, 2, 0), (3, 0, 2), (4, 1, 4)]):
    data = generate(seed, n, rank_g, rank_w, 0.2)
    prob = problem_from_dict(data)
    t0 = time.perf_counter()
    rep = flatness_verdict(prob.form, tol=prob.tol)
    res = construct(prob.form, prob.tol)
    known = verify_report(prob, ExprChartMap(prob.chart, data["ground_truth"]["components"]))
    print(f"n={n} rank g={rank_g} rank w={rank_w}: {rep['verdict']:<5} case {rep['case']:<10} "
          f"built {res.kind:<18} {res.max_deviation:.1e}  known chart {known['max_deviation']:.1e}  "
          f"({time.perf_counter() - t0:.1f} s)")
