"""
A metric and an area form at once
=================================

B = dx^2 + h(x) dx^dy with h = 1 + x^2.  The metric dx^2 is flat and so is
the area form on its own, but a single chart making both constant has to
keep x and stretch y by h(x).  The closed-form answer is (x, y h(x)); the
constructor finds one numerically through the Hamiltonian flow of x.
"""

import numpy as np

from flatform import BilinearFormField, Chart, ExprChartMap, flatness_verdict, joint_flat_chart, verify_flat_chart

chart = Chart(["x", "y"], [[-1, 1], [-1, 1]])
B = BilinearFormField(chart, [["1", "1 + x^2"], ["-(1 + x^2)", "0"]])

rep = flatness_verdict(B)
print("verdict:", rep["verdict"], "case:", rep["case"])
for name in ("parallel1", "parallelPg"):
    c = next(c for c in rep["conditions"] if c["name"] == name)
    print(f"  {name:<10} {c['value']:.1e}")

X = chart.grid(7)
closed = verify_flat_chart(B, ExprChartMap(chart, ["x", "y*(1 + x^2)"]), X)
print("closed-form chart deviation: %.1e" % closed["max_deviation"])

res = joint_flat_chart(B)
print("constructed chart deviation: %.1e" % res.max_deviation)
print("components in the constructed chart:\n", np.round(res.C, 8))
Y = res.chart_map(X)
print("first coordinate minus x: %.1e" % np.ptp(Y[:, 0] - X[:, 0]))
