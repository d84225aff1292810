"""
A degenerate metric with one flat function
==========================================

g = 4 (x dx + y dy)^2 has rank one away from the origin.  Its kernel is the
rotation field, and the one flat function is x^2 + y^2 up to an affine change.
At the origin the rank drops, and the analyzer refuses to guess.
"""

import numpy as np

from flatform import BilinearFormField, Chart, flat_chart_symmetric, flatness_verdict

entries = [["4*x^2", "4*x*y"], ["4*x*y", "4*y^2"]]

near = BilinearFormField(Chart(["x", "y"], [[-1, 1], [-1, 1]]), entries)
rep = flatness_verdict(near)
print("box around the origin:", rep["verdict"], "-", rep["reason"])
print("  rank of g on the grid:", rep["rank_profile"]["rank_g"])

away = BilinearFormField(Chart(["x", "y"], [[1, 2], [1, 2]]), entries)
print("box [1,2]^2:", flatness_verdict(away)["verdict"])

res = flat_chart_symmetric(away)
X = away.chart.grid(6)
f = res.functions(X)[:, 0]
q = X[:, 0] ** 2 + X[:, 1] ** 2
a, b = np.polyfit(q, f, 1)
print("flat functions:", res.diagnostics["m"], " coefficient matrix c =", res.c.tolist())
print("f = %.6f (x^2 + y^2) + %.6f,  max misfit %.1e" % (a, b, np.max(np.abs(a * q + b - f))))
print("completed chart certified to %.1e" % res.max_deviation)
