"""
Straightening the polar metric
==============================

dr^2 + r^2 dt^2 is the Euclidean metric in disguise.  The analyzer should
call it flat, and the constructor should rediscover r cos t and r sin t up
to a rigid motion.
"""

import numpy as np

from flatform import BilinearFormField, Chart, construct, flatness_verdict

chart = Chart(["r", "t"], [[1, 2], [0, 1]], base=[1, 0])
B = BilinearFormField(chart, [["1", "0"], ["0", "r^2"]])

rep = flatness_verdict(B)
print("verdict:", rep["verdict"], "case:", rep["case"])
for c in rep["conditions"]:
    print(f"  {c['name']:<16} {c['value']:.2e}  (tol {c['tol']:.0e})")

# the chart is built from parallel covectors; based at (1, 0) the first
# flat function starts out as dx = cos t dr - r sin t dt
res = construct(B)
print("kind:", res.kind, " certified deviation: %.1e" % res.max_deviation)
print("metric in the new chart:\n", np.round(res.C, 10))

X = chart.grid(5)
Y = res.chart_map(X)
cart = np.stack([X[:, 0] * np.cos(X[:, 1]), X[:, 0] * np.sin(X[:, 1])], axis=1)

# compare with the cartesian chart after the best rigid motion
Yc, Cc = Y - Y.mean(0), cart - cart.mean(0)
U, _, Vt = np.linalg.svd(Yc.T @ Cc)
print("distance to r(cos t, sin t) after alignment: %.1e" % np.max(np.abs(Yc @ U @ Vt - Cc)))
