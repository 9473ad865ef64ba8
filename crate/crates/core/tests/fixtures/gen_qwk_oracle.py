# Regenerates qwk_oracle.json with scikit-learn as the reference.
import json

import numpy as np
from sklearn.metrics import cohen_kappa_score

rng = np.random.default_rng(20261016)
cases = []
for _ in range(100):
    n = int(rng.integers(2, 7))
    m = rng.integers(0, 15, size=(n, n))
    if rng.random() < 0.3:
        m += np.diag(rng.integers(5, 40, size=n))
    if m.sum() == 0:
        m[0, 0] = 1
    y_true, y_pred = [], []
    for i in range(n):
        for j in range(n):
            y_true += [i] * int(m[i, j])
            y_pred += [j] * int(m[i, j])
    k = cohen_kappa_score(y_true, y_pred, labels=list(range(n)), weights="quadratic")
    cases.append({"confusion": m.tolist(), "qwk": float(k)})

with open("qwk_oracle.json", "w") as f:
    json.dump({"source": "sklearn.metrics.cohen_kappa_score(weights='quadratic')", "cases": cases}, f, indent=1)
