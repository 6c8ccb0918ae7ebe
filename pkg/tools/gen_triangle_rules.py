"""Offline generator for the symmetric triangle rules tabulated in quadrature.py.

Solves the moment equations for fully symmetric orbit structures with
random restarts and keeps the first solution with positive weights and
interior points.  Run once; paste the printed tables.
"""

import sys
from math import factorial

import numpy as np
from scipy.optimize import least_squares

# degree -> (n_S3, n_S21, n_S111)
STRUCTURES = {
    1: (1, 0, 0),
    2: (0, 1, 0),
    3: (0, 2, 0),
    4: (0, 2, 0),
    5: (1, 2, 0),
    6: (0, 2, 1),
    7: (0, 3, 1),
    8: (1, 3, 1),
    9: (1, 4, 1),
    10: (1, 2, 3),
}


def expand(params, structure):
    n3, n21, n111 = structure
    pts, wts = [], []
    i = 0
    for _ in range(n3):
        w = params[i]
        i += 1
        pts.append((1 / 3, 1 / 3, 1 / 3))
        wts.append(w)
    for _ in range(n21):
        w, a = params[i:i + 2]
        i += 2
        b = 1 - 2 * a
        for p in [(a, a, b), (a, b, a), (b, a, a)]:
            pts.append(p)
            wts.append(w)
    for _ in range(n111):
        w, a, b = params[i:i + 3]
        i += 3
        c = 1 - a - b
        for p in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]:
            pts.append(p)
            wts.append(w)
    return np.array(pts), np.array(wts)


def residual(params, structure, degree):
    pts, wts = expand(params, structure)
    x, y = pts[:, 1], pts[:, 2]
    res = []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            exact = factorial(i) * factorial(j) / factorial(i + j + 2)
            res.append(np.sum(wts * x**i * y**j) - exact)
    return np.array(res)


def solve(degree, seed=0, tries=20000):
    structure = STRUCTURES[degree]
    n3, n21, n111 = structure
    rng = np.random.default_rng(seed)
    npts = n3 + 3 * n21 + 6 * n111
    for _ in range(tries):
        p0 = []
        p0 += [0.5 / npts] * n3
        for _ in range(n21):
            p0 += [0.5 / npts, rng.uniform(0.01, 0.49)]
        for _ in range(n111):
            a = rng.uniform(0.01, 0.6)
            p0 += [0.5 / npts, a, rng.uniform(0.01, 1 - a - 0.01)]
        sol = least_squares(residual, p0, args=(structure, degree),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if np.max(np.abs(sol.fun)) > 2e-16:
            continue
        pts, wts = expand(sol.x, structure)
        if np.all(wts > 0) and np.all(pts > 0):
            return sol.x, pts, wts
    raise RuntimeError(f"no rule found for degree {degree}")


def orbits(params, structure):
    n3, n21, n111 = structure
    out = {"s3": [], "s21": [], "s111": []}
    i = 0
    for _ in range(n3):
        out["s3"].append((float(params[i]),))
        i += 1
    for _ in range(n21):
        out["s21"].append(tuple(float(v) for v in params[i:i + 2]))
        i += 2
    for _ in range(n111):
        out["s111"].append(tuple(float(v) for v in params[i:i + 3]))
        i += 3
    return out


if __name__ == "__main__":
    degrees = [int(a) for a in sys.argv[1:]] or list(STRUCTURES)
    for d in degrees:
        x, pts, wts = solve(d)
        print(f"    {d}: {orbits(x, STRUCTURES[d])!r},", flush=True)
