"""Positive-weight quadrature on the reference triangle and reference edge.

The reference triangle has vertices (0, 0), (1, 0), (0, 1) (area 1/2);
the reference edge is [0, 1].  Triangle rules are fully symmetric with all
points strictly inside; the tables were produced by
``tools/gen_triangle_rules.py`` and are stored in orbit form.  Degrees
without a tabulated symmetric rule fall back to a collapsed (conical
product) Gauss-Jacobi rule, which also has positive weights and interior
points.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 10

# degree -> orbits; s3: (w,), s21: (w, a) -> (a, a, 1-2a), s111: (w, a, b)
_ORBITS = {
    1: {"s3": [(0.5,)], "s21": [], "s111": []},
    2: {"s3": [], "s21": [(0.16666666666666666, 0.16666666666666669)], "s111": []},
    3: {"s3": [], "s21": [(0.07395841249307006, 0.11702154164199453),
                          (0.0927082541735966, 0.4456278733059367)], "s111": []},
    4: {"s3": [], "s21": [(0.054975871827661095, 0.091576213509771),
                          (0.11169079483900557, 0.4459484909159649)], "s111": []},
    5: {"s3": [(0.11249999999999898,)],
        "s21": [(0.06296959027241358, 0.10128650732345633),
                (0.06619707639425343, 0.4701420641051146)], "s111": []},
    6: {"s3": [],
        "s21": [(0.02542245318510164, 0.06308901449149928),
                (0.05839313786318088, 0.24928674517091706)],
        "s111": [(0.04142553780919207, 0.3103524510337761, 0.053145049844825744)]},
    7: {"s3": [],
        "s21": [(0.05241376947587569, 0.2325868964783707),
                (0.026123734953811567, 0.06440955228503933),
                (0.018873989469619594, 0.4131213693857011)],
        "s111": [(0.034627586383679916, 0.04357702575740416, 0.3124152202762298)]},
    8: {"s3": [(0.07215780383889445,)],
        "s21": [(0.0475458171336415, 0.45929258829272457),
                (0.016229248811599387, 0.05054722831703149),
                (0.05160868526736267, 0.17056930775176)],
        "s111": [(0.013615157087215819, 0.7284923929554064, 0.00839477740995082)]},
    9: {"s3": [(0.04856789814097903,)],
        "s21": [(0.0156673501138974, 0.4896825191983825),
                (0.03891377050226435, 0.4370895914923562),
                (0.03982386946359882, 0.18820353561884479),
                (0.012788837829358655, 0.044729513394469345)],
        "s111": [(0.021641769688610566, 0.741198598784477, 0.03683841205466062)]},
}


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray   # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    exact_degree: int

    def __len__(self):
        return len(self.weights)


def _expand(orbits):
    bary, wts = [], []
    for (w,) in orbits["s3"]:
        bary.append((1 / 3, 1 / 3, 1 / 3))
        wts.append(w)
    for w, a in orbits["s21"]:
        b = 1 - 2 * a
        bary += [(a, a, b), (a, b, a), (b, a, a)]
        wts += [w] * 3
    for w, a, b in orbits["s111"]:
        c = 1 - a - b
        bary += [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
        wts += [w] * 6
    bary = np.array(bary)
    # reference coordinates (x, y) = (lambda_1, lambda_2)
    return bary[:, 1:].copy(), np.array(wts)


def _conical(degree):
    """Collapsed Gauss-Jacobi rule exact for total degree ``degree``."""
    n = degree // 2 + 1
    s, ws = np.polynomial.legendre.leggauss(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    # x = (1 + s)(1 - t)/4, y = (1 + t)/2 maps [-1, 1]^2 onto the triangle
    S, T = np.meshgrid(s, t, indexing="ij")
    x = (1 + S) * (1 - T) / 4
    y = (1 + T) / 2
    w = np.outer(ws, wt) / 8
    return np.column_stack([x.ravel(), y.ravel()]), w.ravel()


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Symmetric rule on the reference triangle exact for total degree ``degree``."""
    degree = int(degree)
    if not 1 <= degree <= MAX_DEGREE:
        raise QuadratureError(f"triangle rules exist for degrees 1..{MAX_DEGREE}, got {degree}")
    if degree in _ORBITS:
        pts, wts = _expand(_ORBITS[degree])
    else:
        pts, wts = _conical(degree)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of degree ``degree``."""
    degree = int(degree)
    if not 1 <= degree <= MAX_DEGREE:
        raise QuadratureError(f"edge rules exist for degrees 1..{MAX_DEGREE}, got {degree}")
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    pts = (0.5 * (x + 1.0))[:, None]
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, 2 * n - 1)
