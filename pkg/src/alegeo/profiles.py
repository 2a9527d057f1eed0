"""U(n)-invariant radial metrics on O(-k) over CP^{n-1}.

A metric in this family is encoded by its momentum profile: with rho the
log-radial Calabi coordinate and u(rho) the Kahler potential, the momentum
coordinate is tau = u'(rho) and the profile function is phi(tau) = u''(rho).
The metric eigenvalues are tau*exp(-rho) on the base directions (multiplicity
n-1) and phi(tau)*exp(-rho) on the fiber direction, so phi > 0 on the open
manifold and phi(tau)/tau -> 1 encodes asymptotic flatness.

Curvature is driven by the log-volume function

    F = (n-1)*log(u') + log(u'') - n*rho,

whose first and second rho-derivatives give the two Ricci eigenvalues.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, interpolate, optimize

__all__ = [
    "RadialProfile",
    "CurvatureSample",
    "SignScanResult",
    "lebrun_profile",
    "flat_profile",
    "custom_profile",
    "sampled_profile",
    "bump_perturbed_profile",
    "metric_eigenvalues",
    "ricci_eigenvalues",
    "scalar_curvature",
    "ricci_sign_scan",
    "curvature_scan_rows",
    "profile_to_json",
    "profile_from_json",
]

# Curvature queries keep away from the zero-section coordinate degeneracy.
DEFAULT_ZERO_SECTION_MARGIN = 1e-6


class ProfileError(ValueError):
    """Invalid profile construction or out-of-domain query."""


@dataclass(frozen=True)
class _Kernel:
    """Closed-form profile function with derivatives in tau."""

    phi: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    d3: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RadialProfile:
    """Immutable radial metric: profile function plus reconstruction data.

    ``rho_of_tau`` is anchored so that both metric eigenvalues tend to 1 at
    the outer end of the domain (``anchor="infinity"`` for closed forms,
    ``anchor="tau_max"`` for sampled data).  The anchor only shifts rho by a
    constant and is recorded here.
    """

    n: int
    k: int
    tau_min: float
    tau_max: float
    form: str
    params: dict = field(default_factory=dict)
    anchor: str = "infinity"
    _kernel: _Kernel = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.n < 2:
            raise ProfileError(f"complex dimension n must be >= 2, got {self.n}")
        if self.k < 1:
            raise ProfileError(f"line-bundle twist k must be >= 1, got {self.k}")
        if self.tau_min < 0:
            raise ProfileError(f"tau_min must be >= 0, got {self.tau_min}")
        if self.tau_max <= self.tau_min:
            raise ProfileError("tau_max must exceed tau_min")

    # -- profile function ------------------------------------------------

    def phi(self, tau):
        tau = np.asarray(tau, dtype=float)
        self._check_domain(tau, strict=False)
        return self._kernel.phi(tau)

    def phi_d1(self, tau):
        return self._kernel.d1(np.asarray(tau, dtype=float))

    def phi_d2(self, tau):
        return self._kernel.d2(np.asarray(tau, dtype=float))

    def phi_d3(self, tau):
        return self._kernel.d3(np.asarray(tau, dtype=float))

    def _check_domain(self, tau, strict=True):
        tau = np.asarray(tau, dtype=float)
        lo = self.tau_min * (1.0 + DEFAULT_ZERO_SECTION_MARGIN) if strict else self.tau_min
        if np.any(tau < lo - 1e-15) or np.any(tau > self.tau_max * (1 + 1e-12)):
            raise ProfileError(
                f"tau out of profile domain [{lo}, {self.tau_max}]"
            )

    # -- reconstruction --------------------------------------------------

    def rho_of_tau(self, tau):
        """Calabi variable rho(tau) = int d tau / phi, anchored per ``anchor``."""
        tau = np.asarray(tau, dtype=float)
        self._check_domain(tau)
        if self.form == "flat":
            return np.log(tau)
        x = np.log(tau)
        return x + self._corr_interp()(x)

    def _corr_interp(self):
        """Interpolant of rho - log(tau) as a function of log(tau).

        The correction integrand 1/tau - 1/phi decays like 1/tau^2, so the
        cumulative quadrature on a dense log grid resolves it well; with the
        "infinity" anchor a single tail quadrature pins the outer constant so
        the metric eigenvalues tend to exactly 1.
        """
        cache = self.params.get("_corr_cache")
        if cache is None:
            # geometric clustering in tau - tau_min: 1/phi ~ 1/(k(tau-tau_min))
            # near the zero section, so uniform-in-log-tau grids misintegrate it
            if self.tau_min > 0:
                offs = np.geomspace(self.tau_min * 1e-8,
                                    self.tau_max - self.tau_min, 12001)
                grid = self.tau_min + offs
            else:
                grid = np.geomspace(1e-8, self.tau_max, 12001)
            integrand = 1.0 / grid - 1.0 / self._kernel.phi(grid)
            # corr(tau) = const + int_tau^{tau_max} integrand
            cum = integrate.cumulative_simpson(integrand, x=grid, initial=0.0)
            corr = cum[-1] - cum
            if self.anchor == "infinity":
                tail, _ = integrate.quad(
                    lambda s: 1.0 / s - 1.0 / float(self._kernel.phi(np.asarray(s))),
                    self.tau_max, np.inf, limit=200)
                corr = corr + tail
            # tau_max anchor: corr(tau_max) = 0, i.e. rho(tau_max) = log tau_max
            cache = interpolate.PchipInterpolator(np.log(grid), corr)
            self.params["_corr_cache"] = cache
        return cache

    def tau_of_rho(self, rho):
        """Inverse of rho_of_tau by bracketed root finding in log(tau)."""
        rho = np.asarray(rho, dtype=float)
        if self.form == "flat":
            return np.exp(rho)
        corr = self._corr_interp()
        scalar = rho.ndim == 0
        rhos = np.atleast_1d(rho)
        lo = self.tau_min * (1.0 + DEFAULT_ZERO_SECTION_MARGIN) if self.tau_min > 0 else 1e-8
        xlo, xhi = math.log(lo), math.log(self.tau_max)
        out = np.empty_like(rhos)
        for i, r in enumerate(rhos):
            out[i] = math.exp(optimize.brentq(
                lambda x: x + float(corr(x)) - r, xlo, xhi,
                xtol=1e-14, rtol=8.9e-16))
        return out[0] if scalar else out

    # -- background potential derivatives in rho -------------------------

    def u_derivatives(self, rho, order=4):
        """(u', u'', u''', u'''') of the background potential at rho.

        u' = tau, u'' = phi(tau); higher orders follow from the chain rule
        d/drho = phi(tau) d/dtau.  Used by the geodesic and energy modules.
        """
        tau = self.tau_of_rho(rho)
        p = self.phi(tau)
        out = [tau, p]
        if order >= 3:
            d1 = self.phi_d1(tau)
            out.append(p * d1)
        if order >= 4:
            d2 = self.phi_d2(tau)
            out.append(p * (d1 * d1 + p * d2))
        return tuple(out[:order])

    def to_json_dict(self):
        if self.form == "lebrun":
            params = {"A": self.params["A"], "B": self.params["B"],
                      "tau_max": self.tau_max}
        elif self.form == "flat":
            params = {"tau_max": self.tau_max}
        elif self.form == "samples":
            params = {"tau": list(self.params["tau"]),
                      "phi": list(self.params["phi"])}
        else:
            raise ProfileError(f"form {self.form!r} does not serialize")
        return {"n": self.n, "k": self.k, "tau_min": self.tau_min,
                "form": self.form, "params": params}


@dataclass(frozen=True)
class CurvatureSample:
    """Pointwise curvature data of a radial metric."""

    tau: float
    lambda_base: float
    lambda_fiber: float
    ric_base: float
    ric_fiber: float
    scal: float


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def lebrun_profile(k: int, tau_min: float, n: int = 2,
                   tau_max: float = 1e12) -> RadialProfile:
    """Scalar-flat family phi(tau) = tau + A + B/tau on O(-k) over CP^1.

    A and B are fixed by smooth compactification across the zero section:
    phi(tau_min) = 0 and phi'(tau_min) = k.  k = 2 with B = -tau_min^2 is the
    Ricci-flat Eguchi-Hanson case; k = 1 is the Burns case.
    """
    if n != 2:
        raise ProfileError("the tau + A + B/tau closed form is specific to n=2")
    if tau_min <= 0:
        raise ProfileError(f"tau_min must be > 0, got {tau_min}")
    A = (k - 2.0) * tau_min
    B = (1.0 - k) * tau_min ** 2
    kern = _Kernel(
        phi=lambda t: t + A + B / t,
        d1=lambda t: 1.0 - B / t ** 2,
        d2=lambda t: 2.0 * B / t ** 3,
        d3=lambda t: -6.0 * B / t ** 4,
    )
    return RadialProfile(n=n, k=k, tau_min=tau_min, tau_max=tau_max,
                         form="lebrun", params={"A": A, "B": B},
                         anchor="infinity", _kernel=kern)


def flat_profile(n: int = 2, k: int = 1, tau_max: float = 1e12) -> RadialProfile:
    """Flat cone profile phi(tau) = tau, i.e. u = exp(rho)."""
    kern = _Kernel(
        phi=lambda t: np.asarray(t, dtype=float) + 0.0,
        d1=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        d2=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        d3=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
    )
    return RadialProfile(n=n, k=k, tau_min=0.0, tau_max=tau_max,
                         form="flat", params={}, anchor="infinity",
                         _kernel=kern)


def custom_profile(n, k, tau_min, phi, d1, d2, d3, tau_max=1e12,
                   form="custom", anchor="infinity") -> RadialProfile:
    """Profile from explicit callables phi(tau) and its first three derivatives."""
    kern = _Kernel(phi=phi, d1=d1, d2=d2, d3=d3)
    return RadialProfile(n=n, k=k, tau_min=tau_min, tau_max=tau_max,
                         form=form, params={}, anchor=anchor, _kernel=kern)


def sampled_profile(n, k, tau_min, tau: Sequence[float],
                    phi: Sequence[float]) -> RadialProfile:
    """Profile from samples, via monotone cubic interpolation.

    Curvature needs two derivatives of phi, so the interpolant's analytic
    derivatives are used rather than finite differences of the data.
    """
    tau = np.asarray(tau, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if tau.ndim != 1 or tau.shape != phi.shape or tau.size < 4:
        raise ProfileError("need matching 1-d tau/phi sample arrays (>= 4 points)")
    if np.any(np.diff(tau) <= 0):
        raise ProfileError("tau samples must be strictly increasing")
    if np.any(phi[tau > tau_min] <= 0):
        raise ProfileError("phi samples must be positive above tau_min")
    interp = interpolate.PchipInterpolator(tau, phi)
    kern = _Kernel(phi=interp, d1=interp.derivative(1),
                   d2=interp.derivative(2), d3=interp.derivative(3))
    return RadialProfile(n=n, k=k, tau_min=float(tau_min),
                         tau_max=float(tau[-1]), form="samples",
                         params={"tau": tau, "phi": phi}, anchor="tau_max",
                         _kernel=kern)


def bump_perturbed_profile(base: RadialProfile, center: float, width: float,
                           amplitude: float) -> RadialProfile:
    """Base profile plus a compactly supported C^2 bump in phi.

    The bump is amplitude * (1 - ((tau-center)/width)^2)^4 on
    |tau - center| < width and zero outside; used for the mass-invariance
    check, where a compactly supported profile change must not move the
    boundary flux at large radius.
    """
    c, w, a = float(center), float(width), float(amplitude)

    def s(t):
        t = np.asarray(t, dtype=float)
        x = (t - c) / w
        inside = np.abs(x) < 1.0
        y = np.where(inside, 1.0 - x * x, 0.0)
        return a * y ** 4

    def s1(t):
        t = np.asarray(t, dtype=float)
        x = (t - c) / w
        inside = np.abs(x) < 1.0
        y = np.where(inside, 1.0 - x * x, 0.0)
        return a * 4 * y ** 3 * (-2 * x / w) * inside

    def s2(t):
        t = np.asarray(t, dtype=float)
        x = (t - c) / w
        inside = np.abs(x) < 1.0
        y = np.where(inside, 1.0 - x * x, 0.0)
        return a * (12 * y ** 2 * (2 * x / w) ** 2 - 8 * y ** 3 / w ** 2) * inside

    def s3(t):
        # d/dt of s2 / a = 12 y^2 (2x/w)^2 - 8 y^3 / w^2, with dy/dt = -2x/w
        t = np.asarray(t, dtype=float)
        x = (t - c) / w
        inside = np.abs(x) < 1.0
        y = np.where(inside, 1.0 - x * x, 0.0)
        d = (24 * y * (-2 * x / w) * (2 * x / w) ** 2
             + 12 * y ** 2 * 2 * (2 * x / w) * (2 / w ** 2)
             - 24 * y ** 2 * (-2 * x / w) / w ** 2)
        return a * d * inside

    # base._kernel.phi skips the domain check, which tail quadratures past
    # tau_max rely on
    kern = _Kernel(
        phi=lambda t: base._kernel.phi(np.asarray(t, dtype=float)) + s(t),
        d1=lambda t: base.phi_d1(t) + s1(t),
        d2=lambda t: base.phi_d2(t) + s2(t),
        d3=lambda t: base.phi_d3(t) + s3(t),
    )
    return RadialProfile(n=base.n, k=base.k, tau_min=base.tau_min,
                         tau_max=base.tau_max, form="perturbed",
                         params={"center": c, "width": w, "amplitude": a},
                         anchor=base.anchor, _kernel=kern)


# ---------------------------------------------------------------------------
# curvature operations
# ---------------------------------------------------------------------------

def _log_volume_derivs(p: RadialProfile, tau):
    """First and second rho-derivatives of F = (n-1) log u' + log u'' - n rho."""
    tau = np.asarray(tau, dtype=float)
    n = p.n
    ph = p.phi(tau)
    d1 = p.phi_d1(tau)
    d2 = p.phi_d2(tau)
    F1 = (n - 1) * ph / tau + d1 - n
    # grouped as (d1*tau - phi)/tau^2 so phi(tau)=tau cancels exactly
    F2 = ph * ((n - 1) * (d1 * tau - ph) / tau ** 2 + d2)
    return F1, F2


def metric_eigenvalues(p: RadialProfile, tau):
    """Metric eigenvalues (lambda_base, lambda_fiber) = (tau, phi(tau)) * exp(-rho)."""
    tau = np.asarray(tau, dtype=float)
    p._check_domain(tau)
    e = np.exp(-p.rho_of_tau(tau))
    return tau * e, p.phi(tau) * e


def ricci_eigenvalues(p: RadialProfile, tau):
    """Ricci eigenvalues (-F', -F'') * exp(-rho); base has multiplicity n-1."""
    tau = np.asarray(tau, dtype=float)
    p._check_domain(tau)
    F1, F2 = _log_volume_derivs(p, tau)
    e = np.exp(-p.rho_of_tau(tau))
    return -F1 * e, -F2 * e


def scalar_curvature(p: RadialProfile, tau):
    """Scalar curvature 2[(n-1) ric_base/lam_base + ric_fiber/lam_fiber].

    The exp(-rho) factors cancel in the trace, so no reconstruction is
    needed; LeBrun profiles give identically zero.
    """
    tau = np.asarray(tau, dtype=float)
    p._check_domain(tau)
    F1, F2 = _log_volume_derivs(p, tau)
    return 2.0 * (-(p.n - 1) * F1 / tau - F2 / p.phi(tau))


def curvature_sample(p: RadialProfile, tau) -> CurvatureSample:
    lb, lf = metric_eigenvalues(p, tau)
    rb, rf = ricci_eigenvalues(p, tau)
    return CurvatureSample(tau=float(tau), lambda_base=float(lb),
                           lambda_fiber=float(lf), ric_base=float(rb),
                           ric_fiber=float(rf),
                           scal=float(scalar_curvature(p, tau)))


@dataclass(frozen=True)
class SignScanResult:
    """Outcome of a Ricci sign scan over a tau grid."""

    classification: str  # positive-semidefinite | negative-semidefinite | mixed | zero
    positive_witness: tuple | None  # (tau, eigenvalue)
    negative_witness: tuple | None
    positive_margin: float  # largest positive eigenvalue seen (0 if none)
    negative_margin: float  # most negative eigenvalue seen (0 if none)


def ricci_sign_scan(p: RadialProfile, tau_grid=None, zero_tol: float = 1e-8) -> SignScanResult:
    """Classify the sign of the Ricci form over a tau grid.

    Eigenvalues within zero_tol of 0 count as zero; the classification is
    mixed when both signs occur, zero when nothing exceeds the tolerance.
    """
    if tau_grid is None:
        lo = max(p.tau_min * (1 + 1e-3), 1e-3)
        hi = min(p.tau_max, 1e6)
        tau_grid = np.geomspace(lo, hi, 400)
    tau_grid = np.asarray(tau_grid, dtype=float)
    rb, rf = ricci_eigenvalues(p, tau_grid)
    eigs = np.concatenate([rb, rf])
    taus = np.concatenate([tau_grid, tau_grid])
    pos = eigs > zero_tol
    neg = eigs < -zero_tol
    pos_w = neg_w = None
    pos_m = neg_m = 0.0
    if pos.any():
        i = int(np.argmax(np.where(pos, eigs, -np.inf)))
        pos_w = (float(taus[i]), float(eigs[i]))
        pos_m = float(eigs[i])
    if neg.any():
        i = int(np.argmin(np.where(neg, eigs, np.inf)))
        neg_w = (float(taus[i]), float(eigs[i]))
        neg_m = float(eigs[i])
    if pos.any() and neg.any():
        cls = "mixed"
    elif pos.any():
        cls = "positive-semidefinite"
    elif neg.any():
        cls = "negative-semidefinite"
    else:
        cls = "zero"
    return SignScanResult(cls, pos_w, neg_w, pos_m, neg_m)


def curvature_scan_rows(p: RadialProfile, tau_grid):
    """Rows (tau, rho, r, lambda_base, lambda_fiber, ric_base, ric_fiber, scal)."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    rho = p.rho_of_tau(tau_grid)
    r = np.exp(rho / 2.0)
    e = np.exp(-rho)
    F1, F2 = _log_volume_derivs(p, tau_grid)
    lb, lf = tau_grid * e, p.phi(tau_grid) * e
    return np.column_stack([tau_grid, rho, r, lb, lf, -F1 * e, -F2 * e,
                            scalar_curvature(p, tau_grid)])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def profile_to_json(p: RadialProfile) -> str:
    return json.dumps(p.to_json_dict(), sort_keys=True)


def profile_from_json(doc) -> RadialProfile:
    if isinstance(doc, str):
        doc = json.loads(doc)
    form = doc["form"]
    if form == "lebrun":
        return lebrun_profile(doc["k"], doc["tau_min"], n=doc["n"],
                              tau_max=doc["params"].get("tau_max", 1e12))
    if form == "flat":
        return flat_profile(n=doc["n"], k=doc["k"],
                            tau_max=doc["params"].get("tau_max", 1e12))
    if form == "samples":
        return sampled_profile(doc["n"], doc["k"], doc["tau_min"],
                               doc["params"]["tau"], doc["params"]["phi"])
    raise ProfileError(f"unknown profile form {form!r}")
