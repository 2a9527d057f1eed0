"""Damped-Newton continuation solver for the reduced epsilon-geodesic
equation between radial Kahler potentials.

The unknown is the relative potential phi(rho, t) with Phi = Psi + phi,
Psi = (1-t) psi0 + t psi1.  With u the background Kahler potential,
w = u + Psi + phi and primes/dots denoting d/drho and d/dt, the interior
equation is

    G[phi] = (phi_tt * w'' - (Psi_t' + phi_t')^2) * (w')^{n-1}
             - upsilon * (u')^{n-1} u''  =  0,

with phi = 0 at t = 0, 1, a spatially constant Dirichlet value at rho_max
(the far-field limit) and a homogeneous Neumann condition at rho_min.
Newton runs on the concave log form of the equation; the continuity path
lowers the right-hand side from 1 to the target epsilon geometrically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from .analysis import fit_decay_exponent
from .potentials import RadialPotential, zero_potential
from .profiles import RadialProfile

__all__ = ["PathGrid", "SolverConfig", "SolverReport", "BoundCheck",
           "GeodesicError", "NonConvergence", "PositivityLoss",
           "BoundaryInconsistency", "reduced_residual",
           "solve_epsilon_geodesic", "c0_bound_check", "comparison_check",
           "epsilon_sweep", "upsilon_field", "smoothstep_cutoff"]


class GeodesicError(RuntimeError):
    pass


class NonConvergence(GeodesicError):
    def __init__(self, stage, history):
        self.stage = stage
        self.history = history
        super().__init__(
            f"Newton stalled at continuity stage s={stage:g}; "
            f"residual history {['%.3e' % h for h in history]}")


class PositivityLoss(GeodesicError):
    pass


class BoundaryInconsistency(GeodesicError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float
    upsilon_mode: str = "constant"  # or "profile-weighted"
    n_rho: int = 65
    n_t: int = 65
    rho_min: float | None = None
    rho_max: float | None = None
    newton_tol: float = 1e-11
    max_iters: int = 60
    max_backtracks: int = 40
    schedule_ratio: float = 0.5
    min_decay: float = 0.5  # slowest admissible r-decay of boundary data
    upsilon_constant: float = 1.0  # the C of C^-1 eps <= upsilon <= C eps
    upsilon_sigma: float = 4.0     # recorded decay order of grad upsilon

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.upsilon_mode not in ("constant", "profile-weighted"):
            raise ValueError(f"unknown upsilon mode {self.upsilon_mode!r}")
        if not 0.0 < self.schedule_ratio < 1.0:
            raise ValueError("schedule ratio must be in (0, 1)")

    def schedule(self):
        """Continuity values from 1 down to epsilon, geometric in between."""
        vals = [1.0]
        while vals[-1] > self.epsilon:
            vals.append(max(vals[-1] * self.schedule_ratio, self.epsilon))
        return vals


@dataclass
class PathGrid:
    """Discrete path of radial potentials; phi is (n_rho, n_t)."""

    rho_nodes: np.ndarray
    t_nodes: np.ndarray
    phi: np.ndarray
    psi0: RadialPotential
    psi1: RadialPotential
    background: RadialProfile
    epsilon: float
    upsilon_mode: str = "constant"

    def __post_init__(self):
        if self.phi.shape != (self.rho_nodes.size, self.t_nodes.size):
            raise ValueError("phi shape does not match the node grids")

    @property
    def h_rho(self):
        return float(self.rho_nodes[1] - self.rho_nodes[0])

    @property
    def h_t(self):
        return float(self.t_nodes[1] - self.t_nodes[0])


@dataclass(frozen=True)
class BoundCheck:
    passed: bool
    min_slack: float
    worst_node: tuple  # (rho, t)


@dataclass(frozen=True)
class SolverReport:
    residual_sup: float          # normalized by the reference density
    residual_raw_sup: float
    stage_iterations: list
    c0_check: BoundCheck
    positivity_margins: dict     # min of w', w'', M over interior nodes
    wall_time: float
    upsilon_range: tuple


def smoothstep_cutoff(s: float) -> float:
    """0 on [0, 1/3], 1 on [2/3, 1], C^1 smoothstep in between."""
    x = (s - 1.0 / 3.0) * 3.0
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    return x * x * (3.0 - 2.0 * x)


def _background_fields(p: RadialProfile, rho):
    u1, u2 = p.u_derivatives(rho, order=2)
    return np.asarray(u1), np.asarray(u2)


def upsilon_field(grid_or_profile, rho, s, mode, psi0=None):
    """Right-hand-side weight upsilon(rho) at continuity value s.

    Constant mode returns s everywhere.  Profile-weighted mode blends the
    volume ratio of the psi0-perturbed metric into the weight at small s,
    interpolated by the smoothstep cutoff.
    """
    rho = np.asarray(rho, dtype=float)
    if mode == "constant":
        return s * np.ones_like(rho)
    p = grid_or_profile
    u1, u2 = _background_fields(p, rho)
    psi0 = psi0 or zero_potential()
    w1 = u1 + psi0(rho, 1)
    w2 = u2 + psi0(rho, 2)
    if np.any(w1 <= 0) or np.any(w2 <= 0):
        raise BoundaryInconsistency("psi0 metric not positive on the grid")
    f_vol = u1 ** (p.n - 1) * u2 / (w1 ** (p.n - 1) * w2)
    chi = smoothstep_cutoff(s)
    return s * ((1.0 - chi) * f_vol + chi)


def _field_arrays(grid: PathGrid):
    """w', w'', P = Psi_t' + phi_t', phi_tt on residual nodes.

    Residual nodes are i = 0..n_rho-2 (Neumann mirror at i = 0, Dirichlet
    column excluded) and j = 1..n_t-2.  Returns views of shape
    (n_rho-1, n_t-2) plus the background density on the same nodes.
    """
    p = grid.background
    rho = grid.rho_nodes
    t = grid.t_nodes
    hr, ht = grid.h_rho, grid.h_t
    nr, nt = rho.size, t.size
    phi = grid.phi

    # ghost row at i = -1 mirrors i = 1
    ext = np.vstack([phi[1:2, :], phi])

    sl_r = slice(0, nr - 1)
    sl_t = slice(1, nt - 1)
    phi_rr = (ext[0:nr - 1, sl_t] - 2.0 * ext[1:nr, sl_t]
              + ext[2:nr + 1, sl_t]) / hr ** 2
    phi_r = (ext[2:nr + 1, sl_t] - ext[0:nr - 1, sl_t]) / (2.0 * hr)
    phi_tt = (phi[sl_r, 0:nt - 2] - 2.0 * phi[sl_r, sl_t]
              + phi[sl_r, 2:nt]) / ht ** 2
    phi_rt = (ext[2:nr + 1, 2:nt] - ext[2:nr + 1, 0:nt - 2]
              - ext[0:nr - 1, 2:nt] + ext[0:nr - 1, 0:nt - 2]) / (4.0 * hr * ht)

    u1, u2 = _background_fields(p, rho[sl_r])
    psi0_1, psi1_1 = grid.psi0(rho[sl_r], 1), grid.psi1(rho[sl_r], 1)
    psi0_2, psi1_2 = grid.psi0(rho[sl_r], 2), grid.psi1(rho[sl_r], 2)
    tj = t[sl_t][None, :]
    w1 = (u1[:, None] + (1.0 - tj) * psi0_1[:, None] + tj * psi1_1[:, None]
          + phi_r)
    w2 = (u2[:, None] + (1.0 - tj) * psi0_2[:, None] + tj * psi1_2[:, None]
          + phi_rr)
    P = (psi1_1 - psi0_1)[:, None] + phi_rt
    density = (u1 ** (p.n - 1) * u2)[:, None] * np.ones_like(w1)
    return w1, w2, P, phi_tt, density


def reduced_residual(grid: PathGrid, epsilon=None, upsilon_mode=None,
                     normalized=False):
    """G[phi] on the interior nodes (i = 0..n_rho-2, j = 1..n_t-2).

    normalized=True divides by the background density (u')^{n-1} u'', the
    scale-free form used for convergence certification.
    """
    eps = grid.epsilon if epsilon is None else epsilon
    mode = grid.upsilon_mode if upsilon_mode is None else upsilon_mode
    w1, w2, P, phi_tt, density = _field_arrays(grid)
    _check_positive(w1, w2, grid)
    n = grid.background.n
    ups = upsilon_field(grid.background, grid.rho_nodes[:-1], eps, mode,
                        psi0=grid.psi0)[:, None]
    G = (phi_tt * w2 - P ** 2) * w1 ** (n - 1) - ups * density
    return G / density if normalized else G


def _check_positive(w1, w2, grid):
    for name, arr in (("w'", w1), ("w''", w2)):
        if np.any(arr <= 0):
            i, j = np.unravel_index(int(np.argmin(arr)), arr.shape)
            raise PositivityLoss(
                f"{name} <= 0 at rho={grid.rho_nodes[i]:.4f}, "
                f"t={grid.t_nodes[j + 1]:.4f}")


# ---------------------------------------------------------------------------
# Newton assembly
# ---------------------------------------------------------------------------

def _newton_system(grid: PathGrid, s, mode):
    """Log-form residual and sparse Jacobian over the unknown block."""
    n = grid.background.n
    nr, nt = grid.rho_nodes.size, grid.t_nodes.size
    hr, ht = grid.h_rho, grid.h_t
    w1, w2, P, phi_tt, density = _field_arrays(grid)
    M = phi_tt * w2 - P ** 2
    if np.any(w1 <= 0) or np.any(w2 <= 0) or np.any(M <= 0):
        return None, None, None
    ups = upsilon_field(grid.background, grid.rho_nodes[:-1], s, mode,
                        psi0=grid.psi0)[:, None]
    R = np.log(M) + (n - 1) * np.log(w1) - np.log(ups * density)

    ni, nj = nr - 1, nt - 2  # unknown block dimensions

    def uid(i, j):
        return i * nj + (j - 1)

    ii, jj = np.meshgrid(np.arange(ni), np.arange(1, nt - 1), indexing="ij")
    rows_base = uid(ii, jj)

    rows, cols, vals = [], [], []

    def add(di, dj, coef):
        ti = ii + di
        tj = jj + dj
        c = coef.copy()
        # Neumann mirror: ghost row -1 maps onto row +1
        mirror = ti < 0
        ti = np.where(mirror, -ti, ti)
        keep = (ti <= ni - 1) & (tj >= 1) & (tj <= nt - 2)
        rows.append(rows_base[keep])
        cols.append(uid(ti, tj)[keep])
        vals.append(c[keep])

    cA = w2 / M / ht ** 2          # d/d phi_tt
    cB = phi_tt / M / hr ** 2      # d/d phi_rr
    cC = -2.0 * P / M / (4.0 * hr * ht)
    cD = (n - 1) / w1 / (2.0 * hr)

    add(0, -1, cA)
    add(0, 1, cA)
    add(0, 0, -2.0 * cA)
    add(-1, 0, cB)
    add(1, 0, cB)
    add(0, 0, -2.0 * cB)
    add(1, 1, cC)
    add(1, -1, -cC)
    add(-1, 1, -cC)
    add(-1, -1, cC)
    add(1, 0, cD)
    add(-1, 0, -cD)

    J = coo_matrix((np.concatenate(vals),
                    (np.concatenate(rows), np.concatenate(cols))),
                   shape=(ni * nj, ni * nj)).tocsr()
    return R, J, M


def _dirichlet_column(grid: PathGrid, s, mode):
    """Far-field Dirichlet value s * t(t-1)/2 at rho_max."""
    t = grid.t_nodes
    return s * t * (t - 1.0) / 2.0


def _check_boundary_data(p, psi, cfg, rho_nodes, label):
    if psi.is_zero:
        return
    rho = rho_nodes
    r = np.exp(rho / 2.0)
    vals = psi(rho)
    try:
        fit = fit_decay_exponent(r, vals, window=(r[0], r[-1]))
    except ValueError as exc:
        raise BoundaryInconsistency(f"{label}: cannot assess decay: {exc}")
    if not fit.below_floor and (fit.exponent is None
                                or fit.exponent > -cfg.min_decay):
        raise BoundaryInconsistency(
            f"{label} decays like r^{fit.exponent:.2f}, slower than the "
            f"required r^-{cfg.min_decay}")
    u1, u2 = _background_fields(p, rho)
    if np.any(u1 + psi(rho, 1) <= 0) or np.any(u2 + psi(rho, 2) <= 0):
        raise BoundaryInconsistency(f"{label} does not give a positive metric")


def solve_epsilon_geodesic(profile: RadialProfile, psi0: RadialPotential,
                           psi1: RadialPotential, config: SolverConfig):
    """Continuity-path damped Newton solve; returns (PathGrid, SolverReport)."""
    t_start = time.perf_counter()
    rho_min = config.rho_min
    if rho_min is None:
        rho_min = (float(profile.rho_of_tau(2.0 * profile.tau_min))
                   if profile.tau_min > 0 else 0.0)
    rho_max = config.rho_max if config.rho_max is not None else rho_min + 6.0
    rho = np.linspace(rho_min, rho_max, config.n_rho)
    t = np.linspace(0.0, 1.0, config.n_t)

    _check_boundary_data(profile, psi0, config, rho, "psi0")
    _check_boundary_data(profile, psi1, config, rho, "psi1")

    grid = PathGrid(rho_nodes=rho, t_nodes=t,
                    phi=np.zeros((config.n_rho, config.n_t)),
                    psi0=psi0, psi1=psi1, background=profile,
                    epsilon=config.epsilon, upsilon_mode=config.upsilon_mode)

    nr, nt = config.n_rho, config.n_t
    ni, nj = nr - 1, nt - 2
    stage_iters = []
    # spatially constant seed, exact for trivial data and elliptic everywhere
    grid.phi[:] = 1.0 * t[None, :] * (t[None, :] - 1.0) / 2.0

    for s in config.schedule():
        grid.phi[-1, :] = _dirichlet_column(grid, s, config.upsilon_mode)
        grid.phi[:, 0] = 0.0
        grid.phi[:, -1] = 0.0
        history = []
        for _ in range(config.max_iters):
            R, J, M = _newton_system(grid, s, config.upsilon_mode)
            if R is None:
                raise PositivityLoss(
                    f"iterate left the ellipticity cone at stage s={s:g}")
            res = float(np.max(np.abs(
                reduced_residual(grid, epsilon=s, normalized=True))))
            history.append(res)
            if res <= config.newton_tol:
                break
            delta = spsolve(J, -R.ravel()).reshape(ni, nj)
            alpha = 1.0
            base = grid.phi[:ni, 1:nt - 1].copy()
            accepted = False
            for _ in range(config.max_backtracks):
                grid.phi[:ni, 1:nt - 1] = base + alpha * delta
                Rn, _, Mn = _newton_system(grid, s, config.upsilon_mode)
                if Rn is not None and (np.max(np.abs(Rn))
                                       < np.max(np.abs(R)) * (1 - 1e-4 * alpha)
                                       or np.max(np.abs(Rn)) < 1e-13):
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                grid.phi[:ni, 1:nt - 1] = base
                raise NonConvergence(s, history)
        else:
            raise NonConvergence(s, history)
        stage_iters.append(len(history))

    res_norm = float(np.max(np.abs(reduced_residual(grid, normalized=True))))
    res_raw = float(np.max(np.abs(reduced_residual(grid))))
    if res_norm > config.newton_tol:
        raise NonConvergence(config.epsilon, [res_norm])

    w1, w2, P, phi_tt, _ = _field_arrays(grid)
    M = phi_tt * w2 - P ** 2
    ups = upsilon_field(profile, rho[:-1], config.epsilon,
                        config.upsilon_mode, psi0=psi0)
    report = SolverReport(
        residual_sup=res_norm,
        residual_raw_sup=res_raw,
        stage_iterations=stage_iters,
        c0_check=c0_bound_check(grid),
        positivity_margins={"w1": float(w1.min()), "w2": float(w2.min()),
                            "M": float(M.min())},
        wall_time=time.perf_counter() - t_start,
        upsilon_range=(float(ups.min()), float(ups.max())),
    )
    return grid, report


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def c0_bound_check(grid: PathGrid) -> BoundCheck:
    """Sandwich bound |phi| <= 2 t (1 - t) nodewise; reports minimum slack."""
    t = grid.t_nodes[None, :]
    slack = 2.0 * t * (1.0 - t) - np.abs(grid.phi)
    i, j = np.unravel_index(int(np.argmin(slack)), slack.shape)
    return BoundCheck(passed=bool(slack.min() >= -1e-12),
                      min_slack=float(slack.min()),
                      worst_node=(float(grid.rho_nodes[i]),
                                  float(grid.t_nodes[j])))


def comparison_check(grid_a: PathGrid, grid_b: PathGrid, tol=1e-10):
    """Discrete comparison: larger right-hand side lies below.

    grid_a must carry epsilon_a >= epsilon_b; checks phi_a <= phi_b + tol
    at every node and returns (passed, worst_violation).
    """
    if (grid_a.rho_nodes.shape != grid_b.rho_nodes.shape
            or not np.allclose(grid_a.rho_nodes, grid_b.rho_nodes)
            or not np.allclose(grid_a.t_nodes, grid_b.t_nodes)):
        raise ValueError("grids live on different discretizations")
    if grid_a.epsilon < grid_b.epsilon:
        raise ValueError("grid_a must have the larger epsilon")
    excess = grid_a.phi - grid_b.phi
    worst = float(excess.max())
    return worst <= tol, worst


def epsilon_sweep(profile, psi0, psi1, epsilons, config: SolverConfig):
    """Solve a decreasing family of epsilons; returns grids, reports and the
    uniformity probe data (max discrete second derivative of Phi per run,
    and Cauchy sup-differences between consecutive solutions)."""
    epsilons = sorted(epsilons, reverse=True)
    grids, reports, second_derivs = [], [], []
    for eps in epsilons:
        cfg = replace(config, epsilon=eps)
        g, rep = solve_epsilon_geodesic(profile, psi0, psi1, cfg)
        grids.append(g)
        reports.append(rep)
        second_derivs.append(_max_second_derivative(g))
    cauchy = [float(np.max(np.abs(a.phi - b.phi)))
              for a, b in zip(grids, grids[1:])]
    return {"epsilons": epsilons, "grids": grids, "reports": reports,
            "max_second_derivative": second_derivs, "cauchy": cauchy}


def _max_second_derivative(grid: PathGrid):
    """Max discrete second derivative of Phi against the spatial reference.

    Covers the spatial (rho-rho) and mixed (rho-t) components.  The pure
    time-time part is excluded: it equals the right-hand side scale epsilon
    up to lower order, so including it would let the sweep parameter itself
    dominate the probe instead of the quantity whose uniformity is tested.
    """
    rho = grid.rho_nodes
    t = grid.t_nodes
    hr, ht = grid.h_rho, grid.h_t
    psi0_2 = grid.psi0(rho, 2)
    psi1_2 = grid.psi1(rho, 2)
    Psi_rr = (1 - t[None, :]) * psi0_2[:, None] + t[None, :] * psi1_2[:, None]
    phi = grid.phi
    phi_rr = (phi[:-2, :] - 2 * phi[1:-1, :] + phi[2:, :]) / hr ** 2
    phi_rt = (phi[2:, 2:] - phi[2:, :-2] - phi[:-2, 2:]
              + phi[:-2, :-2]) / (4 * hr * ht)
    P = (grid.psi1(rho, 1) - grid.psi0(rho, 1))[1:-1, None] + phi_rt
    return float(max(np.max(np.abs(phi_rr + Psi_rr[1:-1, :])),
                     np.max(np.abs(P))))
