"""Vorticity/stream-function simulation of the Marangoni system on the
periodic strip [0, 2pi) x [0, h], Fourier in x and second-order finite
differences on a uniform y grid.

Perturbation variables about the base temperature u0 = U + gamma u1:
    w_t      = Delta w + psi_x U_y - {psi, gamma u1 + w} + F_w,
    omega_t  = nu Delta omega - {psi, omega},
    Delta psi = -omega, psi = 0 on both walls, omega(h) = 0, omega(x, 0) = w_x(x, 0),
with {A, B} = A_y B_x - A_x B_y and F_w = eta + Delta u0 (F_w = gamma^2 eta1
for eta = eta0 + gamma^2 eta1). The vorticity is split as omega = omegaBar +
omegaTilde with omegaBar the (discrete) harmonic extension of w_x(x, 0), so
omegaTilde is Dirichlet. Per harmonic the whole linear part, including the
coupling -i k s_k(y) w_t(0) from differentiating omegaBar, is implicit; the
brackets are explicit (SBDF2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import CFLViolation, NaNDetected, NonConvergence, PreconditionError
from .fields import HeatSource2D
from .heatprofile import BASE_SIGN, HeatProfile, assemble_profile, corrector_poly, mollifier
from .quadrature import gauss_legendre


@dataclass(frozen=True)
class Grid:
    Nx: int = 64
    Ny: int = 128
    h: float = 1.0

    def __post_init__(self):
        if self.Nx < 4 or self.Nx & (self.Nx - 1):
            raise PreconditionError("Nx must be a power of two")
        if self.Ny < 64:
            raise PreconditionError("Ny must be at least 64")
        if self.h <= 0:
            raise PreconditionError("h must be positive")

    @property
    def x(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.Nx) / self.Nx

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.h, self.Ny + 1)

    @property
    def dy(self) -> float:
        return self.h / self.Ny

    @property
    def trap(self) -> np.ndarray:
        c = np.full(self.Ny + 1, self.dy)
        c[0] = c[-1] = self.dy / 2
        return c

    @property
    def nk(self) -> int:
        return self.Nx // 2 + 1

    @property
    def kmax(self) -> int:
        """Largest harmonic kept by the 2/3 rule."""
        return self.Nx // 3

    @property
    def k(self) -> np.ndarray:
        return np.arange(self.nk)


# ---------------------------------------------------------------- 1D operators

def d2_dirichlet(n: int, dy: float) -> np.ndarray:
    """Interior (n-1)x(n-1) second difference with zero end values."""
    m = n - 1
    return (np.diag(-2.0 * np.ones(m)) + np.diag(np.ones(m - 1), 1) + np.diag(np.ones(m - 1), -1)) / dy ** 2


def d2_neumann(n: int, dy: float) -> np.ndarray:
    """(n+1)x(n+1) second difference with mirrored ghost points (zero flux)."""
    D = np.diag(-2.0 * np.ones(n + 1)) + np.diag(np.ones(n), 1) + np.diag(np.ones(n), -1)
    D[0, 1] = 2.0
    D[n, n - 1] = 2.0
    return D / dy ** 2


def ddy_wall(f: np.ndarray, dy: float) -> np.ndarray:
    """d/dy along the last axis, central inside and one-sided second order at the walls."""
    d = np.empty_like(f)
    d[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2 * dy)
    d[..., 0] = (-3 * f[..., 0] + 4 * f[..., 1] - f[..., 2]) / (2 * dy)
    d[..., -1] = (3 * f[..., -1] - 4 * f[..., -2] + f[..., -3]) / (2 * dy)
    return d


def ddy_odd(f: np.ndarray, dy: float) -> np.ndarray:
    """d/dy of a field vanishing on both walls, with odd reflection there;
    its trapezoid integral telescopes to zero."""
    d = np.empty_like(f)
    d[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2 * dy)
    d[..., 0] = f[..., 1] / dy
    d[..., -1] = -f[..., -2] / dy
    return d


# ---------------------------------------------------------------- spectral helpers

def to_spec(f: np.ndarray) -> np.ndarray:
    """rfft along x (axis 0) normalized so f = sum_k c_k fhat_k e^{ikx} (c_k = 1 or 2)."""
    return np.fft.rfft(f, axis=0) / f.shape[0]


def to_phys(fh: np.ndarray, Nx: int) -> np.ndarray:
    return np.fft.irfft(fh * Nx, n=Nx, axis=0)


def poisson_psi_hat(omega_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """Solve psi'' - k^2 psi = -omega per harmonic with psi = 0 at both walls.
    omega_hat has shape (nk, Ny+1); wall values of omega are used as data
    only through the interior rows."""
    n, dy = grid.Ny, grid.dy
    out = np.zeros_like(omega_hat, dtype=complex)
    D = d2_dirichlet(n, dy)
    for k in range(omega_hat.shape[0]):
        out[k, 1:-1] = np.linalg.solve(D - k * k * np.eye(n - 1), -omega_hat[k, 1:-1])
    return out


def poisson_psi(omega: np.ndarray, grid: Grid) -> np.ndarray:
    """Physical-space wrapper: omega (Nx, Ny+1) -> psi."""
    return to_phys(poisson_psi_hat(to_spec(omega), grid), grid.Nx)


def discrete_sinh_ratio(k: int, grid: Grid) -> np.ndarray:
    """Discrete harmonic profile: (D2 - k^2) s = 0, s(0) = 1, s(h) = 0."""
    n, dy = grid.Ny, grid.dy
    s = np.zeros(n + 1)
    s[0] = 1.0
    rhs = np.zeros(n - 1)
    rhs[0] = -1.0 / dy ** 2
    s[1:-1] = np.linalg.solve(d2_dirichlet(n, dy) - k * k * np.eye(n - 1), rhs)
    return s


def harmonic_extension(w_boundary: np.ndarray, grid: Grid, discrete: bool = False) -> np.ndarray:
    """omegaBar = sum_k i k w_k e^{ikx} sinh(k(h-y))/sinh(kh) from the trace w(x, 0)."""
    wb = np.fft.rfft(np.asarray(w_boundary, dtype=float)) / grid.Nx
    y = grid.y
    out = np.zeros((grid.nk, grid.Ny + 1), dtype=complex)
    for k in range(1, grid.nk):
        if discrete:
            s = discrete_sinh_ratio(k, grid)
        else:
            s = (np.exp(-k * y) - np.exp(-k * (2 * grid.h - y))) / (1 - np.exp(-2 * k * grid.h))
        out[k] = 1j * k * wb[k] * s
    return to_phys(out, grid.Nx)


# ---------------------------------------------------------------- base-gradient coupling

def lumped_coupling(gradient, grid: Grid, breakpoints=(), sub: int = 8) -> np.ndarray:
    """C[j, i] = (1 / c_j) int phi_j g L_i dy, with hat test functions phi_j
    and the piecewise quadratic interpolant sum_i psi_i L_i as trial space.

    Cells are split at the breakpoints of g (the mollifier support), and the
    pieces inside the support get `sub` Gauss panels each, so a mollified
    step much narrower than dy is still felt with its full weight. The
    quadratic interpolant keeps psi/y accurate to O(dy^2) in the first cell."""
    n, dy = grid.Ny, grid.dy
    y = grid.y
    t, wt = gauss_legendre(16)
    C = np.zeros((n + 1, n + 1))
    bps = np.sort(np.asarray(breakpoints, dtype=float))
    for j in range(n):
        a, b = y[j], y[j + 1]
        inner = bps[(bps > a) & (bps < b)]
        e = np.concatenate([[a], inner, [b]])
        if len(inner):
            pieces = []
            for lo, hi in zip(e[:-1], e[1:]):
                m = sub if (lo >= bps[0] and hi <= bps[-1]) else 1
                pieces.append(np.linspace(lo, hi, m + 1)[:-1])
            e = np.append(np.concatenate(pieces), b)
        s = ((e[:-1, None] + e[1:, None]) / 2 + np.diff(e)[:, None] / 2 * t).ravel()
        w = (np.diff(e)[:, None] / 2 * wt).ravel() * gradient(s)
        nodes = [j, j + 1, j + 2] if j + 2 <= n else [j - 1, j, j + 1]
        L = []
        for m_ in nodes:
            others = [o for o in nodes if o != m_]
            L.append(np.prod([(s - y[o]) / (y[m_] - y[o]) for o in others], axis=0))
        for jj, phi in ((j, (b - s) / dy), (j + 1, (s - a) / dy)):
            for m_, Lm in zip(nodes, L):
                C[jj, m_] += np.sum(w * phi * Lm)
    return C / grid.trap[:, None]


class _CouplingFamily:
    """C(d) = C_step + mu sum_m b_m(d) C_m, for fast retuning in d."""

    def __init__(self, profile: HeatProfile, grid: Grid):
        cfg = profile.config
        bp = (cfg.z0 - cfg.kappa, cfg.z0, cfg.z0 + cfg.kappa)
        self.Cstep = sparse.csr_matrix(
            lumped_coupling(lambda s: BASE_SIGN * profile.Uy_step(s), grid, bp))
        self.Cmono = [sparse.csr_matrix(
            lumped_coupling(lambda s, m=m: BASE_SIGN * np.where(s > cfg.z0, 2.0 * s ** m, 0.0), grid, bp))
            for m in range(cfg.N + 1)]
        self.mu = cfg.mu

    def __call__(self, d) -> sparse.csr_matrix:
        b = corrector_poly(d)
        C = self.Cstep.copy()
        for bm, Cm in zip(b, self.Cmono):
            C = C + (self.mu * bm) * Cm
        return C.tocsr()


def _d2(n: int, dy: float, bc: str) -> sparse.csc_matrix:
    return sparse.csc_matrix(d2_dirichlet(n, dy) if bc == "D" else d2_neumann(n, dy))


def steady_mode(k: int, C, grid: Grid) -> tuple[float, np.ndarray, np.ndarray]:
    """Drive the discrete steady problem with w_0 = 1: returns (w_0 - 1, w, psi)."""
    n, dy = grid.Ny, grid.dy
    s = discrete_sinh_ratio(k, grid)
    psi = np.zeros(n + 1)
    psi[1:-1] = splinalg.spsolve(-(_d2(n, dy, "D") - k * k * sparse.eye(n - 1, format="csc")), s[1:-1])
    # psi here is Psi-hat (the i k factor of omegaBar divided out)
    rhs = k * k * (C @ psi)
    w = splinalg.spsolve(_d2(n, dy, "N") - k * k * sparse.eye(n + 1, format="csc"), rhs)
    return w[0] - 1.0, w, psi


def retune_discrete(profile: HeatProfile, grid: Grid, tol: float = 1e-12, max_iter: int = 40,
                    fd_step: float = 1e-7) -> HeatProfile:
    """Adjust d so that the discrete linear operator has exact zero
    eigenvalues at k = 1..N (damped Newton from the continuum tuning)."""
    cfg = profile.config
    N = cfg.N
    if N == 0:
        return profile
    fam = _CouplingFamily(profile, grid)

    def R(d):
        C = fam(d)
        return np.array([steady_mode(k, C, grid)[0] for k in range(1, N + 1)])

    d = np.array(profile.d, dtype=float)
    r = R(d)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            break
        J = np.empty((N, N))
        for j in range(N):
            e = np.zeros(N)
            e[j] = fd_step
            if np.any(np.abs(d + e) >= 0.5) or np.any(np.abs(d - e) >= 0.5):
                raise NonConvergence("discrete retuning reached |d_j| = 1/2 (grid too coarse)",
                                     d=d.tolist(), residual=r.tolist(), grid=(grid.Nx, grid.Ny))
            J[:, j] = (R(d + e) - R(d - e)) / (2 * fd_step)
        step = np.linalg.solve(J, -r)
        lam = 1.0
        while True:
            trial = d + lam * step
            if np.all(np.abs(trial) < 0.5):
                rt = R(trial)
                if np.linalg.norm(rt) < np.linalg.norm(r):
                    break
            lam /= 2
            if lam < 1e-8:
                raise NonConvergence("discrete retuning stalled", d=d.tolist(), residual=r.tolist())
        d, r = trial, rt
    else:
        raise NonConvergence("discrete retuning did not converge", d=d.tolist(), residual=r.tolist())
    out = assemble_profile(cfg, d, profile.grid)
    out.info.update(discrete_residual=r.tolist(), grid=(grid.Nx, grid.Ny), continuum_d=list(profile.d))
    return out


# ---------------------------------------------------------------- state and simulator

@dataclass
class SimState:
    """Spectral state: omegaTilde_hat and w_hat of shape (nk, Ny+1)."""
    omega_hat: np.ndarray
    w_hat: np.ndarray
    t: float = 0.0
    grid: Grid = field(default=None, repr=False)

    def copy(self) -> "SimState":
        return SimState(self.omega_hat.copy(), self.w_hat.copy(), self.t, self.grid)

    @property
    def tildeOmega(self) -> np.ndarray:
        return to_phys(self.omega_hat, self.grid.Nx)

    @property
    def w(self) -> np.ndarray:
        return to_phys(self.w_hat, self.grid.Nx)

    @classmethod
    def zeros(cls, grid: Grid) -> "SimState":
        z = np.zeros((grid.nk, grid.Ny + 1), dtype=complex)
        return cls(z, z.copy(), 0.0, grid)

    @classmethod
    def from_physical(cls, tildeOmega: np.ndarray, w: np.ndarray, grid: Grid, t: float = 0.0) -> "SimState":
        oh = to_spec(tildeOmega)
        oh[:, 0] = oh[:, -1] = 0.0
        return cls(oh, to_spec(w), t, grid)


class MarangoniSim:
    """Semi-implicit (SBDF2) integrator of the perturbation equations.

    Per harmonic k the unknowns are v = (omegaTilde interior, w, psi interior)
    with the descriptor form M v_t = A_k v + N(v), where the psi rows are the
    algebraic Poisson equation and M is the identity on the other rows."""

    def __init__(self, profile: HeatProfile, grid: Grid, gamma: float, dt: float,
                 u1: HeatSource2D | None = None, eta1: HeatSource2D | None = None,
                 eta: np.ndarray | None = None, bracket: bool = True, cfl: float = 0.9):
        cfg = profile.config
        if abs(grid.h - cfg.h) > 1e-12 * cfg.h:
            raise PreconditionError("grid height differs from the profile height",
                                    grid_h=grid.h, profile_h=cfg.h)
        if dt <= 0:
            raise PreconditionError("dt must be positive")
        self.profile, self.grid, self.gamma, self.dt = profile, grid, float(gamma), float(dt)
        self.nu = cfg.nu
        self.bracket_on = bracket
        self.cfl = cfl
        n, dy, y, x = grid.Ny, grid.dy, grid.y, grid.x
        self.kk = np.arange(grid.nk)
        self.active = self.kk <= grid.kmax
        self.D2D = _d2(n, dy, "D")
        self.D2N = _d2(n, dy, "N")
        # base temperature and sources on the grid
        self.U = profile.base_U(y)
        self.u1 = np.zeros((grid.Nx, n + 1)) if u1 is None else u1.evaluate(x, y)
        self.eta1 = np.zeros((grid.Nx, n + 1)) if eta1 is None else eta1.evaluate(x, y)
        u0 = self.U[None, :] + self.gamma * self.u1
        lap_u0 = self.laplacian(u0)
        self.eta = (-lap_u0 + self.gamma ** 2 * self.eta1) if eta is None else np.asarray(eta, dtype=float)
        self.Fw_hat = to_spec(self.eta + lap_u0)
        self.Fw_hat[~self.active] = 0.0
        self.u0_mean = float(2 * np.pi * np.sum(grid.trap * np.mean(u0, axis=0)))
        self.C = _CouplingFamily(profile, grid)(profile.d)
        self.s = np.zeros((grid.nk, n + 1))
        self._poisson = {}
        self.A = {}
        for k in self.kk[self.active]:
            if k > 0:
                self.s[k] = discrete_sinh_ratio(k, grid)
            self._poisson[k] = splinalg.splu((self.D2D - k * k * sparse.eye(n - 1, format="csc")).tocsc())
            self.A[k] = self._linear_operator(int(k))
        nv = 3 * n - 1
        diag = np.ones(nv)
        diag[2 * n:] = 0.0
        self.M = sparse.diags(diag, format="csc")
        self._lu1 = {k: splinalg.splu((self.M - dt * A).tocsc()) for k, A in self.A.items()}
        self._lu2 = {k: splinalg.splu((1.5 * self.M - dt * A).tocsc()) for k, A in self.A.items()}
        self._prev = None

    # --- operators
    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """Discrete Laplacian with Neumann ghost rows in y, spectral in x."""
        fh = to_spec(f)
        out = (self.D2N @ fh.T).T - (self.kk ** 2)[:, None] * fh
        return to_phys(out, self.grid.Nx)

    def _linear_operator(self, k: int) -> sparse.csc_matrix:
        n = self.grid.Ny
        ik = 1j * k
        Iw = sparse.eye(n + 1)
        Io = sparse.eye(n - 1)
        s_int = self.s[k][1:-1]
        Cint = self.C[:, 1:-1]
        e0 = np.zeros(n + 1)
        e0[0] = 1.0
        # w rows: (D2N - k^2) w + i k C psi
        Aww = self.D2N - k * k * Iw
        Awp = ik * Cint
        # omegaTilde rows: nu (D2D - k^2) omegaTilde - i k s (w rows)_0
        row0_w = sparse.csr_matrix(Aww[[0], :])
        row0_p = sparse.csr_matrix(Awp[[0], :])
        col = sparse.csr_matrix(-ik * s_int[:, None])
        Aoo = self.nu * (self.D2D - k * k * Io)
        Aow = col @ row0_w
        Aop = col @ row0_p
        # psi rows: (D2D - k^2) psi + omegaTilde + i k s w_0 = 0
        Apo = Io
        Apw = sparse.csr_matrix(ik * s_int[:, None]) @ sparse.csr_matrix(e0[None, :])
        App = self.D2D - k * k * Io
        return sparse.bmat([[Aoo, Aow, Aop],
                            [None, Aww, Awp],
                            [Apo, Apw, App]], format="csc")

    def pack(self, state: SimState, k: int) -> np.ndarray:
        n = self.grid.Ny
        return np.concatenate([state.omega_hat[k, 1:-1], state.w_hat[k], np.zeros(n - 1)])

    def unpack(self, v: np.ndarray, oh: np.ndarray, wh: np.ndarray, k: int):
        n = self.grid.Ny
        oh[k, 1:-1] = v[:n - 1]
        oh[k, 0] = oh[k, -1] = 0.0
        wh[k] = v[n - 1:2 * n]

    # --- derived fields
    def omega_bar_hat(self, w_hat: np.ndarray) -> np.ndarray:
        return 1j * self.kk[:, None] * w_hat[:, :1] * self.s

    def psi_hat(self, state: SimState) -> np.ndarray:
        om = state.omega_hat + self.omega_bar_hat(state.w_hat)
        out = np.zeros_like(om)
        for k in self.kk[self.active]:
            r = -om[k, 1:-1]
            P = self._poisson[k]
            out[k, 1:-1] = P.solve(np.ascontiguousarray(r.real)) + 1j * P.solve(np.ascontiguousarray(r.imag))
        return out

    def fields(self, state: SimState) -> dict:
        Nx = self.grid.Nx
        ph = self.psi_hat(state)
        obh = self.omega_bar_hat(state.w_hat)
        w = state.w
        return {"psi": to_phys(ph, Nx), "omegaBar": to_phys(obh, Nx),
                "omega": to_phys(state.omega_hat + obh, Nx), "w": w,
                "u": self.U[None, :] + self.gamma * self.u1 + w}

    def mean_temperature(self, state: SimState) -> float:
        """<u, 1> = <U + gamma u1, 1> + 2 pi int w_0 dy (trapezoid rule)."""
        return self.u0_mean + float(2 * np.pi * np.sum(self.grid.trap * state.w_hat[0].real))

    def boundary_residuals(self, state: SimState) -> dict:
        """Wall values of psi, the Marangoni condition and omega(h); the
        zero-flux condition on w is built into the ghost rows."""
        f = self.fields(state)
        g = self.grid
        ux0 = to_phys(1j * self.kk[:, None] * to_spec(f["u"])[:, :1], g.Nx)[:, 0]
        return {"psi_wall": float(max(np.abs(f["psi"][:, 0]).max(), np.abs(f["psi"][:, -1]).max())),
                "marangoni": float(np.abs(f["omega"][:, 0] - ux0).max()),
                "omega_top": float(np.abs(f["omega"][:, -1]).max())}

    # --- explicit terms
    def _bracket_hat(self, ph: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Spectral {psi, q} in the conservative form d_x(psi_y q) - d_y(psi_x q)."""
        Nx, dy = self.grid.Nx, self.grid.dy
        ik = 1j * self.kk[:, None]
        psi_y = to_phys(ddy_wall(ph, dy), Nx)
        psi_x = to_phys(ik * ph, Nx)
        out = ik * to_spec(psi_y * q) - ddy_odd(to_spec(psi_x * q), dy)
        out[~self.active] = 0.0
        return out

    def explicit(self, state: SimState, gamma_u1: float | None = None, forcing: bool = True,
                 quadratic: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """(N_omegaTilde, N_w): brackets, forcing and the explicit part of the
        omegaBar time derivative."""
        Nx = self.grid.Nx
        gu = self.gamma if gamma_u1 is None else gamma_u1
        Nw = np.zeros_like(state.w_hat)
        No = np.zeros_like(state.omega_hat)
        if self.bracket_on and (quadratic or gu != 0.0):
            ph = self.psi_hat(state)
            q = gu * self.u1 + (state.w if quadratic else 0.0)
            Nw -= self._bracket_hat(ph, q)
            if quadratic:
                om = to_phys(state.omega_hat + self.omega_bar_hat(state.w_hat), Nx)
                No -= self._bracket_hat(ph, om)
        if forcing:
            Nw += self.Fw_hat
        No = No - 1j * self.kk[:, None] * Nw[:, :1] * self.s
        No[:, 0] = No[:, -1] = 0.0
        return No, Nw

    def _rowvec(self, No, Nw, k):
        return np.concatenate([No[k, 1:-1], Nw[k], np.zeros(self.grid.Ny - 1)])

    def linear_apply(self, state: SimState) -> SimState:
        """Tendency of the implicit part, with psi eliminated."""
        out = SimState.zeros(self.grid)
        ph = self.psi_hat(state)
        for k, A in self.A.items():
            v = self.pack(state, k)
            v[2 * self.grid.Ny:] = ph[k, 1:-1]
            self.unpack(A @ v, out.omega_hat, out.w_hat, k)
        return out

    # --- time stepping
    def cfl_number(self, state: SimState) -> float:
        dx, dy = 2 * np.pi / self.grid.Nx, self.grid.dy
        ph = self.psi_hat(state)
        vx = np.abs(to_phys(ddy_wall(ph, dy), self.grid.Nx)).max()
        vy = np.abs(to_phys(1j * self.kk[:, None] * ph, self.grid.Nx)).max()
        return float(self.dt * (vx / dx + vy / dy))

    def check_cfl(self, state: SimState) -> float:
        c = self.cfl_number(state)
        if c > self.cfl:
            raise CFLViolation(f"CFL number {c:.3g} exceeds {self.cfl}", cfl=c, t=state.t)
        return c

    def reset(self):
        """Forget the previous step (the next step restarts with IMEX Euler)."""
        self._prev = None

    def step(self, state: SimState) -> SimState:
        dt = self.dt
        No, Nw = self.explicit(state)
        new = SimState.zeros(self.grid)
        new.t = state.t + dt
        prev = self._prev
        if prev is None or abs(prev[0].t - (state.t - dt)) > 1e-9 * max(1.0, dt):
            for k, lu in self._lu1.items():
                rhs = self.M @ self.pack(state, k) + dt * self._rowvec(No, Nw, k)
                self.unpack(lu.solve(rhs), new.omega_hat, new.w_hat, k)
        else:
            old, Noo, Nwo = prev
            for k, lu in self._lu2.items():
                rhs = self.M @ (2 * self.pack(state, k) - 0.5 * self.pack(old, k)) + dt * (
                    2 * self._rowvec(No, Nw, k) - self._rowvec(Noo, Nwo, k))
                self.unpack(lu.solve(rhs), new.omega_hat, new.w_hat, k)
        if not (np.all(np.isfinite(new.w_hat)) and np.all(np.isfinite(new.omega_hat))):
            raise NaNDetected("non-finite state", t=new.t)
        self._prev = (state, No, Nw)
        return new

    def run(self, state: SimState, T: float, every: int = 1, callback=None, check_every: int = 50):
        """Advance by round(T/dt) steps; returns (final state, callback outputs)."""
        nsteps = int(round(T / self.dt))
        st = state
        out = [] if callback is None else [callback(st)]
        for i in range(nsteps):
            if check_every and i % check_every == 0:
                self.check_cfl(st)
            st = self.step(st)
            if callback is not None and (i + 1) % every == 0:
                out.append(callback(st))
        return st, out

    # --- slow modes of the discrete operator
    def discrete_modes(self, ks=None) -> dict:
        """Right/left null vectors of (M, A_k) for the tuned wavenumbers.

        v is normalized by w_0 = 1 (with omegaTilde = 0, as for the continuum
        modes); q solves q^H A_k = 0 with q^H M v = 1, via a bordered system."""
        n = self.grid.Ny
        ks = range(1, self.profile.config.N + 1) if ks is None else ks
        out = {}
        for k in ks:
            A = self.A[k]
            res, w, Psi = steady_mode(k, self.C, self.grid)
            v = np.zeros(3 * n - 1, dtype=complex)
            v[n - 1:2 * n] = w / w[0]
            v[2 * n:] = (1j * k * Psi[1:-1]) / w[0]
            b = self.M @ v
            c = np.zeros(3 * n - 1)
            c[n - 1] = 1.0
            B = sparse.bmat([[A, sparse.csc_matrix(b[:, None])],
                             [sparse.csc_matrix(c[None, :]), None]], format="csc")
            rhs = np.zeros(3 * n, dtype=complex)
            rhs[-1] = 1.0
            sol = splinalg.spsolve(B.conj().T.tocsc(), rhs)
            q = sol[:-1]
            out[k] = {"v": v, "q": q, "w0_residual": float(res),
                      "right_residual": float(np.abs(A @ v).max()),
                      "left_residual": float(np.abs(A.conj().T @ q).max()),
                      "normalization": complex(np.vdot(q, self.M @ v))}
        return out

    def mode_state(self, X, modes: dict) -> SimState:
        """State sum_a X_a e_a with e^+ = Re(e^{ikx} v), e^- = Im(e^{ikx} v)."""
        ks = sorted(modes)
        N = len(ks)
        st = SimState.zeros(self.grid)
        for n_, k in enumerate(ks):
            c = (X[n_] - 1j * X[N + n_]) / 2
            self.unpack(c * modes[k]["v"], st.omega_hat, st.w_hat, k)
        return st

    def project_discrete(self, state: SimState, modes: dict) -> np.ndarray:
        """Amplitudes X with respect to the discrete slow modes (no gamma scaling)."""
        ks = sorted(modes)
        N = len(ks)
        X = np.zeros(2 * N)
        for n_, k in enumerate(ks):
            z = np.vdot(modes[k]["q"], self.M @ (2 * self.pack(state, k)))
            X[n_], X[N + n_] = z.real, -z.imag
        return X

    def _project_tendency(self, No, Nw, modes):
        ks = sorted(modes)
        N = len(ks)
        X = np.zeros(2 * N)
        for n_, k in enumerate(ks):
            z = np.vdot(modes[k]["q"], 2 * self._rowvec(No, Nw, k))
            X[n_], X[N + n_] = z.real, -z.imag
        return X

    def discrete_reduced(self, modes: dict):
        """Reduced system of the discrete model: exact projection of the
        explicit terms onto the discrete slow modes (slow time gamma t)."""
        from .galerkin import ReducedSystem

        ks = sorted(modes)
        n = 2 * len(ks)

        def proj_quad(X):
            No, Nw = self.explicit(self.mode_state(X, modes), gamma_u1=0.0, forcing=False)
            return self._project_tendency(No, Nw, modes)

        E = np.eye(n)
        diag = [proj_quad(E[a]) for a in range(n)]
        K = np.zeros((n, n, n))
        for a in range(n):
            K[:, a, a] = diag[a]
            for b in range(a + 1, n):
                K[:, a, b] = K[:, b, a] = (proj_quad(E[a] + E[b]) - diag[a] - diag[b]) / 2
        M = np.zeros((n, n))
        for a in range(n):
            No, Nw = self.explicit(self.mode_state(E[a], modes), gamma_u1=1.0, forcing=False, quadratic=False)
            M[:, a] = self._project_tendency(No, Nw, modes)
        No, Nw = self.explicit(SimState.zeros(self.grid), forcing=True)
        f = self._project_tendency(No, Nw, modes) / self.gamma ** 2
        return ReducedSystem(len(ks), K, M, f, self.gamma, list(ks))


def project_slow(state: SimState, sim: MarangoniSim, conj, gamma: float | None = None) -> np.ndarray:
    """X_i = gamma^{-1} <(omega, w), e~_i> with continuum conjugate modes
    evaluated on the grid (full vorticity, trapezoid rule in y)."""
    gamma = sim.gamma if gamma is None else gamma
    g = sim.grid
    y = g.y
    om_hat = state.omega_hat + sim.omega_bar_hat(state.w_hat)
    N = len(conj)
    X = np.zeros(2 * N)
    for n_, c in enumerate(conj):
        k = c.k
        # f = 2 Re(fhat_k e^{ikx}) + ...; <f, Re(g e^{ikx})> = 2 pi Re int fhat conj(g)
        z = 2 * np.pi * np.sum(g.trap * (om_hat[k] * np.conj(c.z_at(y)) + state.w_hat[k] * np.conj(c.theta_at(y))))
        X[n_] = z.real / gamma
        X[N + n_] = -z.imag / gamma
    return X


def random_sources(rng: np.random.Generator, h: float, delta1: float, size: int = 4, harmonics: int = 3,
                   u_scale: float = 0.5, eta_scale: float = 1.0) -> tuple[HeatSource2D, HeatSource2D]:
    """Seeded smooth u1 (supported above delta1) and mean-zero eta1 for test runs."""
    from .fields import YBasis

    a = max(0.5, 2 * delta1)
    b = min(4.0, 0.6 * h)
    if not a < b:
        raise PreconditionError("layer too thin for the default source window", h=h)
    basis = YBasis(a, b, size)
    shape = (harmonics + 1, size)
    u1 = HeatSource2D(basis, u_scale * rng.uniform(-1, 1, shape), u_scale * rng.uniform(-1, 1, shape))
    u1.cos[0] = 0.0
    u1.sin[0] = 0.0
    eta1 = HeatSource2D(basis, eta_scale * rng.uniform(-1, 1, shape), eta_scale * rng.uniform(-1, 1, shape))
    eta1.cos[0] = 0.0
    eta1.sin[0] = 0.0
    return u1, eta1


def track_reduced(sim: MarangoniSim, reduced, X0, T: float | None = None, samples: int = 20,
                  modes: dict | None = None, conj=None) -> dict:
    """Start the PDE at gamma * sum X0_a e_a and compare its slow
    projections with the reduced ODE dX/dt = gamma (G(X) + M X + f).

    Projections use the discrete left null vectors of the simulator, or the
    continuum conjugate modes when `conj` is given. The error is the sup over
    the samples of |X_pde - X_ode| divided by sup |X_ode|."""
    from scipy.integrate import solve_ivp

    g = sim.gamma
    T = 1.0 / (10.0 * g) if T is None else T
    modes = sim.discrete_modes() if modes is None else modes
    X0 = np.asarray(X0, dtype=float)
    st = sim.mode_state(g * X0, modes)
    every = max(1, int(round(T / sim.dt / samples)))
    if conj is None:
        proj = lambda s: sim.project_discrete(s, modes) / g
    else:
        proj = lambda s: project_slow(s, sim, conj)
    sim.reset()
    st, out = sim.run(st, T, every=every, callback=lambda s: (s.t, proj(s)))
    t = np.array([o[0] for o in out])
    Xp = np.array([o[1] for o in out])
    sol = solve_ivp(lambda _t, X: g * reduced.rhs_tau(X), (0.0, t[-1]), X0, t_eval=t,
                    rtol=1e-11, atol=1e-13)
    Xo = sol.y.T
    err = float(np.abs(Xp - Xo).max() / np.abs(Xo).max())
    return {"gamma": g, "T": float(t[-1]), "t": t, "X_pde": Xp, "X_ode": Xo, "error": err,
            "excursion": float(np.abs(Xo - X0).max())}


def gamma_scan(profile: HeatProfile, grid: Grid, gammas, X0, reduced, u1=None, eta1=None,
               dt: float = 0.05, conj=None) -> dict:
    """track_reduced over a list of gamma values with a fitted error exponent."""
    runs = []
    for g in gammas:
        sim = MarangoniSim(profile, grid, g, dt, u1=u1, eta1=eta1)
        runs.append(track_reduced(sim, reduced, X0, conj=conj))
    errs = np.array([r["error"] for r in runs])
    gam = np.asarray(gammas, dtype=float)
    slope = float(np.polyfit(np.log(gam), np.log(errs), 1)[0]) if len(gam) > 1 else float("nan")
    order = np.argsort(gam)
    monotone = bool(np.all(np.diff(errs[order]) > 0))
    return {"gammas": gam.tolist(), "errors": errs.tolist(), "exponent": slope,
            "monotone": monotone, "runs": runs}
