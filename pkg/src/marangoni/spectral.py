"""Per-wavenumber spectral problem of the linearized Marangoni system.

For a horizontal wavenumber k the eigenvalues lambda are the roots of
    F(k, lambda) = -k^2 int_0^h psi_k(y, lambda) rho_kbar(y) U_y(y) dy - 1,
with kbar = sqrt(k^2 + lambda) and k_nu = sqrt(k^2 + lambda/nu), psi_k the
stream function generated by a unit Marangoni forcing and rho_kbar the
boundary-trace weight of the Neumann heat problem. U_y is the gradient of
the base temperature that enters the heat equation (HeatProfile.base_Uy).

Root location uses the entire function
    E = e^{-kh} kbar sinh(kbar h) F,
which is even in kbar, hence single valued across the cut of the square
root, and whose zeros are exactly the eigenvalues.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import (BranchError, BudgetExceeded, BVPSingular, ContourThroughRoot,
                     DegeneratePairing, PoleError)
from .heatprofile import BASE_SIGN, HeatProfile, limit_transform
from .quadrature import GreenSolution, PanelGrid

TOL_ROOT = {"limit": 1e-10, "finite": 1e-8}
DEFAULT_REGION = (-2.0, 0.25, -5.0, 5.0)


# ---------------------------------------------------------------- unperturbed

def _cheb(n: int):
    """Chebyshev differentiation matrix on n+1 points of [-1, 1]."""
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    X = np.tile(x, (n + 1, 1)).T
    D = np.outer(c, 1.0 / c) / (X - X.T + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    return D, x


def _laplace_1d_eigs(h: float, bc: str, count: int, n: int = 64) -> np.ndarray:
    """Leading eigenvalues of d^2/dy^2 on (0, h) by Chebyshev collocation."""
    D, x = _cheb(n)
    D = D * (2.0 / h)
    D2 = D @ D
    if bc == "dirichlet":
        ev = linalg.eigvals(D2[1:-1, 1:-1])
    else:
        # eliminate the end values through the Neumann rows; the constant
        # mode survives the elimination as the zero eigenvalue
        inner = np.arange(1, n)
        ends = [0, n]
        B = D[np.ix_(ends, ends)]
        C = D[np.ix_(ends, inner)]
        elim = -np.linalg.solve(B, C)
        A = D2[np.ix_(inner, inner)] + D2[np.ix_(inner, ends)] @ elim
        ev = linalg.eigvals(A)
    ev = np.sort(ev.real)[::-1]
    return ev[:count]


def unperturbed_spectrum(h: float, nu: float, kmax: int, mmax: int,
                         method: str = "closed") -> list[tuple[int, int, float, str]]:
    """Both eigenvalue families of the profile-free problem.

    temperature: -m^2 pi^2 / h^2 - k^2, m = 0..mmax (Neumann)
    vorticity:   -nu n^2 pi^2 / h^2 - k^2, n = 1..mmax (Dirichlet)

    method="numeric" obtains the vertical eigenvalues from Chebyshev
    collocation of the 1D Laplacian instead of the closed form.
    """
    if kmax < 0 or mmax < 1:
        raise ValueError("need kmax >= 0 and mmax >= 1")
    if method == "closed":
        neu = -(np.arange(mmax + 1) * np.pi / h) ** 2
        dir_ = -(np.arange(1, mmax + 1) * np.pi / h) ** 2
    elif method == "numeric":
        neu = _laplace_1d_eigs(h, "neumann", mmax + 1)
        neu[0] = 0.0 if abs(neu[0]) < 1e-9 else neu[0]
        dir_ = _laplace_1d_eigs(h, "dirichlet", mmax)
    else:
        raise ValueError(method)
    out = []
    for k in range(kmax + 1):
        for m in range(mmax + 1):
            out.append((k, m, float(neu[m] - k * k), "temperature"))
        for n in range(1, mmax + 1):
            out.append((k, n, float(nu * dir_[n - 1] - k * k), "vorticity"))
    return out


# ---------------------------------------------------------------- kernels

def _sinhc(x):
    x = np.asarray(x, dtype=complex)
    out = np.ones_like(x)
    big = np.abs(x) > 1e-4
    out[big] = np.sinh(x[big]) / x[big]
    xs = x[~big]
    out[~big] = 1 + xs * xs / 6 + xs ** 4 / 120
    return out


def k_nu(k: float, lam, nu: float):
    a = np.sqrt(np.asarray(k * k + np.asarray(lam) / nu, dtype=complex))
    if np.any(a.real <= 0):
        raise BranchError("Re k_nu <= 0", k=k, lam=lam)
    return a


def psi_k(y, k: float, lam, nu: float, h: float):
    """Stream function of the unit Marangoni problem, shape lam.shape + y.shape.

    Written as a difference of two sinhc-regularized terms scaled by
    e^{-(k+k_nu)h}; the form is exact at lambda = 0, where it reduces to
        (y sinh(kh) cosh(k(h-y)) - h sinh(ky)) / (2k sinh^2(kh)),
    so no switch between formulas is needed.
    """
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=complex)
    a = k_nu(k, lam, nu)[..., None]
    b = float(k)
    s = a + b
    D = -(lam[..., None] / nu) / s
    n1 = (np.exp(-s * y / 2) - np.exp(-2 * s * h + s * y / 2)) / 2
    n2 = (np.exp(s * (y / 2 - h)) - np.exp(-s * (y / 2 + h))) / 2
    num = n1 * (y / 2) * _sinhc(D * y / 2) - ((2 * h - y) / 2) * _sinhc(D * (2 * h - y) / 2) * n2
    den = s * (1 - np.exp(-2 * a * h)) * (1 - np.exp(-2 * b * h)) / 4
    if np.any(np.abs(den) < 1e-300):
        raise PoleError("sinh(k_nu h) = 0", k=k, lam=lam)
    return num / den


def psi0(y, k: float, h: float):
    """psi_k at lambda = 0 (real), in scaled exponentials."""
    y = np.asarray(y, dtype=float)
    q = 1 - np.exp(-2 * k * h)
    c1 = (np.exp(-k * y) + np.exp(-k * (2 * h - y))) / q
    s2 = 2 * (np.exp(k * (y - 2 * h)) - np.exp(-k * (y + 2 * h))) / q ** 2
    return (y * c1 - h * s2) / (2 * k)


def dpsi0(y, k: float, h: float):
    y = np.asarray(y, dtype=float)
    q = 1 - np.exp(-2 * k * h)
    c1 = (np.exp(-k * y) + np.exp(-k * (2 * h - y))) / q
    s1 = (np.exp(-k * y) - np.exp(-k * (2 * h - y))) / q
    c2 = 2 * (np.exp(k * (y - 2 * h)) + np.exp(-k * (y + 2 * h))) / q ** 2
    return (c1 - k * y * s1 - h * k * c2) / (2 * k)


def rho_kbar(y, kbar, h: float):
    """cosh(kbar (h - y)) / (kbar sinh(kbar h)) for Re kbar > 0."""
    y = np.asarray(y, dtype=float)
    kb = np.asarray(kbar, dtype=complex)[..., None]
    if np.any(kb.real <= 0):
        raise BranchError("Re kbar <= 0", kbar=kbar)
    q = 1 - np.exp(-2 * kb * h)
    if np.any(np.abs(q) < 1e-300):
        raise PoleError("sinh(kbar h) = 0", kbar=kbar)
    out = (np.exp(-kb * y) + np.exp(-kb * (2 * h - y))) / (kb * q)
    return out[0] if np.ndim(kbar) == 0 else out


def sinh_ratio(y, k: float, h: float):
    """sinh(k(h-y)) / sinh(kh)."""
    y = np.asarray(y, dtype=float)
    return (np.exp(-k * y) - np.exp(-k * (2 * h - y))) / (1 - np.exp(-2 * k * h))


def cosh_ratio(y, k: float, h: float):
    """cosh(k(h-y)) / sinh(kh)."""
    y = np.asarray(y, dtype=float)
    return (np.exp(-k * y) + np.exp(-k * (2 * h - y))) / (1 - np.exp(-2 * k * h))


# ---------------------------------------------------------------- characteristic function

class Characteristic:
    """Vectorized F(k, lambda) and E(k, lambda) for one profile and k."""

    def __init__(self, k: int, profile: HeatProfile, nuMode: str = "finite",
                 grid: PanelGrid | None = None):
        if nuMode not in ("limit", "finite"):
            raise ValueError(nuMode)
        self.k = int(k)
        self.profile = profile
        self.nuMode = nuMode
        cfg = profile.config
        self.nu, self.h = cfg.nu, cfg.h
        g = grid or profile.grid
        uy = profile.base_Uy(g.nodes)
        keep = uy != 0
        self.y = g.nodes[keep]
        self.wu = g.weights[keep] * uy[keep]
        self.zero_profile = not np.any(keep)

    def _integral(self, lam):
        """int psi_k cosh(kbar(h-y)) e^{-kh} U_y dy, shape lam.shape."""
        k, h = self.k, self.h
        lam = np.asarray(lam, dtype=complex)
        if self.zero_profile:
            return np.zeros(lam.shape, dtype=complex)
        kb = np.sqrt(k * k + lam)[..., None]
        ch = (np.exp(kb * (h - self.y) - k * h) + np.exp(-kb * (h - self.y) - k * h)) / 2
        return np.sum(psi_k(self.y, k, lam, self.nu, h) * ch * self.wu, axis=-1)

    def _scale(self, lam):
        """e^{-kh} kbar sinh(kbar h)."""
        k, h = self.k, self.h
        kb = np.sqrt(k * k + np.asarray(lam, dtype=complex))
        return kb * (np.exp((kb - k) * h) - np.exp(-(kb + k) * h)) / 2

    def E(self, lam):
        lam = np.asarray(lam, dtype=complex)
        if self.nuMode == "limit":
            return self.F(lam)
        return -self.k ** 2 * self._integral(lam) - self._scale(lam)

    def F(self, lam):
        lam = np.asarray(lam, dtype=complex)
        k = self.k
        if self.nuMode == "limit":
            kb = np.sqrt(k * k + lam)
            if np.any(kb.real <= 0):
                raise BranchError("Re kbar <= 0", lam=lam)
            integral = limit_transform(k + kb, self.profile)
            return -BASE_SIGN * (k / kb) * integral - 2.0
        sc = self._scale(lam)
        if np.any(np.abs(sc) < 1e-300):
            raise PoleError("sinh(kbar h) = 0", lam=lam)
        return self.E(lam) / sc


def characteristic_residual(k: int, lam, profile: HeatProfile, nuMode: str = "finite",
                            grid: PanelGrid | None = None):
    """F(k, lambda); zero iff lambda is an eigenvalue (scalar or array lambda)."""
    out = Characteristic(k, profile, nuMode, grid).F(lam)
    return complex(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- root finding

@dataclass
class RootRecord:
    lam: complex
    residual: float
    multiplicity: int = 1


@dataclass
class SpectrumReport:
    perK: dict
    gap: float
    zeroModes: list
    nuMode: str
    region: tuple
    windings: dict = field(default_factory=dict)
    gap_is_bound: bool = False
    unstable: list = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return not self.unstable and self.gap > 0

    @property
    def multiplicity_complex(self) -> int:
        return len(self.zeroModes)

    @property
    def multiplicity_real(self) -> int:
        return 2 * len(self.zeroModes) + 1

    def table(self) -> list[tuple[int, float, float, float]]:
        rows = []
        for k in sorted(self.perK):
            for r in self.perK[k]:
                rows.append((k, r.lam.real, r.lam.imag, r.residual))
        return rows

    def to_dict(self) -> dict:
        return {"nuMode": self.nuMode, "region": list(self.region), "gap": self.gap,
                "gap_is_bound": self.gap_is_bound, "zeroModes": list(self.zeroModes),
                "multiplicity": {"complex": self.multiplicity_complex,
                                 "real": self.multiplicity_real},
                "windings": {str(k): v for k, v in self.windings.items()},
                "roots": [{"k": k, "re": a, "im": b, "residual": r} for k, a, b, r in self.table()],
                "unstable": [{"k": k, "re": r.lam.real, "im": r.lam.imag, "residual": r.residual}
                             for k, r in self.unstable]}


class _RootSearch:
    def __init__(self, fun: Callable, resid: Callable, tol: float, max_boxes: int = 4000,
                 min_size: float = 1e-9):
        self.fun = fun
        self.resid = resid
        self.tol = tol
        self.max_boxes = max_boxes
        self.min_size = min_size
        self.boxes = 0

    def winding(self, box, n0: int = 128, max_pts: int = 1 << 16) -> int:
        x0, x1, y0, y1 = box
        corners = np.array([x0 + 1j * y0, x1 + 1j * y0, x1 + 1j * y1, x0 + 1j * y1, x0 + 1j * y0])

        def point(t):
            i = np.minimum(np.floor(t).astype(int), 3)
            f = t - i
            return corners[i] + f * (corners[i + 1] - corners[i])

        t = np.linspace(0.0, 4.0, 4 * n0 + 1)
        vals = self.fun(point(t))
        previous = None
        while True:
            if not np.all(np.isfinite(vals)):
                raise ContourThroughRoot("non-finite values on contour", box=box)
            # |E| varies by e^{O(h)} along the contour, so only exact zeros are flagged
            if np.any(vals == 0):
                raise ContourThroughRoot("characteristic function vanishes on contour", box=box)
            dphi = np.angle(vals[1:] / vals[:-1])
            bad = np.abs(dphi) > np.pi / 8
            if not np.any(bad):
                w = np.sum(dphi) / (2 * np.pi)
                if previous is not None and abs(w - previous) < 1e-6:
                    break
                previous = w
                bad = np.ones_like(bad)  # confirm under one global bisection
            if len(t) > max_pts:
                raise ContourThroughRoot("contour refinement budget exhausted", box=box)
            mid = (t[:-1][bad] + t[1:][bad]) / 2
            mv = self.fun(point(mid))
            t = np.concatenate([t, mid])
            vals = np.concatenate([vals, mv])
            order = np.argsort(t)
            t, vals = t[order], vals[order]
        n = int(round(w))
        if abs(w - n) > 1e-3:
            raise ContourThroughRoot("non-integer winding number", box=box, winding=w)
        return n

    def newton(self, z0: complex, box, iters: int = 60):
        x0, x1, y0, y1 = box
        z = complex(z0)
        for _ in range(iters):
            eps = 1e-6 * (1.0 + abs(z))
            f, fp, fm = self.fun(np.array([z, z + eps, z - eps]))
            d = (fp - fm) / (2 * eps)
            if d == 0 or not np.isfinite(d):
                return None
            step = f / d
            z = z - step
            if not (x0 - 1e-9 <= z.real <= x1 + 1e-9 and y0 - 1e-9 <= z.imag <= y1 + 1e-9):
                return None
            if abs(step) < 1e-14 * (1.0 + abs(z)):
                break
        return z

    def search(self, box, n: int | None = None, frac: float = 0.5371):
        self.boxes += 1
        if self.boxes > self.max_boxes:
            raise BudgetExceeded("box budget exhausted", boxes=self.boxes)
        if n is None:
            n = self.winding(box)
        if n == 0:
            return []
        x0, x1, y0, y1 = box
        size = max(x1 - x0, y1 - y0)
        center = complex((x0 + x1) / 2, (y0 + y1) / 2)
        if n == 1:
            z = self.newton(center, box)
            if z is not None:
                return [RootRecord(z, float(abs(self.resid(z))))]
        if size < self.min_size:
            z = self.newton(center, box) or center
            return [RootRecord(z, float(abs(self.resid(z))), n)]
        for f in (frac, 1 - frac + 0.0123, 0.4262, 0.6113):
            if x1 - x0 >= y1 - y0:
                s = x0 + f * (x1 - x0)
                parts = [(x0, s, y0, y1), (s, x1, y0, y1)]
            else:
                s = y0 + f * (y1 - y0)
                parts = [(x0, x1, y0, s), (x0, x1, s, y1)]
            try:
                counts = [self.winding(p) for p in parts]
            except ContourThroughRoot:
                continue
            if sum(counts) != n:
                continue
            out = []
            for p, c in zip(parts, counts):
                out += self.search(p, c, frac)
            return out
        raise ContourThroughRoot("could not split box without crossing a root", box=box)


def _clip_region(region, k: int, nuMode: str, margin: float = 0.05):
    x0, x1, y0, y1 = region
    if nuMode == "limit":
        x0 = max(x0, -k * k + margin)
    return (x0, x1, y0, y1)


def find_roots(k: int, profile: HeatProfile, region=DEFAULT_REGION, nuMode: str = "finite",
               tol: float | None = None, max_boxes: int = 4000) -> list[RootRecord]:
    """All eigenvalues in region = (re_min, re_max, im_min, im_max).

    Argument-principle box subdivision with Newton polish. In limit mode
    the region is clipped to Re lambda > -k^2 (branch cut of kbar).
    """
    roots, _ = _find_roots(k, profile, region, nuMode, tol, max_boxes)
    return roots


def _find_roots(k, profile, region, nuMode, tol, max_boxes, use_F: bool = False):
    ch = Characteristic(k, profile, nuMode)
    tol = TOL_ROOT[nuMode] if tol is None else tol
    box = _clip_region(region, k, nuMode)
    # F has no poles in Re lambda > -k^2, so it can replace E to the right of that line
    search = _RootSearch(ch.F if use_F else ch.E, ch.F, tol, max_boxes)
    n = search.winding(box)
    roots = search.search(box, n)
    roots.sort(key=lambda r: (-r.lam.real, r.lam.imag))
    found = sum(r.multiplicity for r in roots)
    return roots, {"box": box, "winding": n, "found": found}


def scan_spectrum(profile: HeatProfile, nuMode: str = "finite", region=DEFAULT_REGION,
                  Kmax: int | None = None, zero_tol: float = 1e-6,
                  rhp: tuple[float, float] | None = (30.0, 30.0)) -> SpectrumReport:
    """Root scan over k = 1..Kmax; the gap is minus the largest real part
    among roots other than the tuned zeros. If no such root lies in the
    region the box depth is reported as a lower bound for the gap.

    With rhp = (re_max, im_max) the box (region re_max, re_max] x [-im_max, im_max]
    is searched as well; roots found there are listed in `unstable` and
    enter the gap (which then is negative)."""
    cfg = profile.config
    Kmax = Kmax or cfg.Kmax
    perK, wind, zero, unstable = {}, {}, [], []
    top = -np.inf
    depth = np.inf
    for k in range(1, Kmax + 1):
        roots, info = _find_roots(k, profile, region, nuMode, None, 4000)
        perK[k] = roots
        wind[k] = info
        depth = min(depth, -info["box"][0])
        for r in roots:
            if k <= cfg.N and abs(r.lam) < zero_tol:
                zero.append(k)
                continue
            top = max(top, r.lam.real)
        if rhp is not None:
            box = (region[1], float(rhp[0]), -float(rhp[1]), float(rhp[1]))
            far, finfo = _find_roots(k, profile, box, nuMode, None, 4000, use_F=True)
            wind[k] = dict(info, rhp_box=finfo["box"], rhp_winding=finfo["winding"], rhp_found=finfo["found"])
            for r in far:
                unstable.append((k, r))
                top = max(top, r.lam.real)
    if np.isfinite(top):
        gap, bound = -top, False
    else:
        gap, bound = float(depth), True
    return SpectrumReport(perK, float(gap), zero, nuMode, tuple(region), wind, bound, unstable)


# ---------------------------------------------------------------- eigenfunctions

@dataclass
class SpectralMode:
    """Direct eigenfunction at a tuned zero, complex form e^{ikx}(omega, psi, theta).

    omega = i k A sinh(k(h-y))/sinh(kh), psi = i k A psi0(y),
    theta'' - k^2 theta = k^2 psi0 U_y with Neumann ends and theta(0) = A.
    """
    k: int
    lam: complex
    A: complex
    h: float
    grid: PanelGrid = field(repr=False)
    _theta: GreenSolution = field(repr=False)

    @property
    def omega(self):
        return self.omega_at(self.grid.nodes)

    @property
    def psi(self):
        return self.psi_at(self.grid.nodes)

    @property
    def theta(self):
        return self.theta_at(self.grid.nodes)

    def omega_at(self, y):
        return self.A * 1j * self.k * sinh_ratio(y, self.k, self.h)

    def domega_at(self, y):
        k, h = self.k, self.h
        return -self.A * 1j * k * k * cosh_ratio(y, k, h)

    def psi_at(self, y):
        return self.A * 1j * self.k * psi0(y, self.k, self.h)

    def dpsi_at(self, y):
        return self.A * 1j * self.k * dpsi0(y, self.k, self.h)

    def theta_at(self, y):
        return self.A * self._theta(y)

    def dtheta_at(self, y):
        return self.A * self._theta.deriv(y)

    def scaled(self, c: complex) -> "SpectralMode":
        return SpectralMode(self.k, self.lam, self.A * c, self.h, self.grid, self._theta)


@dataclass
class ConjugateMode:
    """Conjugate eigenfunction e^{ikx}(z, theta_tilde) pairing with (omega, w).

    theta_tilde = Atilde thetaBar, thetaBar = cosh(k(h-y))/sinh(kh);
    Phi'' - k^2 Phi = Atilde U_y thetaBar, zeta'' - k^2 zeta = -i k Phi,
    both with Dirichlet ends, and z = zeta / nu.
    """
    k: int
    Atilde: complex
    h: float
    nu: float
    grid: PanelGrid = field(repr=False)
    _Phi: GreenSolution = field(repr=False)
    _zeta: GreenSolution = field(repr=False)

    @property
    def thetaBar(self):
        return cosh_ratio(self.grid.nodes, self.k, self.h)

    @property
    def Phi(self):
        return self.Atilde * self._Phi(self.grid.nodes)

    @property
    def zeta(self):
        return self.Atilde * self._zeta(self.grid.nodes)

    def theta_at(self, y):
        return self.Atilde * cosh_ratio(y, self.k, self.h)

    def dtheta_at(self, y):
        return -self.Atilde * self.k * sinh_ratio(y, self.k, self.h)

    def zeta_at(self, y):
        return self.Atilde * self._zeta(y)

    def dzeta_at(self, y):
        return self.Atilde * self._zeta.deriv(y)

    def z_at(self, y):
        return self.zeta_at(y) / self.nu

    def dz_at(self, y):
        return self.dzeta_at(y) / self.nu

    def Phi_at(self, y):
        return self.Atilde * self._Phi(y)

    def scaled(self, c: complex) -> "ConjugateMode":
        return ConjugateMode(self.k, self.Atilde * c, self.h, self.nu, self.grid, self._Phi, self._zeta)


def _mode_grid(profile: HeatProfile, grid: PanelGrid | None) -> PanelGrid:
    return grid or profile.grid


def build_mode(k: int, profile: HeatProfile, lam: complex = 0.0,
               grid: PanelGrid | None = None) -> SpectralMode:
    if k < 1:
        raise BVPSingular("k must be >= 1 for the heat two-point problem", k=k)
    if abs(lam) > 1e-6:
        raise ValueError("modes are built at tuned zeros only")
    cfg = profile.config
    g = _mode_grid(profile, grid)
    h = cfg.h

    def rhs(y):
        return k * k * psi0(y, k, h) * profile.base_Uy(y)

    theta = GreenSolution(k, rhs, g, "neumann")
    return SpectralMode(int(k), complex(lam), 1.0 + 0j, h, g, theta)


def build_conjugate_mode(k: int, profile: HeatProfile, grid: PanelGrid | None = None) -> ConjugateMode:
    if k < 1:
        raise BVPSingular("k must be >= 1", k=k)
    cfg = profile.config
    g = _mode_grid(profile, grid)
    h = cfg.h

    def rhs_phi(y):
        return profile.base_Uy(y) * cosh_ratio(y, k, h)

    Phi = GreenSolution(k, rhs_phi, g, "dirichlet")

    def rhs_zeta(y):
        return -1j * k * Phi(y)

    zeta = GreenSolution(k, rhs_zeta, g, "dirichlet")
    return ConjugateMode(int(k), 1.0 + 0j, h, cfg.nu, g, Phi, zeta)


def pairing(mode: SpectralMode, conj: ConjugateMode) -> complex:
    """P = int (omega conj(z) + theta conj(theta_tilde)) dy; the real-form
    inner products are <e+, e~+> = <e-, e~-> = pi Re P and
    <e+, e~-> = -<e-, e~+> = pi Im P."""
    g = mode.grid
    y = g.nodes
    v = mode.omega_at(y) * np.conj(conj.z_at(y)) + mode.theta_at(y) * np.conj(conj.theta_at(y))
    return complex(g.integrate(v))


def biorthogonalize(modes: Sequence[SpectralMode], conj: Sequence[ConjugateMode]):
    """Rescale Atilde_k so that pi * P_k = 1 (A_k stays 1)."""
    if len(modes) != len(conj):
        raise ValueError("need equal numbers of direct and conjugate modes")
    out_m, out_c = [], []
    for m, c in zip(modes, conj):
        if m.k != c.k:
            raise ValueError(f"wavenumber mismatch {m.k} vs {c.k}")
        p = pairing(m, c)
        if abs(p) < 1e-12:
            raise DegeneratePairing("pairing vanishes", k=m.k, pairing=p)
        # P is antilinear in Atilde
        out_m.append(m)
        out_c.append(c.scaled(1.0 / (np.pi * np.conj(p))))
    return out_m, out_c


def trivial_pair(h: float):
    """e0 = (0, 1) and e~0 = (0, 1/(2 pi h))."""
    return (0.0, 1.0), (0.0, 1.0 / (2 * np.pi * h))


def tuned_modes(profile: HeatProfile, grid: PanelGrid | None = None):
    """Biorthogonalized direct and conjugate modes for k = 1..N."""
    ks = range(1, profile.config.N + 1)
    modes = [build_mode(k, profile, grid=grid) for k in ks]
    conj = [build_conjugate_mode(k, profile, grid=grid) for k in ks]
    return biorthogonalize(modes, conj)


def gram_matrix(modes: Sequence[SpectralMode], conj: Sequence[ConjugateMode],
                grid: PanelGrid | None = None, nx: int | None = None) -> np.ndarray:
    """Real-form Gram matrix <e_a, e~_b> over the strip, basis order
    (e0, e_1^+, ..., e_N^+, e_1^-, ..., e_N^-), with
    <(omega, theta), (z, theta~)> = int int omega z + theta theta~ dx dy.

    Computed by direct 2D quadrature: uniform x nodes (exact for the
    trigonometric products) times the panel rule in y."""
    g = grid or modes[0].grid
    h = modes[0].h
    y, wy = g.nodes, g.weights
    kmax = max(m.k for m in modes)
    nx = nx or 4 * kmax + 4
    x = 2 * np.pi * np.arange(nx) / nx
    ex = np.exp(1j * np.multiply.outer(x, [m.k for m in modes]))     # (nx, N)

    def real_forms(a, b):
        # a, b: (N, ny) complex profiles -> (2N, nx, ny) real parts then imaginary parts
        A = ex.T[:, :, None] * a[:, None, :]
        B = ex.T[:, :, None] * b[:, None, :]
        return np.concatenate([A.real, A.imag]), np.concatenate([B.real, B.imag])

    om, th = real_forms(np.array([m.omega_at(y) for m in modes]), np.array([m.theta_at(y) for m in modes]))
    z, tt = real_forms(np.array([c.z_at(y) for c in conj]), np.array([c.theta_at(y) for c in conj]))
    (_, t0), (_, tt0) = trivial_pair(h)
    n = 2 * len(modes) + 1
    Om = np.concatenate([np.zeros((1, nx, len(y))), om])
    Th = np.concatenate([np.full((1, nx, len(y)), t0), th])
    Z = np.concatenate([np.zeros((1, nx, len(y))), z])
    TT = np.concatenate([np.full((1, nx, len(y)), tt0), tt])
    wxy = (2 * np.pi / nx) * wy[None, :]
    G = np.einsum("axy,bxy,xy->ab", Om, Z, np.broadcast_to(wxy, Om.shape[1:])) \
        + np.einsum("axy,bxy,xy->ab", Th, TT, np.broadcast_to(wxy, Om.shape[1:]))
    return G.reshape(n, n)
