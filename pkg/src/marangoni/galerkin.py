"""Reduced slow-mode system dX/dtau = G(X) + M X + f, tau = gamma t.

Slow amplitudes are X = (X_1^+, ..., X_N^+, X_1^-, ..., X_N^-) with real
eigenfunctions e^+ = Re(e^{ikx} e_k), e^- = Im(e^{ikx} e_k). Projecting
the perturbation equations
    w_t = Delta w - {psi, U + gamma u1 + w} + gamma^2 eta1,
    omega_t = nu Delta omega - {psi, omega},
onto the conjugate modes gives
    G_i(X) = -<{R_psi, R_w}, theta~_i> - <{R_psi, R_omega}, z_i>,
    M_ia   = -<{psi_a, u1}, theta~_i>,
    f_i    = <eta1, theta~_i>,
with R_*(X) = sum_a X_a (*)_a.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MeanViolation, MismatchedBases
from .fields import FourierField, HeatSource2D, YBasis, bracket, pairing
from .quadrature import PanelGrid
from .spectral import ConjugateMode, SpectralMode


@dataclass
class ModeFields:
    """Real-form mode fields sampled on a common y grid."""
    ks: list
    y: np.ndarray
    w: np.ndarray
    psi: list
    omega: list
    theta: list
    ttheta: list
    z: list

    @property
    def n(self) -> int:
        return len(self.psi)


def mode_fields(modes: Sequence[SpectralMode], conj: Sequence[ConjugateMode],
                grid: PanelGrid | None = None) -> ModeFields:
    if len(modes) != len(conj) or any(m.k != c.k for m, c in zip(modes, conj)):
        raise MismatchedBases("direct and conjugate modes do not match")
    g = grid or modes[0].grid
    y = g.nodes
    psi, om, th, tt, z = [], [], [], [], []
    for part in (FourierField.real_part, FourierField.imag_part):
        for m, c in zip(modes, conj):
            k = m.k
            psi.append(part(k, m.psi_at(y), m.dpsi_at(y)))
            om.append(part(k, m.omega_at(y), m.domega_at(y)))
            th.append(part(k, m.theta_at(y), m.dtheta_at(y)))
            tt.append(part(k, c.theta_at(y), c.dtheta_at(y)))
            z.append(part(k, c.z_at(y), c.dz_at(y)))
    return ModeFields([m.k for m in modes], y, g.weights, psi, om, th, tt, z)


def _stack(fields: Sequence[FourierField], axis_len: int, pos: int) -> FourierField:
    """Combine fields into one with a leading index axis (None where absent)."""
    ms = sorted({m for f in fields for m in f})
    ny = len(next(iter(fields[0].values()))[0])
    out = FourierField()
    for m in ms:
        v = np.zeros((len(fields), ny), dtype=complex)
        d = np.zeros_like(v)
        for a, f in enumerate(fields):
            if m in f:
                v[a], d[a] = f[m]
        shape = [1] * axis_len
        shape[pos] = len(fields)
        out[m] = (v.reshape(shape + [ny]), d.reshape(shape + [ny]))
    return out


def compute_G(modes, conj, asymptotic: bool = False, grid: PanelGrid | None = None,
              fields: ModeFields | None = None) -> np.ndarray:
    """Quadratic tensor K[i, a, b] with G_i(X) = sum_ab K[i,a,b] X_a X_b.

    In asymptotic mode the conjugate-vorticity terms (order 1/nu) are dropped."""
    mf = fields or mode_fields(modes, conj, grid)
    P = _stack(mf.psi, 3, 1)        # (1, a, 1, y)
    T = _stack(mf.theta, 3, 2)      # (1, 1, b, y)
    TT = _stack(mf.ttheta, 3, 0)    # (i, 1, 1, y)
    K = -pairing(bracket(P, T), TT, mf.w)
    if not asymptotic:
        O = _stack(mf.omega, 3, 2)
        Z = _stack(mf.z, 3, 0)
        K = K - pairing(bracket(P, O), Z, mf.w)
    return np.broadcast_to(K, (mf.n,) * 3).copy()


def source_response(basis: YBasis, M: int, modes, conj, grid: PanelGrid | None = None,
                    fields: ModeFields | None = None):
    """Linear maps from source coefficients to M and f.

    Returns (RM, Rf) with RM[i, a, m, c, j] = M_ia for the unit source
    cos(mx) phi_j (c = 0) or sin(mx) phi_j (c = 1), and Rf[i, m, c, j]
    the corresponding <source, theta~_i>."""
    mf = fields or mode_fields(modes, conj, grid)
    y = mf.y
    phi, dphi = basis.values(y)
    nb = basis.size
    n = mf.n
    RM = np.zeros((n, n, M + 1, 2, nb))
    Rf = np.zeros((n, M + 1, 2, nb))
    P = _stack(mf.psi, 3, 1)      # (1, a, 1, y)
    TT = _stack(mf.ttheta, 3, 0)  # (i, 1, 1, y)
    TTf = _stack(mf.ttheta, 2, 0)  # (i, 1, y)
    for m in range(M + 1):
        for c in (0, 1):
            if m == 0 and c == 1:
                continue
            F = phi + 0j
            dF = dphi + 0j
            part = FourierField.real_part if c == 0 else FourierField.imag_part
            # cos(mx) phi = Re(phi e^{imx}), sin(mx) phi = Im(phi e^{imx})
            src = part(m, F[None, None, :, :], dF[None, None, :, :]) if m else \
                FourierField({0: (F[None, None, :, :], dF[None, None, :, :])})
            RM[:, :, m, c, :] = -pairing(bracket(P, src), TT, mf.w)
            srcf = FourierField({q: (v[0], d[0]) for q, (v, d) in src.items()})
            Rf[:, m, c, :] = pairing(srcf, TTf, mf.w)
    return RM, Rf


def _coeff_tensor(u: HeatSource2D) -> np.ndarray:
    return np.stack([u.cos, u.sin], axis=1)  # (M+1, 2, nb)


def compute_M(u1: HeatSource2D, modes, conj, delta1: float | None = None,
              grid: PanelGrid | None = None, fields: ModeFields | None = None) -> np.ndarray:
    if delta1 is not None:
        u1.check_support(delta1)
    RM, _ = source_response(u1.basis, u1.M, modes, conj, grid, fields)
    return np.einsum("iamcj,mcj->ia", RM, _coeff_tensor(u1))


def compute_f(eta1: HeatSource2D, conj, modes=None, grid: PanelGrid | None = None,
              fields: ModeFields | None = None) -> np.ndarray:
    """f_i = <eta1, theta~_i>; rejects sources with nonzero mean."""
    g = grid or conj[0].grid
    mean = eta1.mean(g.weights, g.nodes)
    scale = eta1.norm()
    if abs(mean) > 1e-10 * max(scale, 1e-300):
        raise MeanViolation(f"<eta1, 1> = {mean:.3e} is not zero")
    y = g.nodes
    src = eta1.to_field(y)
    out = []
    for part in (FourierField.real_part, FourierField.imag_part):
        for c in conj:
            out.append(pairing(src, part(c.k, c.theta_at(y), c.dtheta_at(y)), g.weights))
    return np.array(out, dtype=float)


@dataclass
class ReducedSystem:
    N: int
    G: np.ndarray
    M: np.ndarray
    f: np.ndarray
    gamma: float
    ks: list = field(default_factory=list)

    def __post_init__(self):
        n = 2 * self.N
        self.G = np.asarray(self.G, dtype=float).reshape(n, n, n)
        self.M = np.asarray(self.M, dtype=float).reshape(n, n)
        self.f = np.asarray(self.f, dtype=float).reshape(n)
        if not self.ks:
            self.ks = list(range(1, self.N + 1))

    def rhs_tau(self, X):
        """Right-hand side in slow time tau = gamma t."""
        X = np.asarray(X, dtype=float)
        return np.einsum("iab,a...,b...->i...", self.G, X, X) + self.M @ X + self.f

    def rhs_t(self, X):
        return self.gamma * self.rhs_tau(X)

    def jacobian_tau(self, X):
        X = np.asarray(X, dtype=float)
        return np.einsum("iab,b->ia", self.G, X) + np.einsum("iab,a->ib", self.G, X) + self.M

    def blocks(self) -> dict:
        """Sign blocks B[s](j, l, i): G_i^+ = sum B['+++'] X_j^+ X_l^+ + B['--+'] X_j^- X_l^-,
        G_i^- = sum B['+--'] X_j^+ X_l^-."""
        n = self.N
        Ks = (self.G + self.G.transpose(0, 2, 1)) / 2
        P, Mn = slice(0, n), slice(n, 2 * n)
        return {
            "+++": Ks[P, P, P].transpose(1, 2, 0),
            "--+": Ks[P, Mn, Mn].transpose(1, 2, 0),
            "+--": 2 * Ks[Mn, P, Mn].transpose(1, 2, 0),
            # blocks that parity forces to vanish
            "+-+": 2 * Ks[P, P, Mn].transpose(1, 2, 0),
            "++-": Ks[Mn, P, P].transpose(1, 2, 0),
            "---": Ks[Mn, Mn, Mn].transpose(1, 2, 0),
        }

    def M_blocks(self) -> dict:
        n = self.N
        return {"++": self.M[:n, :n], "+-": self.M[:n, n:], "-+": self.M[n:, :n], "--": self.M[n:, n:]}

    def to_dict(self) -> dict:
        idx = np.argwhere(np.abs(self.G) > 0)
        return {"N": self.N, "gamma": self.gamma, "ks": list(self.ks),
                "G": [[int(i), int(a), int(b), float(self.G[i, a, b])] for i, a, b in idx],
                "M": self.M.tolist(), "f": self.f.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ReducedSystem":
        n = 2 * d["N"]
        G = np.zeros((n, n, n))
        for i, a, b, v in d["G"]:
            G[i, a, b] = v
        return cls(d["N"], G, np.array(d["M"]), np.array(d["f"]), d["gamma"], d.get("ks", []))


def assemble_reduced(profile, u1: HeatSource2D | None, eta1: HeatSource2D | None, gamma: float,
                     modes=None, conj=None, asymptotic: bool = False,
                     grid: PanelGrid | None = None) -> ReducedSystem:
    from .spectral import tuned_modes

    if modes is None or conj is None:
        modes, conj = tuned_modes(profile)
    mf = mode_fields(modes, conj, grid)
    n = 2 * len(modes)
    G = compute_G(modes, conj, asymptotic, fields=mf)
    M = np.zeros((n, n)) if u1 is None else compute_M(u1, modes, conj, profile.delta1, fields=mf)
    f = np.zeros(n) if eta1 is None else compute_f(eta1, conj, grid=grid)
    return ReducedSystem(len(modes), G, M, f, gamma, [m.k for m in modes])
