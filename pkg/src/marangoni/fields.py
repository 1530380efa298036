"""Fourier-in-x fields with sampled y-profiles, the Poisson bracket and
the L^2 pairing on the periodic strip [0, 2pi) x (0, h).

A real field is stored as {m: (F_m, dF_m/dy)} with
    f(x, y) = sum_m F_m(y) e^{imx},   F_{-m} = conj(F_m),
so x-integrals reduce to harmonic selection rules and only the y
quadrature is numerical.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SupportViolation

TWO_PI = 2.0 * np.pi


class FourierField(dict):
    """Mapping m -> (values, y-derivatives); arrays share the last axis (y nodes)."""

    @classmethod
    def real_part(cls, k: int, F, dF=None) -> "FourierField":
        """Re(F(y) e^{ikx})."""
        dF = np.zeros_like(F) if dF is None else dF
        if k == 0:
            return cls({0: (np.real(F) + 0j, np.real(dF) + 0j)})
        return cls({k: (F / 2, dF / 2), -k: (np.conj(F) / 2, np.conj(dF) / 2)})

    @classmethod
    def imag_part(cls, k: int, F, dF=None) -> "FourierField":
        """Im(F(y) e^{ikx})."""
        dF = np.zeros_like(F) if dF is None else dF
        if k == 0:
            return cls({0: (np.imag(F) + 0j, np.imag(dF) + 0j)})
        return cls({k: (F / 2j, dF / 2j), -k: (-np.conj(F) / 2j, -np.conj(dF) / 2j)})

    def __add__(self, other: "FourierField") -> "FourierField":
        out = FourierField(self)
        for m, (v, d) in other.items():
            if m in out:
                out[m] = (out[m][0] + v, out[m][1] + d)
            else:
                out[m] = (v, d)
        return out

    def scale(self, c) -> "FourierField":
        return FourierField({m: (c * v, c * d) for m, (v, d) in self.items()})

    def evaluate(self, x, component: int = 0):
        """Real samples on the tensor grid x (leading) by y (trailing)."""
        x = np.asarray(x, dtype=float)
        out = 0.0
        for m, pair in self.items():
            out = out + np.multiply.outer(np.exp(1j * m * x), pair[component])
        return np.real(out)


def bracket(A: FourierField, B: FourierField) -> FourierField:
    """{A, B} = A_y B_x - A_x B_y; derivatives of the result are not formed."""
    out: dict[int, np.ndarray] = {}
    for p, (a, da) in A.items():
        for q, (b, db) in B.items():
            term = 1j * q * da * b - 1j * p * a * db
            m = p + q
            out[m] = out[m] + term if m in out else term
    return FourierField({m: (v, np.zeros_like(v)) for m, v in out.items()})


def pairing(F: FourierField, G: FourierField, weights: np.ndarray):
    """int int F G dx dy = 2 pi sum_m int F_m conj(G_m) dy (real fields).

    Leading axes of F and G broadcast against each other."""
    total = 0.0
    for m, (f, _) in F.items():
        if m in G:
            g = G[m][0]
            total = total + np.sum(f * np.conj(g) * weights, axis=-1)
    return TWO_PI * np.real(total)


@dataclass(frozen=True)
class YBasis:
    """phi_j(y) = W(t) P_j(t), t = (2y - a - b)/(b - a), with the smooth
    window W(t) = exp(1 - 1/(1 - t^2)) supported in (a, b)."""

    a: float
    b: float
    size: int

    def __post_init__(self):
        if not (0 <= self.a < self.b) or self.size < 1:
            raise ValueError("need 0 <= a < b and size >= 1")

    def _t(self, y):
        return (2 * np.asarray(y, dtype=float) - self.a - self.b) / (self.b - self.a)

    def values(self, y, second: bool = False):
        """(phi, phi_y[, phi_yy]), each of shape (size, len(y))."""
        t = self._t(y)
        inside = np.abs(t) < 1
        W = np.zeros_like(t)
        g = np.zeros_like(t)
        gp = np.zeros_like(t)
        ti = t[inside]
        q = 1 - ti ** 2
        W[inside] = np.exp(1 - 1 / q)
        g[inside] = -2 * ti / q ** 2
        gp[inside] = -2 / q ** 2 - 8 * ti ** 2 / q ** 3
        tc = np.clip(t, -1, 1)
        L = np.polynomial.legendre
        V = L.legvander(tc, self.size - 1).T
        dV = np.empty_like(V)
        d2V = np.empty_like(V)
        for j in range(self.size):
            c = np.zeros(j + 1)
            c[j] = 1.0
            dV[j] = L.legval(tc, L.legder(c))
            d2V[j] = L.legval(tc, L.legder(c, 2))
        s = 2.0 / (self.b - self.a)
        dW = W * g
        phi, dphi = W * V, s * (dW * V + W * dV)
        if not second:
            return phi, dphi
        d2W = W * (g * g + gp)
        return phi, dphi, s * s * (d2W * V + 2 * dW * dV + W * d2V)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "size": self.size}


@dataclass
class HeatSource2D:
    """u(x, y) = sum_m [c_m(y) cos(mx) + s_m(y) sin(mx)], m = 0..M, with
    c_m, s_m expanded in a YBasis (coefficient rows cos[m], sin[m])."""

    basis: YBasis
    cos: np.ndarray
    sin: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cos = np.atleast_2d(np.asarray(self.cos, dtype=float))
        self.sin = np.atleast_2d(np.asarray(self.sin, dtype=float))
        if self.cos.shape != self.sin.shape or self.cos.shape[1] != self.basis.size:
            raise ValueError("coefficient tables must be (M+1, basis.size)")

    @classmethod
    def zeros(cls, basis: YBasis, M: int) -> "HeatSource2D":
        return cls(basis, np.zeros((M + 1, basis.size)), np.zeros((M + 1, basis.size)))

    @property
    def M(self) -> int:
        return self.cos.shape[0] - 1

    @property
    def support(self) -> tuple[float, float]:
        return self.basis.a, self.basis.b

    def check_support(self, delta1: float):
        if self.basis.a <= delta1 and (np.any(self.cos) or np.any(self.sin)):
            raise SupportViolation(f"source support starts at {self.basis.a} <= delta1 = {delta1}")

    def to_field(self, y) -> FourierField:
        phi, dphi = self.basis.values(y)
        out = FourierField()
        for m in range(self.M + 1):
            c = self.cos[m] @ phi + 0j
            dc = self.cos[m] @ dphi + 0j
            if m == 0:
                out[0] = (c, dc)
                continue
            s = self.sin[m] @ phi
            ds = self.sin[m] @ dphi
            # c cos + s sin = Re((c - i s) e^{imx})
            out[m] = ((c - 1j * s) / 2, (dc - 1j * ds) / 2)
            out[-m] = ((c + 1j * s) / 2, (dc + 1j * ds) / 2)
        return out

    def profiles(self, y) -> tuple[np.ndarray, np.ndarray]:
        """(c_m(y), s_m(y)) with shape (M+1, len(y))."""
        phi, _ = self.basis.values(y)
        return self.cos @ phi, self.sin @ phi

    def evaluate(self, x, y):
        c, s = self.profiles(y)
        m = np.arange(self.M + 1)
        x = np.asarray(x, dtype=float)
        return np.cos(np.multiply.outer(x, m)) @ c + np.sin(np.multiply.outer(x, m)) @ s

    def laplacian(self, x, y):
        """Delta u on the tensor grid, from exact basis derivatives."""
        phi, _, d2 = self.basis.values(y, second=True)
        m = np.arange(self.M + 1)
        c2 = self.cos @ d2 - (m ** 2)[:, None] * (self.cos @ phi)
        s2 = self.sin @ d2 - (m ** 2)[:, None] * (self.sin @ phi)
        x = np.asarray(x, dtype=float)
        return np.cos(np.multiply.outer(x, m)) @ c2 + np.sin(np.multiply.outer(x, m)) @ s2

    def mean(self, weights_y, y) -> float:
        """int int u dx dy = 2 pi int c_0."""
        c, _ = self.profiles(y)
        return float(TWO_PI * np.sum(c[0] * weights_y))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.cos ** 2) + np.sum(self.sin ** 2)))

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "cos": self.cos.tolist(), "sin": self.sin.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "HeatSource2D":
        return cls(YBasis(**d["basis"]), np.array(d["cos"]), np.array(d["sin"]))

