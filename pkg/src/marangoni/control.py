"""Inverse problems for the reduced system: heat sources realizing a
prescribed linear part M and forcing f, Sidon index sets, and the
p-decomposition solvability check."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PivotUnderflow, PreconditionError, RankDeficient
from .fields import HeatSource2D, YBasis
from .galerkin import ModeFields, ReducedSystem, mode_fields, source_response

RCOND = 1e-12


@dataclass
class ControlTarget:
    Tpp: np.ndarray
    Tmm: np.ndarray
    Tpm: np.ndarray
    Tmp: np.ndarray
    fplus: np.ndarray | None = None
    fminus: np.ndarray | None = None

    def __post_init__(self):
        for name in ("Tpp", "Tmm", "Tpm", "Tmp"):
            a = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(a)):
                raise PreconditionError(f"{name} has non-finite entries")
            setattr(self, name, a)
        n = self.N
        self.fplus = np.zeros(n) if self.fplus is None else np.asarray(self.fplus, dtype=float)
        self.fminus = np.zeros(n) if self.fminus is None else np.asarray(self.fminus, dtype=float)

    @property
    def N(self) -> int:
        return self.Tpp.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.Tpp, self.Tpm], [self.Tmp, self.Tmm]])

    @property
    def forcing(self) -> np.ndarray:
        return np.concatenate([self.fplus, self.fminus])

    @classmethod
    def from_matrix(cls, T: np.ndarray, f: np.ndarray | None = None) -> "ControlTarget":
        T = np.asarray(T, dtype=float)
        n = T.shape[0] // 2
        f = np.zeros(2 * n) if f is None else np.asarray(f, dtype=float)
        return cls(T[:n, :n], T[n:, n:], T[:n, n:], T[n:, :n], f[:n], f[n:])

    @classmethod
    def random(cls, N: int, rng: np.random.Generator) -> "ControlTarget":
        T = rng.uniform(-1, 1, (2 * N, 2 * N))
        f = rng.uniform(-1, 1, 2 * N)
        return cls.from_matrix(T, f)

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist()
                for k in ("Tpp", "Tmm", "Tpm", "Tmp", "fplus", "fminus")}


def _lstsq(A: np.ndarray, b: np.ndarray, needed: int, what: str, strict: bool = True):
    """Truncated-SVD minimum-norm solution; returns (x, info)."""
    # equilibrate rows so that the rank floor is meaningful
    scale = np.linalg.norm(A, axis=1)
    scale[scale == 0] = 1.0
    x, _, rank, sv = np.linalg.lstsq(A / scale[:, None], b / scale, rcond=RCOND)
    info = {"rank": int(rank), "constraints": int(needed),
            "singular_values": sv[:needed].tolist(),
            "residual": float(np.max(np.abs(A @ x - b))) if len(b) else 0.0}
    if rank < needed and strict:
        raise RankDeficient(f"{what}: numerical rank {rank} < {needed} constraints", **info)
    return x, info


def default_window(delta: float, h: float, width: float = 8.0, margin: float = 0.02) -> tuple[float, float]:
    """Support (a, b) strictly inside (delta, h), capped at delta + width where
    the slow modes have decayed and the basis would be ill conditioned."""
    a = delta + margin * min(1.0, h - delta)
    b = min(h - margin * min(1.0, h - delta), delta + width)
    return a, b


def reachable_projection(modes, conj, basis: YBasis, fields: ModeFields | None = None):
    """Orthogonal projector (on vec(M)) onto the numerically reachable targets."""
    A, _, _ = control_map(modes, conj, basis, fields)
    scale = np.linalg.norm(A, axis=1)
    scale[scale == 0] = 1.0
    U, s, _ = np.linalg.svd(A / scale[:, None], full_matrices=False)
    r = int(np.sum(s > RCOND * s[0]))
    Ur = U[:, :r]
    # range of A in the original row scaling
    B = scale[:, None] * Ur
    Q, _ = np.linalg.qr(B)
    return Q @ Q.T, r


def control_map(modes, conj, basis: YBasis, fields: ModeFields | None = None):
    """Matrix A with M.ravel() = A @ coeffs for coefficients (m, channel, j)."""
    N = len(modes)
    Mh = 2 * max(m.k for m in modes)
    RM, Rf = source_response(basis, Mh, modes, conj, fields=fields)
    n = 2 * N
    return RM.reshape(n * n, -1), Rf.reshape(n, -1), Mh


def _to_source(x: np.ndarray, basis: YBasis, Mh: int, meta: dict) -> HeatSource2D:
    c = x.reshape(Mh + 1, 2, basis.size)
    cos, sin = c[:, 0, :].copy(), c[:, 1, :].copy()
    sin[0] = 0.0
    return HeatSource2D(basis, cos, sin, meta)


class ControlOperator:
    """Cached linear map source coefficients -> vec(M) for one mode basis."""

    def __init__(self, modes, conj, basisSize: int = 24, delta1: float | None = None,
                 window: tuple[float, float] | None = None, fields: ModeFields | None = None):
        h = modes[0].h
        if delta1 is None:
            raise PreconditionError("delta1 (lower edge of the admissible support) is required")
        a, b = window or default_window(delta1, h)
        if a <= delta1 or b > h:
            from .errors import SupportViolation
            raise SupportViolation(f"window ({a}, {b}) not inside ({delta1}, {h})")
        self.basis = YBasis(a, b, basisSize)
        self.fields = fields or mode_fields(modes, conj)
        self.A, _, self.Mh = control_map(modes, conj, self.basis, self.fields)
        self.n = 2 * len(modes)

    def solve(self, target: ControlTarget, strict: bool = True) -> HeatSource2D:
        x, info = _lstsq(self.A, target.matrix.ravel(), self.A.shape[0], "control", strict)
        return _to_source(x, self.basis, self.Mh, {"kind": "u1", **info})

    def forward(self, u: HeatSource2D) -> np.ndarray:
        if u.basis != self.basis or u.M != self.Mh:
            raise PreconditionError("source does not use this operator's basis")
        return (self.A @ np.stack([u.cos, u.sin], axis=1).ravel()).reshape(self.n, self.n)


def solve_control(target: ControlTarget, modes, conj, basisSize: int = 24,
                  delta1: float | None = None, window: tuple[float, float] | None = None,
                  fields: ModeFields | None = None, strict: bool = True,
                  operator: ControlOperator | None = None) -> HeatSource2D:
    """Minimum-norm heat source u1 with M(u1) = target.matrix.

    All harmonics 0..2 k_max are solved together by a truncated-SVD least
    squares; x-orthogonality makes the system block diagonal anyway.

    The map is not onto: for every k the entries M^{+-}_kk and M^{-+}_kk are
    both fed by the single sin(2kx) integral and stay proportional, and for
    i != j the sum-harmonic kernels become proportional as h grows. With
    strict=True a rank below the constraint count raises RankDeficient;
    otherwise the least-squares source is returned with the rank report in
    meta."""
    op = operator or ControlOperator(modes, conj, basisSize, delta1, window, fields)
    return op.solve(target, strict)


def solve_forcing(fTarget, conj, basisSize: int = 16, delta0: float | None = None,
                  window: tuple[float, float] | None = None, modes=None) -> HeatSource2D:
    """Mean-zero eta1 with <eta1, theta~_i^+-> = fTarget (2N vector)."""
    from .galerkin import compute_f  # noqa: F401  (forward map used by callers/tests)
    from .fields import FourierField, pairing

    f = np.asarray(fTarget.forcing if isinstance(fTarget, ControlTarget) else fTarget, dtype=float)
    h = conj[0].h
    delta0 = h / 4 if delta0 is None else delta0
    if not (0 < delta0 < h / 2):
        raise PreconditionError("need 0 < delta0 < h/2")
    a, b = window or default_window(delta0, h)
    basis = YBasis(a, b, basisSize)
    g = conj[0].grid
    y, w = g.nodes, g.weights
    phi, _ = basis.values(y)
    Mh = max(c.k for c in conj)
    rows = []
    for part in (FourierField.real_part, FourierField.imag_part):
        for c in conj:
            tt = part(c.k, c.theta_at(y))
            row = np.zeros((Mh + 1, 2, basis.size))
            for m in range(Mh + 1):
                for ch in (0, 1):
                    if m == 0 and ch == 1:
                        continue
                    src = (FourierField.real_part if ch == 0 else FourierField.imag_part)(m, phi + 0j)
                    row[m, ch] = pairing(src, FourierField({q: (v[None], d[None]) for q, (v, d) in tt.items()}), w)
            rows.append(row.ravel())
    mean_row = np.zeros((Mh + 1, 2, basis.size))
    mean_row[0, 0] = 2 * np.pi * (phi @ w)
    A = np.vstack(rows + [mean_row.ravel()])
    rhs = np.append(f, 0.0)
    x, info = _lstsq(A, rhs, len(f), "forcing")
    return _to_source(x, basis, Mh, {"kind": "eta1", **info})


# ---------------------------------------------------------------- Sidon sets

def pair_sums(ks: Sequence[int]) -> list[int]:
    return [a + b for a, b in itertools.combinations_with_replacement(ks, 2)]


def sums_distinct(ks: Sequence[int]) -> bool:
    s = pair_sums(ks)
    return len(s) == len(set(s))


def sums_differences_disjoint(ks: Sequence[int]) -> bool:
    diffs = {abs(a - b) for a, b in itertools.combinations(ks, 2)}
    return not (set(pair_sums(ks)) & diffs)


@dataclass(frozen=True)
class SidonSet:
    p: int
    ks: tuple
    strict_candidates: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.ks) != self.p or list(self.ks) != sorted(set(self.ks)):
            raise ValueError("ks must be p strictly increasing integers")

    def valid(self) -> bool:
        return all(k % 3 == 1 for k in self.ks) and sums_distinct(self.ks)

    @property
    def sums(self) -> dict:
        """Map k_i + k_j -> (i, j) (indices into ks, i <= j)."""
        return {self.ks[i] + self.ks[j]: (i, j)
                for i, j in itertools.combinations_with_replacement(range(self.p), 2)}


def sidon_set(p: int) -> SidonSet:
    """k_1 = 1, k_2 = 7, then the smallest k = 1 (mod 3) with k > 3 k_j - 3
    keeping all pairwise sums distinct. The bound 3 k_j - 3 (rather than
    3 k_j) admits k_3 = 19; the candidate under the strict bound is kept
    in strict_candidates."""
    if p < 1:
        raise ValueError("p >= 1")
    ks = [1, 7][:p]
    strict = list(ks)
    while len(ks) < p:
        k = 3 * ks[-1] - 2
        while k % 3 != 1 or not sums_distinct(ks + [k]):
            k += 1
        ks.append(k)
        s = 3 * strict[-1] + 1
        while s % 3 != 1 or not sums_distinct(strict + [s]):
            s += 1
        strict.append(s)
    return SidonSet(p, tuple(ks), tuple(strict))


def check_p_decomposition(G, sidon: SidonSet, ks: Sequence[int] | None = None, b=None,
                          floor: float = 1e-10, strict: bool = True):
    """Solve u_{k_i+k_j} * I_{k_i,k_j,k_i+k_j} = b_ij over the Sidon pairs.

    G is a ReducedSystem (or K tensor with wavenumbers ks) whose modes include
    every k_i and every sum k_i + k_j; I is the total (+,+) -> + coefficient of
    X_{k_i}^+ X_{k_j}^+ in dX_{k_i+k_j}^+/dtau. Returns (solvable, u) with u a
    map from the sum wavenumber to its coefficient."""
    if isinstance(G, ReducedSystem):
        K, ks = G.G, list(G.ks)
    else:
        K = np.asarray(G)
        if ks is None:
            raise PreconditionError("ks required with a raw tensor")
        ks = list(ks)
    pos = {k: n for n, k in enumerate(ks)}
    missing = [k for k in set(sidon.ks) | set(sidon.sums) if k not in pos]
    if missing:
        raise PreconditionError(f"tensor lacks modes for wavenumbers {sorted(missing)}")
    if b is None:
        b = {(i, j): 1.0 for (i, j) in sidon.sums.values()}
    u, bad, pivots = {}, [], {}
    for l, (i, j) in sidon.sums.items():
        a, c, o = pos[sidon.ks[i]], pos[sidon.ks[j]], pos[l]
        piv = K[o, a, c] + (K[o, c, a] if a != c else 0.0)
        pivots[(i, j)] = float(piv)
        if abs(piv) < floor:
            bad.append((i, j))
            continue
        u[l] = float(b.get((i, j), 0.0)) / piv
    if bad:
        if strict:
            raise PivotUnderflow("p-decomposition pivots below floor", pairs=bad, pivots=pivots)
        return False, u
    return True, u
