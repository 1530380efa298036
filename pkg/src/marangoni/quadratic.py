"""Generic quadratic systems dX/dt = K(X) + M X + g and their fast-slow
realization of prescribed quadratic fields on a ball.

Splitting X = (Y, Z) with Y the first p coordinates, a realizer has
    dY/dt = K^(1)(Y) + K^(2)(Y, Z) + K^(3)(Z) + R Y + xi^{-1} T Z + f,
    dZ/dt = K~^(1)(Y) + K~^(2)(Y, Z) + K~^(3)(Z) - xi^{-1} Z,
so Z relaxes at rate 1/xi onto Z = xi (K~^(1)(Y) + O(xi)) and the slow
field becomes K^(1)(Y) + R Y + T K~^(1)(Y) + f + O(xi).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import Blowup, DecompositionFailed, PreconditionError, StepSizeUnderflow


@dataclass
class QuadraticSystem:
    K: np.ndarray
    M: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.M = np.asarray(self.M, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.N
        if self.K.shape != (n, n, n) or self.M.shape != (n, n):
            raise PreconditionError("dimension mismatch in K, M, g")
        if not (np.all(np.isfinite(self.K)) and np.all(np.isfinite(self.M)) and np.all(np.isfinite(self.g))):
            raise PreconditionError("non-finite coefficients")

    @property
    def N(self) -> int:
        return len(self.g)

    def jacobian(self, X):
        X = np.asarray(X, dtype=float)
        return np.einsum("ijl,l->ij", self.K, X) + np.einsum("ijl,j->il", self.K, X) + self.M

    def to_dict(self) -> dict:
        idx = np.argwhere(self.K != 0)
        return {"N": self.N, "K": [[int(i), int(j), int(l), float(self.K[i, j, l])] for i, j, l in idx],
                "M": self.M.tolist(), "g": self.g.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QuadraticSystem":
        n = d["N"]
        K = np.zeros((n, n, n))
        for i, j, l, v in d["K"]:
            K[i, j, l] = v
        return cls(K, np.array(d["M"]), np.array(d["g"]))


def evaluate(system: QuadraticSystem, X) -> np.ndarray:
    """K(X)_i + (M X)_i + g_i with K(X)_i = sum_jl K_ijl X_j X_l."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] != system.N:
        raise PreconditionError("dimension mismatch")
    return np.einsum("ijl,j...,l...->i...", system.K, X, X) + np.tensordot(system.M, X, 1) + \
        (system.g if X.ndim == 1 else system.g[:, None])


@dataclass
class TargetField:
    """F(Y) = D(Y) + R Y + f on the ball |Y| <= R0."""
    p: int
    D: np.ndarray
    R: np.ndarray
    f: np.ndarray
    R0: float = 1.0

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float).reshape(self.p, self.p, self.p)
        self.R = np.asarray(self.R, dtype=float).reshape(self.p, self.p)
        self.f = np.asarray(self.f, dtype=float).reshape(self.p)

    def __call__(self, Y):
        return evaluate(QuadraticSystem(self.D, self.R, self.f), Y)

    def as_system(self) -> QuadraticSystem:
        return QuadraticSystem(self.D, self.R, self.f)

    def inward_violations(self, samples: int = 360) -> np.ndarray:
        """Boundary points q with F(q).q >= 0 (sampled; circle for p = 2,
        random sphere points otherwise)."""
        if self.p == 1:
            q = np.array([[-self.R0], [self.R0]])
        elif self.p == 2:
            a = np.linspace(0, 2 * np.pi, samples, endpoint=False)
            q = self.R0 * np.stack([np.cos(a), np.sin(a)], axis=1)
        else:
            rng = np.random.default_rng(0)
            q = rng.normal(size=(samples, self.p))
            q = self.R0 * q / np.linalg.norm(q, axis=1, keepdims=True)
        F = self(q.T).T
        return q[np.sum(F * q, axis=1) >= 0]

    def to_dict(self) -> dict:
        return {"p": self.p, "D": self.D.tolist(), "R": self.R.tolist(), "f": self.f.tolist(), "R0": self.R0}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetField":
        return cls(d["p"], np.array(d["D"]), np.array(d["R"]), np.array(d["f"]), d.get("R0", 1.0))


def _sym_pairs(p: int):
    return list(itertools.combinations_with_replacement(range(p), 2))


def quad_form_vector(K: np.ndarray, pairs) -> np.ndarray:
    """Coefficients of X_j X_l (j <= l) of the forms K[i] restricted to the slow block."""
    return np.array([[K[i, j, l] + (K[i, l, j] if j != l else 0.0) for (j, l) in pairs]
                     for i in range(K.shape[0])])


def p_decomposition_rank(K: np.ndarray, p: int) -> tuple[int, int]:
    """(rank, needed): span of the fast forms K~^(1) over the p(p+1)/2 slow monomials."""
    pairs = _sym_pairs(p)
    B = quad_form_vector(K[p:, :p, :p], pairs)
    if B.size == 0:
        return 0, len(pairs)
    return int(np.linalg.matrix_rank(B, tol=1e-10 * max(1.0, np.abs(B).max()))), len(pairs)


@dataclass
class SlowFastSplit:
    p: int
    xi: float
    system: QuadraticSystem
    T: np.ndarray
    target: TargetField
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.system.N

    @property
    def slow(self) -> slice:
        return slice(0, self.p)

    @property
    def fast(self) -> slice:
        return slice(self.p, self.N)

    @property
    def K1(self):
        return self.system.K[:self.p, :self.p, :self.p]

    @property
    def K1t(self):
        return self.system.K[self.p:, :self.p, :self.p]

    @property
    def R(self):
        return self.system.M[:self.p, :self.p]

    @property
    def P(self):
        return self.system.M[:self.p, self.p:]

    @property
    def Rt(self):
        return self.system.M[self.p:, :self.p]

    @property
    def Pt(self):
        return self.system.M[self.p:, self.p:]

    @property
    def f(self):
        return self.system.g[:self.p]

    @property
    def ft(self):
        return self.system.g[self.p:]

    def manifold(self, Y) -> np.ndarray:
        """Zeroth-order slow manifold Z = xi K~^(1)(Y)."""
        Y = np.asarray(Y, dtype=float)
        return self.xi * np.einsum("ijl,j...,l...->i...", self.K1t, Y, Y)

    def lift(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        return np.concatenate([Y, self.manifold(Y)])

    def reduced_field(self, Y) -> np.ndarray:
        """K^(1)(Y) + R Y + T K~^(1)(Y) + f."""
        Y = np.asarray(Y, dtype=float)
        q = lambda A: np.einsum("ijl,j,l->i", A, Y, Y)
        return q(self.K1) + self.R @ Y + self.T @ q(self.K1t) + self.f


def build_realizer(target: TargetField, K: np.ndarray, xi: float) -> SlowFastSplit:
    """Fast-slow quadratic system with the given generic K whose slow
    dynamics reproduce the target up to O(xi)."""
    K = np.asarray(K, dtype=float)
    N, p = K.shape[0], target.p
    if not (N / 2 < p * p + p <= N):
        raise PreconditionError(f"need N/2 < p^2 + p <= N, got N={N}, p={p}")
    if xi <= 0:
        raise PreconditionError("xi must be positive")
    pairs = _sym_pairs(p)
    B = quad_form_vector(K[p:, :p, :p], pairs)          # (q, s)
    rank, need = p_decomposition_rank(K, p)
    if rank < need:
        raise DecompositionFailed(f"fast forms span rank {rank} < {need}", rank=rank, needed=need)
    rhs = quad_form_vector(target.D, pairs) - quad_form_vector(K[:p, :p, :p], pairs)  # (p, s)
    T, *_ = np.linalg.lstsq(B.T, rhs.T, rcond=None)
    T = T.T                                               # (p, q)
    err = np.abs(T @ B - rhs).max() if rhs.size else 0.0
    if err > 1e-9 * (1 + np.abs(rhs).max()):
        raise DecompositionFailed("p-decomposition system not solved", residual=float(err))
    q = N - p
    M = np.zeros((N, N))
    M[:p, :p] = target.R
    M[:p, p:] = T / xi
    M[p:, p:] = -np.eye(q) / xi
    g = np.zeros(N)
    g[:p] = target.f
    return SlowFastSplit(p, xi, QuadraticSystem(K, M, g), T, target, {"residual": float(err)})


@dataclass
class Trajectory:
    t: np.ndarray
    X: np.ndarray           # (n, len(t))
    left_ball: float | None = None
    stats: dict = field(default_factory=dict)

    def table(self) -> np.ndarray:
        return np.column_stack([self.t, self.X.T])


def integrate(system, X0, T: float, dt: float, method: str = "auto", rtol: float = 1e-10,
              atol: float = 1e-12, ball: float | None = None, blowup: float = 1e8,
              stop_outside: float | None = None) -> Trajectory:
    """Adaptive integration with dense output at multiples of dt.

    system is a QuadraticSystem, a SlowFastSplit or a TargetField. method
    "auto" picks Radau with the exact Jacobian when the linear part is stiff
    (|M| >= 1e3), RK45 otherwise. If ball is given the first time with
    |X_slow| > ball is recorded but does not stop the run; with stop_outside
    the run ends when |X_slow| first exceeds that radius."""
    if dt <= 0 or T < 0:
        raise PreconditionError("need dt > 0 and T >= 0")
    p = None
    if isinstance(system, SlowFastSplit):
        p = system.p
        system = system.system
    elif isinstance(system, TargetField):
        p = system.p
        system = system.as_system()
    sysq = system
    if method == "auto":
        method = "Radau" if np.abs(sysq.M).max(initial=0.0) >= 1e3 else "RK45"
    rhs = lambda t, x: evaluate(sysq, x)
    jac = lambda t, x: sysq.jacobian(x)

    def ev(t, x):
        return blowup - np.max(np.abs(x))
    ev.terminal = True
    events = [ev]
    if stop_outside is not None:
        def out(t, x):
            return stop_outside - np.linalg.norm(x[:p] if p else x)
        out.terminal = True
        events.append(out)

    t_eval = np.arange(0.0, T + 0.5 * dt, dt)
    t_eval = t_eval[t_eval <= T + 1e-12]
    kw = dict(jac=jac) if method in ("Radau", "BDF", "LSODA") else {}
    sol = solve_ivp(rhs, (0.0, T), np.asarray(X0, dtype=float), method=method, t_eval=t_eval,
                    rtol=rtol, atol=atol, events=events, **kw)
    if sol.status == -1:
        raise StepSizeUnderflow(sol.message, t=float(sol.t[-1]) if len(sol.t) else 0.0)
    if sol.status == 1 and len(sol.t_events[0]):
        raise Blowup("trajectory exceeded the blow-up threshold", t=float(sol.t_events[0][0]))
    left = None
    if ball is not None:
        r = np.linalg.norm(sol.y[:p] if p else sol.y, axis=0)
        out = np.nonzero(r > ball)[0]
        left = float(sol.t[out[0]]) if len(out) else None
    return Trajectory(sol.t, sol.y, left, {"nfev": int(sol.nfev), "method": method})


def slow_manifold_residual(split: SlowFastSplit, Y, settle: float = 20.0, R0: float | None = None) -> float:
    """Start on Z = xi K~^(1)(Y), integrate for settle * xi and return
    |Z/xi - K~^(1)(Y)| at the final time."""
    Y = np.asarray(Y, dtype=float)
    R0 = split.target.R0 if R0 is None else R0
    if np.linalg.norm(Y) > R0:
        raise PreconditionError("Y outside the ball")
    Tset = settle * split.xi
    tr = integrate(split, split.lift(Y), Tset, Tset / 4, method="Radau")
    x = tr.X[:, -1]
    Yf, Zf = x[:split.p], x[split.p:]
    if np.linalg.norm(Yf) > 2 * R0:
        raise Blowup("trajectory left the ball 2 R0", Y=Yf.tolist())
    zstar = np.einsum("ijl,j,l->i", split.K1t, Yf, Yf)
    return float(np.linalg.norm(Zf / split.xi - zstar))


def relaxation_time(split: SlowFastSplit, Y, displacement: float = 1.0, horizon: float = 5.0,
                    seed: int = 0) -> float:
    """e-folding time of |Z - xi K~^(1)(Y)| after displacing Z by `displacement`."""
    rng = np.random.default_rng(seed)
    e = rng.normal(size=split.N - split.p)
    e *= displacement / np.linalg.norm(e)
    x0 = split.lift(Y)
    x0[split.p:] += e
    T = horizon * split.xi
    tr = integrate(split, x0, T, T / 200, method="Radau")
    Yt, Zt = tr.X[:split.p], tr.X[split.p:]
    dist = np.linalg.norm(Zt - split.xi * np.einsum("ijl,jt,lt->it", split.K1t, Yt, Yt), axis=0)
    use = dist > 1e-3 * displacement
    slope = np.polyfit(tr.t[use], np.log(dist[use]), 1)[0]
    return float(-1.0 / slope)


def realization_error(split: SlowFastSplit, Y0s, T: float = 20.0, dt: float = 0.01) -> float:
    """sup over initial points and over t (while the target stays inside
    the ball R0) of |Y_split(t) - Y_target(t)|."""
    worst = 0.0
    R0 = split.target.R0
    for Y0 in Y0s:
        tgt = integrate(split.target, Y0, T, dt, method="RK45", rtol=1e-11, atol=1e-13,
                        stop_outside=R0)
        Tend = tgt.t[-1]
        full = integrate(split, split.lift(Y0), Tend, dt, method="Radau", rtol=1e-10, atol=1e-13)
        n = min(tgt.X.shape[1], full.X.shape[1])
        err = np.linalg.norm(full.X[:split.p, :n] - tgt.X[:, :n], axis=0)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst


def generic_tensor(N: int, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    """Seeded Gaussian tensor; generic in the sense that the fast forms
    span all slow quadratic monomials with probability one."""
    return scale * np.random.default_rng(seed).normal(size=(N, N, N))


def fit_exponent(xs, ys) -> float:
    """Slope of log y against log x."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def slow_jacobian(split: SlowFastSplit, Y, tau: float = 0.2, eps: float = 1e-4) -> np.ndarray:
    """Jacobian of the realized slow flow at Y by flow-map differentiation:
    central differences of the time-tau map started on the slow manifold,
    then the matrix logarithm divided by tau."""
    from scipy.linalg import logm

    Y = np.asarray(Y, dtype=float)
    p = split.p
    D = np.zeros((p, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = eps
        ends = []
        for s in (1.0, -1.0):
            tr = integrate(split, split.lift(Y + s * e), tau, tau, method="Radau", rtol=1e-11, atol=1e-14)
            ends.append(tr.X[:p, -1])
        D[:, j] = (ends[0] - ends[1]) / (2 * eps)
    return np.real(logm(D)) / tau
