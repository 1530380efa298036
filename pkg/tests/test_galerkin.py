import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marangoni.errors import MeanViolation, SupportViolation
from marangoni.fields import HeatSource2D, YBasis
from marangoni.galerkin import ReducedSystem, assemble_reduced, compute_G, compute_M, compute_f
from marangoni.heatprofile import PhysicalConfig, tune_d
from marangoni.spectral import biorthogonalize, build_conjugate_mode, build_mode

BASIS = YBasis(0.5, 4.0, 4)


def _physical(modes, conj, y, nx=48):
    """Real-form fields and their x, y derivatives sampled on an (x, y) grid."""
    x = 2 * np.pi * np.arange(nx) / nx
    out = {key: [] for key in ("psi", "omega", "theta", "tt", "z")}
    getters = {"psi": lambda m, c: (m.psi_at(y), m.dpsi_at(y)),
               "omega": lambda m, c: (m.omega_at(y), m.domega_at(y)),
               "theta": lambda m, c: (m.theta_at(y), m.dtheta_at(y)),
               "tt": lambda m, c: (c.theta_at(y), c.dtheta_at(y)),
               "z": lambda m, c: (c.z_at(y), c.dz_at(y))}
    for part in (np.real, np.imag):
        for m, c in zip(modes, conj):
            e = np.exp(1j * m.k * x)[:, None]
            for key, get in getters.items():
                F, dF = get(m, c)
                out[key].append((part(e * F), part(1j * m.k * e * F), part(e * dF)))
    return x, out


def _bracket(A, B):
    # {A, B} = A_y B_x - A_x B_y with A = (value, d/dx, d/dy)
    return A[2] * B[1] - A[1] * B[2]


def _integrate(f, x, w):
    return (2 * np.pi / len(x)) * np.sum(f * w[None, :])


def test_G_against_physical_quadrature(modes2, prof2):
    modes, conj = modes2
    g = prof2.grid.refined(2)
    x, F = _physical(modes, conj, g.nodes)
    K = compute_G(modes, conj)
    for i, a, b in [(0, 0, 0), (1, 0, 0), (0, 0, 1), (3, 2, 1), (2, 0, 3), (1, 3, 2)]:
        ref = -_integrate(_bracket(F["psi"][a], F["theta"][b]) * F["tt"][i][0], x, g.weights) \
              - _integrate(_bracket(F["psi"][a], F["omega"][b]) * F["z"][i][0], x, g.weights)
        assert K[i, a, b] == pytest.approx(ref, rel=1e-8, abs=1e-11)


def test_M_against_physical_quadrature(modes2, prof2, rng):
    modes, conj = modes2
    u1 = HeatSource2D(BASIS, rng.uniform(-1, 1, (4, 4)), rng.uniform(-1, 1, (4, 4)))
    M = compute_M(u1, modes, conj, prof2.delta1)
    g = prof2.grid.refined(2)
    x, F = _physical(modes, conj, g.nodes)
    # u1 and its derivatives from finite differences of the exact profiles
    xx = x[:, None]
    c, s = u1.profiles(g.nodes)
    phi, dphi = BASIS.values(g.nodes)
    dc, ds = u1.cos @ dphi, u1.sin @ dphi
    m = np.arange(u1.M + 1)[:, None, None]
    cos, sin = np.cos(m * xx[None]), np.sin(m * xx[None])
    U = (np.sum(cos * c[:, None, :] + sin * s[:, None, :], 0),
         np.sum(-m * sin * c[:, None, :] + m * cos * s[:, None, :], 0),
         np.sum(cos * dc[:, None, :] + sin * ds[:, None, :], 0))
    for i in range(4):
        for a in range(4):
            ref = -_integrate(_bracket(F["psi"][a], U) * F["tt"][i][0], x, g.weights)
            assert M[i, a] == pytest.approx(ref, rel=1e-8, abs=1e-11)


def test_parity_blocks_vanish(modes2, prof2):
    red = assemble_reduced(prof2, None, None, 1e-3, *modes2)
    b = red.blocks()
    for key in ("+-+", "++-", "---"):
        assert np.abs(b[key]).max() < 1e-13
    assert np.abs(b["+++"]).max() > 1e-3


def test_selection_rule_formal_wavenumbers(prof2):
    # modes at k = 1, 2, 3 (k = 3 is not tuned; the x-integrals do not care)
    modes = [build_mode(k, prof2) for k in (1, 2, 3)]
    conj = [build_conjugate_mode(k, prof2) for k in (1, 2, 3)]
    modes, conj = biorthogonalize(modes, conj)
    B = ReducedSystem(3, compute_G(modes, conj), np.zeros((6, 6)), np.zeros(6), 1.0).blocks()["+++"]
    assert abs(B[0, 0, 2]) < 1e-14       # 1 + 1 = 2 and |1 - 1| = 0, never 3
    assert abs(B[0, 1, 2]) > 1e-6        # 1 + 2 = 3
    assert abs(B[2, 2, 0]) < 1e-14       # 3 + 3 = 6, |3 - 3| = 0


def test_zero_sources_give_zero_linear_terms(modes2, prof2):
    red = assemble_reduced(prof2, None, None, 1e-3, *modes2)
    assert not np.any(red.M) and not np.any(red.f)
    X = np.array([0.3, -0.2, 0.1, 0.5])
    np.testing.assert_allclose(red.rhs_tau(X), np.einsum("iab,a,b->i", red.G, X, X), atol=1e-15)


def test_third_harmonic_source_does_not_reach_n1():
    prof = tune_d(PhysicalConfig.preset(1, h_rule="log"), "finite")
    from marangoni.spectral import tuned_modes
    modes, conj = tuned_modes(prof)
    cos = np.zeros((4, 4))
    cos[3] = [1.0, -0.5, 0.2, 0.3]
    u1 = HeatSource2D(BASIS, cos, np.zeros((4, 4)))
    assert np.abs(compute_M(u1, modes, conj, prof.delta1)).max() < 1e-15


def test_support_violation(modes2, prof2):
    low = YBasis(0.0, 2.0, 3)
    u1 = HeatSource2D(low, np.ones((2, 3)), np.zeros((2, 3)))
    with pytest.raises(SupportViolation):
        compute_M(u1, *modes2, delta1=prof2.delta1)


def test_forcing_zero_and_orthogonal(modes2):
    _, conj = modes2
    assert not np.any(compute_f(HeatSource2D.zeros(BASIS, 3), conj))
    cos = np.zeros((5, 4))
    cos[4] = 1.0                          # harmonic 4 > N = 2
    assert np.abs(compute_f(HeatSource2D(BASIS, cos, np.zeros((5, 4))), conj)).max() < 1e-15


def test_forcing_rejects_mean(modes2):
    cos = np.zeros((2, 4))
    cos[0, 0] = 1.0
    with pytest.raises(MeanViolation):
        compute_f(HeatSource2D(BASIS, cos, np.zeros((2, 4))), modes2[1])


def test_gamma_zero_is_static(rng):
    n = 4
    red = ReducedSystem(2, rng.normal(size=(n, n, n)), rng.normal(size=(n, n)), rng.normal(size=n), 0.0)
    assert not np.any(red.rhs_t(rng.normal(size=n)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_jacobian_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    n = 4
    red = ReducedSystem(2, r.normal(size=(n, n, n)), r.normal(size=(n, n)), r.normal(size=n), 1.0)
    X = r.normal(size=n)
    J = np.column_stack([(red.rhs_tau(X + 1e-6 * e) - red.rhs_tau(X - 1e-6 * e)) / 2e-6 for e in np.eye(n)])
    np.testing.assert_allclose(red.jacobian_tau(X), J, rtol=1e-6, atol=1e-7)


def test_reduced_roundtrip(rng):
    n = 4
    red = ReducedSystem(2, rng.normal(size=(n, n, n)), rng.normal(size=(n, n)), rng.normal(size=n), 1e-3)
    again = ReducedSystem.from_dict(red.to_dict())
    np.testing.assert_array_equal(again.G, red.G)
    np.testing.assert_array_equal(again.M, red.M)
    assert again.gamma == red.gamma
