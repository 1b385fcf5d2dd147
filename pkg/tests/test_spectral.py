"""Operator assembly: collocation oracles, band structure, accretivity."""

import numpy as np
import pytest

from kolmoflow.spectral import (
    ConfigurationError,
    FourierGrid,
    ModeParams,
    OperatorMatrix,
    ResolventQuery,
    StarMetric,
    assemble_L1,
    assemble_L_lambda,
    assemble_mode_operators,
    assemble_N_lambda,
    build_grid,
    helmholtz_inverse,
    mean_projections,
    multiplication_matrix,
)

RNG = np.random.default_rng(20260809)


def params_for(nu=0.01, gamma=0.4, k_f=1.0, k1=1, k3=0):
    return ModeParams(nu=nu, gamma=gamma, k_f=k_f, k1=k1, k3=k3)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

class TestGrid:
    def test_transform_roundtrip(self):
        grid = build_grid(64, params_for())
        w = RNG.standard_normal(64) + 1j * RNG.standard_normal(64)
        back = grid.to_grid(grid.to_coeffs(w))
        assert np.linalg.norm(back - w) / np.linalg.norm(w) <= 1e-12

    def test_delta_and_adequacy(self):
        # delta = 100^(-1/4) * 0.1 ~ 0.03162, 8/delta ~ 252.98
        p = params_for(nu=1e-2, gamma=1.0, k_f=1.0, k1=1, k3=0)
        g64 = build_grid(64, p, alpha=100.0)
        assert g64.delta == pytest.approx(100 ** -0.25 * 0.1, rel=1e-12)
        assert 8.0 / g64.delta == pytest.approx(252.98, abs=0.01)
        assert not g64.adequate
        assert build_grid(256, p, alpha=100.0).adequate

    def test_wavenumber_range(self):
        grid = build_grid(16, params_for())
        assert grid.wavenumbers[0] == -8 and grid.wavenumbers[-1] == 7

    def test_odd_n_rejected(self):
        with pytest.raises(ConfigurationError):
            build_grid(15, params_for())
        with pytest.raises(ConfigurationError):
            build_grid(8, params_for())

    def test_parseval(self):
        grid = build_grid(32, params_for())
        c = grid.random_coeffs(RNG)
        w = grid.to_grid(c)
        assert grid.norm_grid(w) == pytest.approx(grid.norm_coeffs(c), rel=1e-12)


class TestModeParams:
    def test_alpha_beta(self):
        p = params_for(k_f=0.5, k1=1, k3=1)
        assert p.alpha == pytest.approx(np.sqrt(2) / 0.5)
        assert p.beta == p.alpha

    def test_regime_warning(self):
        with pytest.warns(UserWarning):
            ModeParams(nu=0.1, gamma=0.5, k_f=1.0, k1=1, k3=0)

    def test_resolvent_query(self):
        p = params_for(k_f=0.5, k1=1, k3=1)
        q = ResolventQuery.from_params(p, lam=0.3)
        assert q.beta_tilde**2 == pytest.approx(p.beta**2 - 1.0, rel=1e-14)
        with pytest.raises(ConfigurationError):
            ResolventQuery.from_params(params_for(k_f=1.0, k1=1, k3=0), lam=0.0)


# ---------------------------------------------------------------------------
# collocation oracle: Fourier-assembled action == physical-space evaluation
# ---------------------------------------------------------------------------

def collocation_apply(kind, grid, params, lam=None, query=None, u_form=False,
                      nu=None, beta=None):
    """Pointwise physical-space evaluation of each operator on coefficients."""
    y = grid.y
    n = grid.wavenumbers

    def act(c):
        w = grid.to_grid(c)
        wpp = grid.to_grid(-(n**2) * c)
        if kind == "Nlambda":
            return (1j * params.alpha / params.nu) * (np.sin(y) - lam) * w - params.nu * wpp
        if kind == "Llambda" and not u_form:
            phi = grid.to_grid(-c / (params.beta**2 + n**2))
            return (1j * params.alpha / params.nu) * (
                (np.sin(y) - lam) * w + np.sin(y) * phi) - params.nu * wpp
        if kind == "Llambda" and u_form:
            phi = grid.to_grid(-c / (query.beta_tilde**2 + n**2))
            return (1j * params.alpha / params.nu) * (
                (np.sin(y) - lam) * w + lam * phi) - params.nu * wpp
        if kind == "ModeH":
            cc = 1j * params.k1 * params.gamma / (params.k_f**2 * params.nu)
            return -params.nu * params.k_f**2 * wpp + cc * np.sin(y) * w
        if kind == "ModeL":
            cc = 1j * params.k1 * params.gamma / (params.k_f**2 * params.nu)
            hw = grid.to_grid(c / (params.beta**2 + n**2))
            return -params.nu * params.k_f**2 * wpp + cc * np.sin(y) * (w - hw)
        if kind == "L1":
            return nu * wpp - nu * w - (1j * beta / nu) * np.sin(y) * w
        raise AssertionError(kind)

    return act


@pytest.mark.parametrize("n", [32, 64])
def test_collocation_equivalence(n):
    p = params_for(nu=0.01, gamma=0.3, k_f=0.5, k1=2, k3=1)
    grid = build_grid(n, p)
    lam = 0.37
    q = ResolventQuery.from_params(p, lam)
    cases = [
        (assemble_N_lambda(p, lam, grid), collocation_apply("Nlambda", grid, p, lam=lam)),
        (assemble_L_lambda(p, q, grid), collocation_apply("Llambda", grid, p, lam=lam)),
        (assemble_L_lambda(p, q, grid, u_form=True),
         collocation_apply("Llambda", grid, p, lam=lam, query=q, u_form=True)),
        (assemble_mode_operators(p, grid)[0], collocation_apply("ModeL", grid, p)),
        (assemble_mode_operators(p, grid)[1], collocation_apply("ModeH", grid, p)),
        (assemble_L1(0.01, 0.3, grid), collocation_apply("L1", grid, p, nu=0.01, beta=0.3)),
    ]
    for op, oracle in cases:
        for _ in range(50):
            c = grid.random_coeffs(RNG)
            got = grid.to_grid(op.matvec(c))
            want = oracle(c)
            err = np.linalg.norm(got - want) / np.linalg.norm(want)
            assert err <= 1e-9, (op.kind, err)


def test_band_structure():
    p = params_for(nu=0.01, gamma=0.3, k_f=0.5, k1=2, k3=1)
    grid = build_grid(64, p)
    q = ResolventQuery.from_params(p, 0.2)
    ml, mh = assemble_mode_operators(p, grid)
    ops = [
        assemble_N_lambda(p, 0.2, grid),
        assemble_L_lambda(p, q, grid),
        assemble_L_lambda(p, q, grid, u_form=True),
        ml, mh,
        assemble_L1(0.01, 0.3, grid),
        helmholtz_inverse(p.beta, grid),
    ]
    for op in ops:
        assert op.bandwidth <= 2
        dense = op.dense()
        for k in range(3, grid.n):
            assert not np.any(np.diagonal(dense, offset=k))
            assert not np.any(np.diagonal(dense, offset=-k))


# ---------------------------------------------------------------------------
# trivial-value examples
# ---------------------------------------------------------------------------

class TestPointExamples:
    def test_N_lambda_on_constant(self):
        # N_0 applied to 1 is i(alpha/nu) sin y: coefficients only at n=+-1
        p = params_for(nu=0.02, gamma=1.0, k_f=1.0, k1=3, k3=4)
        grid = build_grid(32, p)
        c = np.zeros(32, dtype=complex)
        c[grid.wavenumbers == 0] = 1.0
        out = assemble_N_lambda(p, 0.0, grid).matvec(c)
        mod = np.abs(out)
        mask = np.abs(grid.wavenumbers) == 1
        assert np.allclose(mod[mask], p.alpha / (2 * p.nu), rtol=1e-13)
        assert np.allclose(mod[~mask], 0.0, atol=1e-13)

    def test_N_lambda_alpha_zero_eigenfunction(self):
        # alpha=0: N_lambda e^{iy} = nu e^{iy}
        p = params_for(nu=0.004, gamma=0.4, k_f=1.0, k1=1, k3=0)
        grid = build_grid(32, p)
        c = np.zeros(32, dtype=complex)
        c[grid.wavenumbers == 1] = 1.0
        out = assemble_N_lambda(p, 0.7, grid, alpha=0.0).matvec(c)
        assert np.allclose(out, p.nu * c, atol=1e-15)

    def test_L_lambda_on_constant_beta1(self):
        # (1-d^2)^(-1) 1 = 1, so sin y (1 - (1-d^2)^(-1)) 1 = 0 and
        # L_lambda 1 = -i alpha lam / nu
        p = params_for(nu=0.01, gamma=0.4, k_f=1.0, k1=1, k3=0)
        grid = build_grid(32, p)
        lam = 0.9
        op = assemble_L_lambda(p, ResolventQuery(lam=lam, beta_tilde=1.0), grid, beta=1.0)
        c = np.zeros(32, dtype=complex)
        c[grid.wavenumbers == 0] = 1.0
        out = op.matvec(c)
        want = -1j * p.alpha * lam / p.nu * c
        assert np.allclose(out, want, rtol=1e-13, atol=1e-13)

    def test_helmholtz_diagonal_rule(self):
        p = params_for(k_f=0.5, k1=1, k3=1)
        grid = build_grid(32, p)
        hinv = helmholtz_inverse(p.beta, grid)
        for n_mode in (-5, 0, 3):
            c = np.zeros(32, dtype=complex)
            c[grid.wavenumbers == n_mode] = 1.0
            # phi = (d^2-beta^2)^(-1) e^{iny} = -e^{iny}/(beta^2+n^2)
            phi = -hinv.matvec(c)
            assert phi[grid.wavenumbers == n_mode] == pytest.approx(
                -1.0 / (p.beta**2 + n_mode**2), rel=1e-14)

    def test_mode_L_annihilates_constants_at_alpha1(self):
        p = params_for(nu=0.01, gamma=0.4, k_f=1.0, k1=1, k3=0)
        assert p.alpha == 1.0
        grid = build_grid(32, p)
        ml, _ = assemble_mode_operators(p, grid)
        c = np.zeros(32, dtype=complex)
        c[grid.wavenumbers == 0] = 1.0
        assert np.allclose(ml.matvec(c), 0.0, atol=1e-14)

    def test_L1_on_constant_and_eigenfunction(self):
        nu, beta = 0.05, 0.3
        p = params_for(nu=nu, gamma=beta)
        grid = build_grid(32, p)
        op = assemble_L1(nu, beta, grid)
        c = np.zeros(32, dtype=complex)
        c[grid.wavenumbers == 0] = 1.0
        out = grid.to_grid(op.matvec(c))
        want = -nu - (1j * beta / nu) * np.sin(grid.y)
        assert np.allclose(out, want, atol=1e-13)
        c = np.zeros(32, dtype=complex)
        c[grid.wavenumbers == 1] = 1.0
        out = op.matvec(c)
        # nu u'' - nu u = -2 nu e^{iy}; sin-coupling spills to n=0,2 only
        assert out[grid.wavenumbers == 1] == pytest.approx(-2 * nu, rel=1e-14)
        spill = np.abs(grid.wavenumbers - 1) == 1
        assert np.allclose(np.abs(out[spill]), beta / (2 * nu), rtol=1e-13)


# ---------------------------------------------------------------------------
# accretivity, projections, star metric, symmetry
# ---------------------------------------------------------------------------

class TestAccretivity:
    def test_modeH_rayleigh_identity(self):
        p = params_for(nu=0.01, gamma=0.3, k_f=0.5, k1=1, k3=1)
        grid = build_grid(64, p)
        _, mh = assemble_mode_operators(p, grid)
        n = grid.wavenumbers
        for _ in range(20):
            c = grid.random_coeffs(RNG)
            lhs = np.real(grid.inner_coeffs(mh.matvec(c), c))
            rhs = p.nu * p.k_f**2 * grid.norm_coeffs(1j * n * c) ** 2
            assert abs(lhs - rhs) / abs(rhs) <= 1e-10

    def test_modeL_star_accretive(self):
        p = params_for(nu=0.01, gamma=0.3, k_f=0.5, k1=1, k3=1)
        grid = build_grid(64, p)
        ml, _ = assemble_mode_operators(p, grid)
        metric = StarMetric.for_beta(p.beta, grid)
        n = grid.wavenumbers
        worst = np.inf
        for _ in range(20):
            c = grid.random_coeffs(RNG)
            lhs = np.real(metric.inner_coeffs(ml.matvec(c), c))
            rhs = p.nu * p.k_f**2 * metric.norm_coeffs(1j * n * c) ** 2
            assert abs(lhs - rhs) / abs(rhs) <= 1e-10
            worst = min(worst, lhs / metric.norm_coeffs(c) ** 2)
        assert worst >= -1e-12

    def test_modeH_eigenvalues_nonnegative_real(self):
        p = params_for(nu=0.05, gamma=0.3, k_f=0.5, k1=1, k3=0)
        grid = build_grid(128, p)
        _, mh = assemble_mode_operators(p, grid)
        eigs = np.linalg.eigvals(mh.dense())
        assert eigs.real.min() >= -1e-12

    def test_L1_dissipativity_identity(self):
        nu, beta = 0.01, 0.3
        p = params_for(nu=nu, gamma=beta)
        grid = build_grid(64, p)
        op = assemble_L1(nu, beta, grid)
        n = grid.wavenumbers
        for _ in range(20):
            c = grid.random_coeffs(RNG)
            lhs = np.real(grid.inner_coeffs(op.matvec(c), c))
            rhs = -nu * (grid.norm_coeffs(1j * n * c) ** 2 + grid.norm_coeffs(c) ** 2)
            assert abs(lhs - rhs) / abs(rhs) <= 1e-10


class TestProjections:
    def test_basics(self):
        grid = build_grid(32, params_for())
        q1, p1 = mean_projections(grid)
        one = np.zeros(32, dtype=complex)
        one[grid.wavenumbers == 0] = 1.0
        assert np.allclose(q1.matvec(one), 0.0)
        assert np.allclose(p1.matvec(one), one)
        siny = grid.to_coeffs(np.sin(grid.y))
        assert np.allclose(q1.matvec(siny), siny, atol=1e-15)

    def test_idempotence(self):
        grid = build_grid(32, params_for())
        q1, p1 = mean_projections(grid)
        for _ in range(10):
            c = grid.random_coeffs(RNG)
            qc = q1.matvec(c)
            assert np.linalg.norm(q1.matvec(qc) - qc) <= 1e-14 * np.linalg.norm(c)
            assert np.linalg.norm(q1.matvec(p1.matvec(c))) <= 1e-14 * np.linalg.norm(c)


class TestStarMetric:
    def test_sandwich_beta(self):
        p = params_for(nu=0.01, gamma=0.3, k_f=0.5, k1=1, k3=1)
        grid = build_grid(64, p)
        m = StarMetric.for_beta(p.beta, grid)
        lo = 1.0 - p.beta**-2
        for _ in range(100):
            c = grid.random_coeffs(RNG)
            l2 = grid.norm_coeffs(c) ** 2
            star = m.norm_coeffs(c) ** 2
            assert lo * l2 - 1e-12 * l2 <= star <= l2 * (1 + 1e-12)

    def test_sandwich_alpha1(self):
        grid = build_grid(64, params_for())
        m = StarMetric.for_alpha1(grid)
        for _ in range(100):
            c = grid.random_coeffs(RNG, mean_zero=True)
            l2 = grid.norm_coeffs(c) ** 2
            star = m.norm_coeffs(c) ** 2
            assert 0.5 * l2 - 1e-12 * l2 <= star <= l2 * (1 + 1e-12)


def test_half_period_shift_conjugation():
    # The half-period shift composed with complex conjugation intertwines
    # N_lambda and N_{-lambda}; on matrices: A_{-lam}[n,m] =
    # (-1)^(n+m) conj(A_lam[-n,-m]). (The linear shift alone flips the sign
    # of the whole skew part, so sigma_min transfers but the operators don't.)
    p = params_for(nu=0.01, gamma=0.4, k_f=1.0, k1=2, k3=0)
    grid = build_grid(64, p)
    a_plus = assemble_N_lambda(p, 0.6, grid).dense()
    a_minus = assemble_N_lambda(p, -0.6, grid).dense()
    n = grid.wavenumbers
    # index of mode -n; mode -N/2 has no mirror and is excluded
    order = np.argsort(n)  # already monotone, identity permutation
    idx = {m: i for i, m in enumerate(n)}
    inner = [i for i, m in enumerate(n) if -m in idx]
    mirrored = np.empty_like(a_plus)
    for i in inner:
        for j in inner:
            mirrored[i, j] = (-1.0) ** (n[i] + n[j]) * np.conj(
                a_plus[idx[-n[i]], idx[-n[j]]])
    sub = np.ix_(inner, inner)
    scale = np.max(np.abs(a_minus[sub]))
    assert np.max(np.abs(mirrored[sub] - a_minus[sub])) <= 1e-12 * scale
    # consequence actually used downstream: sigma_min is lambda-even
    s_plus = np.linalg.svd(a_plus, compute_uv=False)[-1]
    s_minus = np.linalg.svd(a_minus, compute_uv=False)[-1]
    assert s_plus == pytest.approx(s_minus, rel=1e-10)


def test_multiplication_matrix_rejects_unknown():
    with pytest.raises(ConfigurationError):
        multiplication_matrix("tan", 16)


def test_operator_matrix_restriction_keeps_band():
    p = params_for()
    grid = build_grid(32, p)
    op, _ = assemble_mode_operators(p, grid)
    keep = grid.wavenumbers != 0
    sub = op.restricted(keep)
    assert sub.n == 31
    assert sub.bandwidth <= 2
    dense = op.dense()
    assert np.allclose(sub.dense(), dense[np.ix_(keep, keep)])
