import numpy as np
import pytest

from torusbq.forcing import (
    NoiseIncrement,
    QWienerSpec,
    RandomStream,
    additive_intensity,
    apply_noise,
    default_mode_fields,
    default_qwiener,
    hs_norm,
    ito_isometry_estimate,
    multiplicative_intensity,
    sample_increment,
    weighted_sum,
)
from torusbq.spectral import (
    Grid,
    SpectralScalarField,
    SpectralVectorField,
    divergence,
    lp_norm,
    sobolev_norm,
)


@pytest.fixture
def grid():
    return Grid(2, 16)


def cos_x2_field(grid):
    return SpectralVectorField.from_samples(
        grid, np.cos(grid.x_mesh[1]), np.zeros(grid.shape)
    )


def single_mode_spec():
    return QWienerSpec((((0, 1), "cos"),), np.array([1.0]))


def zero_state(grid):
    return SpectralVectorField.zero(grid), SpectralScalarField.zero(grid)


class TestStream:
    def test_reproducible(self):
        a = RandomStream(42, 3).normals(7, 5)
        b = RandomStream(42, 3).normals(7, 5)
        assert np.array_equal(a, b)

    def test_distinct_keys_differ(self):
        base = RandomStream(42, 0).normals(0, 4)
        assert not np.array_equal(base, RandomStream(43, 0).normals(0, 4))
        assert not np.array_equal(base, RandomStream(42, 1).normals(0, 4))
        assert not np.array_equal(base, RandomStream(42, 0).normals(1, 4))

    def test_order_independent(self):
        s = RandomStream(1, 0)
        late = s.normals(10, 3)
        s.normals(2, 3)
        assert np.array_equal(late, s.normals(10, 3))


class TestSpec:
    def test_default_spectrum(self):
        spec = default_qwiener(2, 5, gamma=2.0, lambda0=1.0)
        assert spec.truncation == 5
        assert spec.modes[0] == ((0, 0), "cos")
        assert spec.eigenvalues[0] == 1.0
        # first nonzero wavenumbers have |k|^2 = 1 -> lambda = 1
        assert np.allclose(spec.eigenvalues[1:], 1.0)
        spec2 = default_qwiener(2, 12, include_mean=False)
        assert ((0, 0), "cos") not in spec2.modes
        k2 = [sum(v * v for v in k) for k, _ in spec2.modes]
        assert k2 == sorted(k2)

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(ValueError):
            QWienerSpec((((0, 1), "cos"),), np.array([-1.0]))

    def test_trace_finite(self):
        spec = default_qwiener(2, 30)
        assert np.isfinite(spec.trace)


class TestIncrements:
    def test_empty(self):
        spec = QWienerSpec((), np.array([]))
        inc = sample_increment(spec, 0.1, RandomStream(0))
        assert inc.coefficients.size == 0

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            sample_increment(single_mode_spec(), 0.0, RandomStream(0))

    def test_moments(self):
        spec = default_qwiener(2, 4)
        dt = 0.01
        n = 100_000
        stream = RandomStream(7)
        draws = np.array(
            [sample_increment(spec, dt, stream, j).coefficients for j in range(n // 4)]
        )
        flat = draws.ravel()[:n]
        assert abs(flat.mean()) <= 4 * np.sqrt(dt / n)
        assert abs(flat.var() - dt) <= 0.05 * dt

    def test_cross_mode_correlation(self):
        spec = default_qwiener(2, 4)
        stream = RandomStream(11)
        draws = np.array(
            [sample_increment(spec, 1.0, stream, j).coefficients for j in range(25_000)]
        )
        corr = np.corrcoef(draws.T)
        off = corr - np.eye(4)
        assert np.max(np.abs(off)) <= 0.02


class TestApplyNoise:
    def test_off_mode_zero(self, grid):
        from torusbq.forcing import NoiseIntensity

        f = NoiseIntensity("off")
        u, theta = zero_state(grid)
        spec = QWienerSpec((), np.array([]))
        out = apply_noise(f, spec, u, theta, NoiseIncrement(np.array([]), 0.1))
        assert lp_norm(out, 2) == 0.0

    def test_additive_single_mode(self, grid):
        f = additive_intensity([cos_x2_field(grid)])
        spec = single_mode_spec()
        u, theta = zero_state(grid)
        out = apply_noise(f, spec, u, theta, NoiseIncrement(np.array([0.3]), 0.1))
        expect = 0.3 * np.cos(grid.x_mesh[1])
        assert np.max(np.abs(out.components[0].samples - expect)) < 1e-14
        assert np.max(np.abs(out.components[1].samples)) < 1e-14

    def test_degenerate_multiplicative_matches_additive(self, grid):
        base = [cos_x2_field(grid)]
        fa = additive_intensity(base)
        fm = multiplicative_intensity(base, a0=1.0, a1=0.0, a2=0.0)
        spec = single_mode_spec()
        rng = np.random.default_rng(0)
        u = SpectralVectorField.from_samples(
            grid, rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)
        )
        theta = SpectralScalarField.from_samples(grid, rng.standard_normal(grid.shape))
        inc = NoiseIncrement(np.array([0.7]), 0.1)
        a = apply_noise(fa, spec, u, theta, inc)
        b = apply_noise(fm, spec, u, theta, inc)
        for ca, cb in zip(a.components, b.components):
            assert np.array_equal(ca.samples, cb.samples)

    def test_mode_count_mismatch(self, grid):
        f = additive_intensity([cos_x2_field(grid)])
        spec = default_qwiener(2, 3)
        u, theta = zero_state(grid)
        with pytest.raises(ValueError):
            apply_noise(f, spec, u, theta, NoiseIncrement(np.zeros(3), 0.1))

    def test_output_divergence_free(self, grid):
        spec = default_qwiener(2, 6)
        f = multiplicative_intensity(
            default_mode_fields(grid, spec), a0=0.5, a1=1.0, a2=0.3
        )
        rng = np.random.default_rng(5)
        u = SpectralVectorField.from_samples(
            grid, rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)
        )
        theta = SpectralScalarField.from_samples(grid, rng.standard_normal(grid.shape))
        inc = sample_increment(spec, 0.1, RandomStream(3))
        out = apply_noise(f, spec, u, theta, inc)
        assert lp_norm(divergence(out), 2) < 1e-12 * (1 + sobolev_norm(out, 1))


class TestHsNorm:
    def test_zero_eigenvalues(self, grid):
        f = additive_intensity([cos_x2_field(grid)])
        spec = QWienerSpec((((0, 1), "cos"),), np.array([0.0]))
        u, theta = zero_state(grid)
        assert hs_norm(f, spec, u, theta, 0) == 0.0

    def test_single_mode_h0(self, grid):
        f = additive_intensity([cos_x2_field(grid)])
        u, theta = zero_state(grid)
        val = hs_norm(f, single_mode_spec(), u, theta, 0)
        # H^0 norm of cos x2 is sqrt(1/2); equals L^2 value / (2 pi)^{d/2}
        assert abs(val - np.sqrt(0.5)) < 1e-13
        assert abs(val - lp_norm(cos_x2_field(grid), 2) / (2 * np.pi)) < 1e-13

    def test_doubling_eigenvalues(self, grid):
        spec = default_qwiener(2, 5)
        f = additive_intensity(default_mode_fields(grid, spec))
        u, theta = zero_state(grid)
        a = hs_norm(f, spec, u, theta, 1)
        spec2 = QWienerSpec(spec.modes, 2 * spec.eigenvalues)
        b = hs_norm(f, spec2, u, theta, 1)
        assert abs(b - np.sqrt(2) * a) < 1e-12 * a


class TestItoIsometry:
    def test_zero_intensity(self, grid):
        f = additive_intensity([SpectralVectorField.zero(grid)])
        u, theta = zero_state(grid)
        lhs, rhs, gap = ito_isometry_estimate(
            f, single_mode_spec(), u, theta, 0.01, 10, 8, RandomStream(0)
        )
        assert (lhs, rhs, gap) == (0.0, 0.0, 0.0)

    def test_rejects_zero_paths(self, grid):
        f = additive_intensity([cos_x2_field(grid)])
        u, theta = zero_state(grid)
        with pytest.raises(ValueError):
            ito_isometry_estimate(
                f, single_mode_spec(), u, theta, 0.01, 10, 0, RandomStream(0)
            )

    def test_single_mode_gap(self, grid):
        f = additive_intensity([cos_x2_field(grid)])
        u, theta = zero_state(grid)
        lhs, rhs, gap = ito_isometry_estimate(
            f, single_mode_spec(), u, theta, 0.01, 20, 2000, RandomStream(1)
        )
        assert rhs == pytest.approx(20 * 0.01 * 0.5, rel=1e-12)
        assert gap <= 0.1

    def test_two_modes_additive(self, grid):
        spec = QWienerSpec(
            (((0, 1), "cos"), ((1, 0), "cos")), np.array([1.0, 1.0])
        )
        f1 = SpectralVectorField.from_samples(
            grid, np.cos(grid.x_mesh[1]), np.zeros(grid.shape)
        )
        f2 = SpectralVectorField.from_samples(
            grid, np.zeros(grid.shape), np.cos(grid.x_mesh[0])
        )
        u, theta = zero_state(grid)
        lhs, rhs, gap = ito_isometry_estimate(
            additive_intensity([f1, f2]), spec, u, theta, 0.01, 20, 2000, RandomStream(2)
        )
        # independence: variances add across modes
        assert rhs == pytest.approx(2 * 20 * 0.01 * 0.5, rel=1e-12)
        assert gap <= 0.1


class TestConditions:
    def test_lipschitz_bound(self, grid):
        spec = default_qwiener(2, 5)
        fields = default_mode_fields(grid, spec)
        f = multiplicative_intensity(fields, a0=0.2, a1=0.8, a2=0.5)
        c2 = f.lipschitz_constant
        sup_factor = max(
            np.sqrt(lam) * lp_norm(fld, np.inf)
            for lam, fld in zip(spec.eigenvalues, fields)
        )
        rng = np.random.default_rng(9)
        for _ in range(5):
            u1 = SpectralVectorField.from_samples(
                grid, rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)
            )
            u2 = SpectralVectorField.from_samples(
                grid, rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)
            )
            t1 = SpectralScalarField.from_samples(grid, rng.standard_normal(grid.shape))
            t2 = SpectralScalarField.from_samples(grid, rng.standard_normal(grid.shape))
            lhs_sq = 0.0
            for i in range(spec.truncation):
                d = f.mode_field(i, u1, t1) - f.mode_field(i, u2, t2)
                from torusbq.spectral import leray_project

                lhs_sq += spec.eigenvalues[i] * sobolev_norm(leray_project(d), 0) ** 2
            du = u1 - u2
            dtheta = t1 - t2
            state_norm = np.sqrt(
                sobolev_norm(du, 0) ** 2 + sobolev_norm(dtheta, 0) ** 2
            )
            assert np.sqrt(lhs_sq) <= c2 * state_norm * sup_factor * np.sqrt(
                spec.truncation
            )

    def test_linear_growth(self, grid):
        spec = default_qwiener(2, 5)
        f = multiplicative_intensity(
            default_mode_fields(grid, spec), a0=0.3, a1=0.6, a2=0.4
        )
        rng = np.random.default_rng(17)
        ratios = []
        for _ in range(5):
            u = SpectralVectorField.from_samples(
                grid, rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)
            )
            theta = SpectralScalarField.from_samples(
                grid, rng.standard_normal(grid.shape)
            )
            s = 2
            val = hs_norm(f, spec, u, theta, s)
            ratios.append(
                val / (1 + sobolev_norm(u, s) + sobolev_norm(theta, s))
            )
        measured = max(ratios)
        assert np.isfinite(measured)
        # loose sanity bound: growth constant scaled by the field roughness
        assert measured < 50 * f.growth_constant
