import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mracsim import adaptation as ad
from mracsim import closed_loop as cl
from mracsim import linalg
from mracsim.errors import SingularAdjugateError, StateCorruptionError

from oracles import rk4

GAINS = cl.ideal_gains(
    cl.PlantSpec([[1.0, 1.0], [4.0, 2.0]], np.eye(2)),
    cl.ReferenceSpec([[0.0, 1.0], [-8.0, -4.0]], [[4.0, 2.0], [0.0, 2.0]]),
)
THETA = cl.stack_gains(GAINS.k_x, GAINS.k_r_inv)


def make_adapt(**overrides):
    kwargs = dict(
        kx_hat=np.zeros((2, 2)), na_hat=np.eye(2), nd_hat=-0.125,
        gain=0.1, forgetting=1000.0, nd_floor=0.025,
    )
    kwargs.update(overrides)
    return ad.AdaptationState(**kwargs)


class TestMemory:
    def test_zero_regressor(self):
        mem = ad.MemoryState.initial(2, 2, decay=0.125)
        mem.t0 = 0.0
        d_info, d_cross = ad.memory_derivatives(mem, 0.0, np.zeros((4, 2)), 1.0)
        assert d_info == 0.0 and not d_cross.any()

    def test_gated_before_start(self):
        mem = ad.MemoryState.initial(2, 2, decay=0.125)
        d_info, d_cross = ad.memory_derivatives(mem, 3.0, np.ones((4, 2)), 5.0)
        assert d_info == 0.0 and not d_cross.any()

    def test_constant_regressor_closed_form(self):
        # info(t) = (c^2 / sigma) (1 - exp(-sigma t)), monotone to c^2 / sigma
        c, sigma = 0.5, 0.125
        mem = ad.MemoryState.initial(2, 2, decay=sigma)
        mem.t0 = 0.0

        def f(t, y):
            d_info, _ = ad.memory_derivatives(mem, c, np.zeros((4, 2)), t)
            return np.array([d_info])

        path = rk4(f, np.zeros(1), 0.0, 1e-3, 4000)
        expect = (c**2 / sigma) * (1.0 - math.exp(-sigma * 4.0))
        assert path[-1][0] == pytest.approx(expect, rel=1e-10)
        assert np.all(np.diff(path[:, 0]) >= 0)
        assert path[-1][0] <= c**2 / sigma

    def test_cross_tracks_info_times_theta(self):
        # with exact mixing input (Y = omega theta) the accumulators satisfy
        # cross = info * theta identically
        sigma = 0.125
        mem = ad.MemoryState.initial(2, 2, decay=sigma)
        mem.t0 = 0.0
        rng = np.random.default_rng(3)
        theta = rng.normal(size=(4, 2))

        def f(t, y):
            omega = math.sin(3.0 * t) * math.exp(-0.1 * t)
            d_info, d_cross = ad.memory_derivatives(mem, omega, omega * theta, t)
            return np.concatenate([[d_info], d_cross.ravel()])

        path = rk4(f, np.zeros(9), 0.0, 1e-3, 3000)
        info = path[-1][0]
        cross = path[-1][1:].reshape(4, 2)
        np.testing.assert_allclose(cross, info * theta, atol=1e-12)

    def test_requires_positive_decay(self):
        with pytest.raises(ValueError):
            ad.MemoryState.initial(2, 2, decay=0.0)


class TestSplitAndTargets:
    def test_zero(self):
        kx_block, kr_block = ad.split_blocks(np.zeros((4, 2)))
        assert not kx_block.any() and not kr_block.any()
        assert kx_block.shape == (2, 2) and kr_block.shape == (2, 2)

    def test_scaled_ideal_parameters(self):
        kx_block, kr_block = ad.split_blocks(2.0 * THETA)
        np.testing.assert_allclose(kx_block, [[5.5, 3.0], [-12.0, -6.0]], atol=1e-12)
        np.testing.assert_allclose(kr_block, 2.0 * GAINS.k_r_inv, atol=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        cross = rng.normal(size=(5, 2))
        kx_block, kr_block = ad.split_blocks(cross)
        np.testing.assert_array_equal(np.vstack([kx_block.T, kr_block.T]), cross)

    def test_targets_identity(self):
        m_adj, m_det = ad.adjdet_targets(np.eye(2))
        np.testing.assert_array_equal(m_adj, np.eye(2))
        assert m_det == 1.0

    def test_targets_scaled_ideal(self):
        m_adj, m_det = ad.adjdet_targets(2.0 * GAINS.k_r_inv)
        assert m_det == pytest.approx(4.0 * 0.125, abs=1e-14)
        np.testing.assert_allclose(m_adj, 2.0 * GAINS.n_a, atol=1e-12)

    @given(st.floats(-3, 3, allow_nan=False))
    def test_determinant_scaling_law(self, q):
        rng = np.random.default_rng(5)
        block = rng.uniform(-2, 2, size=(2, 2))
        _, m_det = ad.adjdet_targets(q * block)
        assert m_det == pytest.approx(q**2 * linalg.det(block), abs=1e-12)


class TestAdaptationDerivatives:
    def test_zero_info(self):
        adapt = make_adapt()
        d_kx, d_na, d_nd, d_gain = ad.adaptation_derivatives(
            adapt, 0.0, np.zeros((2, 2)), np.zeros((2, 2)), 0.0, gate_open=True
        )
        assert not d_kx.any() and not d_na.any() and d_nd == 0.0
        assert d_gain == adapt.forgetting * adapt.gain

    def test_gain_frozen_before_gate(self):
        adapt = make_adapt()
        *_, d_gain = ad.adaptation_derivatives(
            adapt, 0.0, np.zeros((2, 2)), np.zeros((2, 2)), 0.0, gate_open=False
        )
        assert d_gain == 0.0

    def test_fixed_point(self):
        info = 2.0
        cross = info * THETA
        kx_block, kr_block = ad.split_blocks(cross)
        m_adj, m_det = ad.adjdet_targets(kr_block)
        adapt = make_adapt(kx_hat=GAINS.k_x, na_hat=GAINS.n_a, nd_hat=GAINS.n_d, gain=3.0)
        d_kx, d_na, d_nd, _ = ad.adaptation_derivatives(adapt, info, kx_block, m_adj, m_det)
        assert np.linalg.norm(d_kx) <= 1e-12
        assert np.linalg.norm(d_na) <= 1e-12
        assert abs(d_nd) <= 1e-12

    def test_direct_substitution(self):
        adapt = make_adapt(gain=1.0)
        d_kx, *_ = ad.adaptation_derivatives(
            adapt, 1.0, GAINS.k_x, np.zeros((2, 2)), 0.0
        )
        np.testing.assert_allclose(d_kx, [[2.75, 1.5], [-6.0, -3.0]], atol=1e-12)

    def test_gain_clamped_at_ceiling(self):
        adapt = make_adapt(gain=1e8, gain_max=1e8)
        *_, d_gain = ad.adaptation_derivatives(
            adapt, 1e-3, np.zeros((2, 2)), np.zeros((2, 2)), 0.0
        )
        assert d_gain == 0.0

    def test_nonpositive_gain_rejected(self):
        with pytest.raises(StateCorruptionError):
            make_adapt(gain=-1.0)

    def test_gain_inverse_form_matches(self):
        # q' = -gain' / gain^2 whenever no clamp is active
        rng = np.random.default_rng(7)
        for _ in range(30):
            gain = float(rng.uniform(0.05, 50.0))
            info = float(rng.uniform(0.0, 2.0))
            lam = float(rng.uniform(1.0, 2000.0))
            adapt = make_adapt(gain=gain, forgetting=lam, gain_max=1e300)
            *_, d_gain = ad.adaptation_derivatives(
                adapt, info, np.zeros((2, 2)), np.zeros((2, 2)), 0.0
            )
            dq = ad.gain_inverse_derivative(1.0 / gain, info, lam, 2, 1e300)
            assert dq == pytest.approx(-d_gain / gain**2, rel=1e-12)


class TestDeadzoneInverse:
    def test_passthrough(self):
        assert ad.deadzone_inverse(-0.125, 0.025, 1) == -8.0

    def test_inside_zone_positive(self):
        assert ad.deadzone_inverse(0.01, 0.025, 1) == -40.0

    def test_at_zero_uses_previous_sign(self):
        assert ad.deadzone_inverse(0.0, 0.025, -1) == 40.0
        assert ad.deadzone_inverse(0.0, 0.025, 1) == -40.0

    def test_boundary_is_dead_zone(self):
        # |nd| must strictly exceed the radius for pass-through
        assert ad.deadzone_inverse(0.025, 0.025, 1) == -40.0
        assert ad.deadzone_inverse(0.0250001, 0.025, 1) == pytest.approx(1 / 0.0250001)

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            ad.deadzone_inverse(1.0, 0.0, 1)

    @given(st.floats(-1e6, 1e6, allow_nan=False), st.sampled_from([-1, 1]))
    def test_total_and_branch_exact(self, nd, prev_sign):
        floor = 0.025
        out = ad.deadzone_inverse(nd, floor, prev_sign)
        assert math.isfinite(out)
        if abs(nd) > floor:
            assert out == 1.0 / nd
        else:
            sign = prev_sign if nd == 0 else (1 if nd > 0 else -1)
            assert out == -sign / floor
            assert abs(out) == 1.0 / floor


class TestRecoverKr:
    def test_ideal_values(self):
        kr_hat, kr_inv_hat, switched = ad.recover_kr(GAINS.n_a, GAINS.n_d, 0.025, 1)
        np.testing.assert_allclose(kr_hat, GAINS.k_r, atol=1e-12)
        np.testing.assert_allclose(kr_inv_hat, GAINS.k_r_inv, atol=1e-12)
        assert not switched

    def test_identity(self):
        kr_hat, kr_inv_hat, _ = ad.recover_kr(np.eye(2), 1.0, 0.025, 1)
        np.testing.assert_array_equal(kr_hat, np.eye(2))
        np.testing.assert_allclose(kr_inv_hat, np.eye(2), atol=1e-14)

    def test_wrong_sign_start(self):
        kr_hat, _, switched = ad.recover_kr(np.eye(2), -0.125, 0.025, -1)
        np.testing.assert_allclose(kr_hat, -8.0 * np.eye(2), atol=1e-14)
        assert not switched

    def test_switch_detected_on_sign_change(self):
        *_, switched = ad.recover_kr(np.eye(2), 0.1, 0.025, -1)
        assert switched

    def test_zero_keeps_previous_sign(self):
        *_, switched = ad.recover_kr(np.eye(2), 0.0, 0.025, -1)
        assert not switched

    def test_singular_adjugate_rejected(self):
        with pytest.raises(SingularAdjugateError):
            ad.recover_kr(np.ones((2, 2)), 0.5, 0.025, 1)


class TestDiagnostics:
    def test_parameter_error_stacking(self):
        err = ad.parameter_error(GAINS.k_x, GAINS.n_a, GAINS.n_d, GAINS)
        assert np.linalg.norm(err.stacked) == 0.0
        err = ad.parameter_error(GAINS.k_x + 1.0, GAINS.n_a, GAINS.n_d, GAINS)
        assert err.stacked.shape == (9,)
        np.testing.assert_allclose(err.stacked[:4], np.ones(4))

    def test_lyapunov_zero_error(self):
        assert ad.lyapunov_value(np.zeros(9), 0.5) == 0.0

    def test_lyapunov_unit_vector(self):
        v = np.zeros(9)
        v[3] = 1.0
        assert ad.lyapunov_value(v, 0.1) == pytest.approx(10.0)

    def test_lyapunov_requires_positive_gain(self):
        with pytest.raises(ValueError):
            ad.lyapunov_value(np.ones(3), 0.0)

    def test_rate_bound_no_excitation(self):
        assert ad.rate_bound(0.0, 5.0, 1000.0, 2) == 1000.0

    def test_rate_bound_formula(self):
        assert ad.rate_bound(1.0, 0.1, 1000.0, 2) == pytest.approx(1000.1)

    def test_rate_bound_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            ad.rate_bound(1.0, 0.0, 1000.0, 2)
        with pytest.raises(ValueError):
            ad.rate_bound(-1.0, 1.0, 1000.0, 2)
