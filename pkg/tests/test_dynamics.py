"""Analytic propagators, selection rules, and closed-form traces."""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from trionsim.core import (
    DeviceParams,
    NoiseModel,
    NoiseTarget,
    Pol,
    SpinHalfState,
    Subspace,
    jones_vector,
    larmor_frequency,
    larmor_halfperiod,
)
from trionsim.dynamics import (
    Propagator2,
    emit_amplitudes,
    envelope_factor,
    heralded_docp,
    lifetime_docp,
    lifetime_trace,
    line_splittings,
    make_propagator,
    propagate,
    rotation_x,
    transition_lines,
)

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def _device(g_e=2.09, g_h=0.362, t1_s=300e-12, p_mem=0.865, b_x_t=0.15,
            noise=None):
    return DeviceParams(g_e=g_e, g_h=g_h, t1_s=t1_s, p_mem=p_mem,
                        b_x_t=b_x_t, noise=noise or NoiseModel.quiet())


def _random_state(rng, subspace):
    amps = rng.normal(size=2) + 1j * rng.normal(size=2)
    amps /= np.linalg.norm(amps)
    return SpinHalfState(amps, subspace)


def test_propagator_validation():
    with pytest.raises(ValueError):
        Propagator2(np.array([[1.0, 0.0], [0.0, 2.0]]), 1e-9,
                    Subspace.GROUND)
    with pytest.raises(ValueError):
        Propagator2(np.eye(3), 1e-9, Subspace.GROUND)
    u = Propagator2(rotation_x(0.3), 1e-9, Subspace.GROUND)
    v = Propagator2(rotation_x(0.5), 2e-9, Subspace.GROUND)
    w = u @ v
    assert w.duration_s == pytest.approx(3e-9)
    with pytest.raises(ValueError):
        u @ Propagator2(rotation_x(0.5), 1e-9, Subspace.TRION)


def test_propagator_matches_matrix_exponential():
    rng = np.random.default_rng(21)
    for _ in range(20):
        g_e, g_h = rng.uniform(0.05, 3.0, 2)
        b = rng.uniform(0.0, 0.5)
        dt = rng.uniform(0.0, 20e-9)
        dev = _device(g_e=g_e, g_h=g_h, b_x_t=b)
        for sub, g in ((Subspace.GROUND, g_h), (Subspace.TRION, g_e)):
            f = larmor_frequency(g, b)
            ref = expm(-1j * math.pi * f * dt * SIGMA_X)
            got = make_propagator(dev, sub, dt).matrix
            assert np.abs(got - ref).max() < 1e-12


def test_propagate_zero_field_is_identity():
    dev = _device(b_x_t=0.0)
    state = SpinHalfState.trion_up()
    out = propagate(state, dev, 7e-9)
    assert np.array_equal(out.amplitudes, state.amplitudes)


def test_propagate_half_period_flips_trion():
    dev = _device()
    dt = larmor_halfperiod(dev.g_e, dev.b_x_t)
    assert dt == pytest.approx(113.95e-12, rel=1e-3)
    out = propagate(SpinHalfState.trion_up(), dev, dt)
    overlap = abs(np.vdot(SpinHalfState.trion_down().amplitudes,
                          out.amplitudes))
    assert overlap == pytest.approx(1.0, abs=1e-10)


def test_propagate_half_period_flips_hole():
    dev = _device(g_h=0.35, b_x_t=0.0375)
    dt = 0.5 / larmor_frequency(0.35, 0.0375)
    assert dt == pytest.approx(2.7218e-9, rel=1e-3)
    out = propagate(SpinHalfState.hole_down(), dev, dt)
    overlap = abs(np.vdot(SpinHalfState.hole_up().amplitudes,
                          out.amplitudes))
    assert overlap == pytest.approx(1.0, abs=1e-10)


def test_propagate_preserves_norm():
    rng = np.random.default_rng(22)
    for _ in range(30):
        dev = _device(g_e=rng.uniform(0.05, 3.0), g_h=rng.uniform(0.05, 3.0),
                      b_x_t=rng.uniform(0.0, 0.5))
        sub = Subspace.GROUND if rng.random() < 0.5 else Subspace.TRION
        state = _random_state(rng, sub)
        out = propagate(state, dev, rng.uniform(0.0, 50e-9))
        norm = float(np.vdot(out.amplitudes, out.amplitudes).real)
        assert abs(norm - 1.0) < 1e-10


def test_propagate_composition():
    rng = np.random.default_rng(23)
    for _ in range(30):
        dev = _device(g_h=rng.uniform(0.05, 3.0), b_x_t=rng.uniform(0.0, 0.5))
        state = _random_state(rng, Subspace.GROUND)
        dt1, dt2 = rng.uniform(0.0, 20e-9, 2)
        once = propagate(state, dev, dt1 + dt2)
        twice = propagate(propagate(state, dev, dt1), dev, dt2)
        assert np.abs(once.amplitudes - twice.amplitudes).max() < 1e-10


def test_emission_selection_rules():
    up, down = emit_amplitudes(SpinHalfState.trion_up())
    assert up.weight == pytest.approx(1.0, abs=1e-12)
    assert down.weight == pytest.approx(0.0, abs=1e-12)
    assert up.photon_pol is Pol.L
    assert np.array_equal(up.photon_jones, jones_vector(Pol.L))
    assert up.ground.population_up() == 1.0

    up, down = emit_amplitudes(SpinHalfState.trion_down())
    assert down.weight == pytest.approx(1.0, abs=1e-12)
    assert down.photon_pol is Pol.R
    assert down.ground.population_down() == 1.0


def test_emission_weights_sum_to_one():
    rng = np.random.default_rng(24)
    equal = SpinHalfState(np.array([1.0, 1.0]) / math.sqrt(2.0),
                          Subspace.TRION)
    up, down = emit_amplitudes(equal)
    assert up.weight == pytest.approx(0.5, abs=1e-12)
    assert down.weight == pytest.approx(0.5, abs=1e-12)
    for _ in range(20):
        up, down = emit_amplitudes(_random_state(rng, Subspace.TRION))
        assert up.weight + down.weight == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        emit_amplitudes(SpinHalfState.hole_up())


def test_lifetime_trace_perfect_memory_zero_field():
    dev = _device(p_mem=1.0, b_x_t=0.0)
    t = np.linspace(0.0, 2e-9, 101)
    co = lifetime_trace(dev, Pol.R, Pol.R, t)
    cross = lifetime_trace(dev, Pol.R, Pol.L, t)
    assert np.abs(co - np.exp(-t / dev.t1_s)).max() < 1e-12
    assert np.abs(cross).max() < 1e-12


def test_lifetime_trace_co_plus_cross_is_decay():
    rng = np.random.default_rng(25)
    t = np.linspace(0.0, 3e-9, 200)
    for _ in range(10):
        dev = _device(g_e=rng.uniform(0.1, 3.0), p_mem=rng.uniform(0.0, 1.0),
                      b_x_t=rng.uniform(0.0, 0.3))
        total = lifetime_trace(dev, Pol.R, Pol.R, t) \
            + lifetime_trace(dev, Pol.R, Pol.L, t)
        assert np.abs(total - np.exp(-t / dev.t1_s)).max() < 1e-12


def test_lifetime_trace_first_minimum_at_half_period():
    dev = _device()
    t = np.arange(0.0, 250e-12, 0.05e-12)
    co = lifetime_trace(dev, Pol.R, Pol.R, t)
    # local minimum of the oscillating factor, not the decaying product
    osc = co / np.exp(-t / dev.t1_s)
    t_min = t[np.argmin(osc)]
    assert t_min == pytest.approx(113.95e-12, abs=0.5e-12)


def test_lifetime_trace_contrast_is_memory():
    dev = _device(p_mem=0.865)
    co0 = lifetime_trace(dev, Pol.R, Pol.R, 0.0)
    cross0 = lifetime_trace(dev, Pol.R, Pol.L, 0.0)
    assert (co0 - cross0) / (co0 + cross0) == pytest.approx(0.865, abs=1e-12)
    assert lifetime_docp(dev, 0.0) == pytest.approx(0.865, abs=1e-12)


def test_lifetime_trace_branch_complementarity():
    # R- and L-detected ground precession probabilities stay complementary
    dev = _device(p_mem=1.0)
    t = np.linspace(0.0, 1e-9, 97)
    f = dev.f_e_hz
    p_co = 0.5 * (1.0 + np.cos(2.0 * math.pi * f * t))
    p_cross = 0.5 * (1.0 - np.cos(2.0 * math.pi * f * t))
    assert np.abs(p_co + p_cross - 1.0).max() < 1e-12
    decay = np.exp(-t / dev.t1_s)
    assert np.abs(lifetime_trace(dev, Pol.R, Pol.R, t) - decay * p_co).max() \
        < 1e-12


def test_lifetime_trace_input_validation():
    dev = _device()
    with pytest.raises(ValueError):
        lifetime_trace(dev, Pol.H, Pol.R, 0.0)
    with pytest.raises(ValueError):
        lifetime_trace(dev, Pol.R, Pol.H, 0.0)
    with pytest.raises(ValueError):
        lifetime_trace(dev, Pol.R, Pol.R, -1e-12)


def test_envelope_factor_closed_forms():
    quiet = NoiseModel.quiet()
    assert envelope_factor(quiet, 5e-9) == 1.0
    lor = NoiseModel.lorentzian_from_t2star(16.51e-9)
    assert envelope_factor(lor, 16.51e-9) == pytest.approx(math.exp(-1.0),
                                                           rel=1e-12)
    gauss = NoiseModel.gaussian_from_t2star(15.9e-9)
    assert envelope_factor(gauss, 15.9e-9) == pytest.approx(math.exp(-1.0),
                                                            rel=1e-12)
    with pytest.raises(ValueError):
        envelope_factor(lor, -1e-9)


def test_envelope_factor_matches_sampled_mean():
    # closed forms against the jitter ensemble they are meant to summarize
    rng = np.random.default_rng(26)
    n = 100_000
    for noise in (NoiseModel.lorentzian_from_t2star(16.51e-9),
                  NoiseModel.gaussian_from_t2star(15.9e-9)):
        draws = noise.sample(rng, n)
        for t in (1e-9, 5e-9, 15e-9, 40e-9):
            sampled = np.mean(np.cos(2.0 * math.pi * draws * t))
            assert abs(sampled - envelope_factor(noise, t)) < 0.01


def test_heralded_docp_closed_form():
    dev = _device(noise=NoiseModel.lorentzian_from_t2star(15.9e-9))
    dt = np.array([0.0, 1e-9, 3.3e-9])
    expected = envelope_factor(dev.noise, dt) \
        * np.cos(2.0 * math.pi * dev.f_h_hz * dt)
    assert np.abs(heralded_docp(dev, dt) - expected).max() < 1e-12
    # excited-only noise leaves the ground precession envelope-free
    dev2 = _device(noise=NoiseModel.lorentzian_from_t2star(
        15.9e-9, applies_to=NoiseTarget.EXCITED))
    assert heralded_docp(dev2, 1e-9) == pytest.approx(
        math.cos(2.0 * math.pi * dev2.f_h_hz * 1e-9), rel=1e-12)


def test_transition_lines_four_line_pattern():
    dev = _device()
    outer, inner = line_splittings(dev)
    assert outer == pytest.approx(dev.delta_e_ev + dev.delta_h_ev, rel=1e-12)
    assert inner == pytest.approx(dev.delta_e_ev - dev.delta_h_ev, rel=1e-12)
    lines = transition_lines(dev, center_ev=1.3)
    energies = [e for e, _ in lines]
    pols = [p for _, p in lines]
    assert energies == sorted(energies)
    assert pols == [Pol.H, Pol.V, Pol.V, Pol.H]
    assert energies[3] - energies[0] == pytest.approx(outer, rel=1e-12)
    assert energies[2] - energies[1] == pytest.approx(inner, rel=1e-12)
    # splittings recombine into the two doublet energies
    assert (outer + inner) / 2.0 == pytest.approx(dev.delta_e_ev, rel=1e-12)
    assert (outer - inner) / 2.0 == pytest.approx(dev.delta_h_ev, rel=1e-12)
