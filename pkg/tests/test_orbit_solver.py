import math

import numpy as np
import pytest

from conftest import T_GOLDEN, autonomous_potential, circle_point, circle_spec
from pflab.dynamics import CutoffParams, LoopState, Potential, action, gauge_transform, untwisted
from pflab.errors import NoConvergence, RationalResonance
from pflab.geometry import ParticleState
from pflab.orbit_solver import (
    FieldLoop,
    alternating_fixed_point,
    alternating_sweep,
    deduplicate_orbits,
    double_winding,
    flow_particle,
    floer_descent,
    galerkin_convergence_probe,
    loop_distance,
    loop_from_particle,
    orbit_residual,
    particle_shoot,
    resolvent_field,
    sample_forcing,
)
from pflab.smalldiv import decay_fit
from pflab.spectral_field import default_bump, random_field

NO_POTENTIAL = Potential((), 2)
CUT = CutoffParams(10.0, 3.0)


def circle_loop_q(nt, theta0=0.0, winding=1):
    th = theta0 + 2 * math.pi * winding * np.arange(nt) / nt
    return np.stack([math.pi + np.cos(th), math.pi + np.sin(th)], axis=1)


def descent_start(spec, nt=64):
    th = math.pi + 0.3 + 0.1 * np.sin(2 * math.pi * np.arange(nt) / nt)
    q = np.column_stack([math.pi + np.cos(th), math.pi + np.sin(th)])
    u0 = LoopState(q, np.zeros_like(q), np.zeros((nt, spec.modes.size)), spec.T, spec.modes)
    return gauge_transform(u0, "forward")


@pytest.fixture(scope="module")
def descent_run(weak_spec):
    return floer_descent(descent_start(weak_spec), CUT, weak_spec)


# ---------------------------------------------------------------- forcing


def test_forcing_constant_loop():
    bump = default_bump(2, 4)
    q0 = circle_point(0.7)
    f = sample_forcing(np.tile(q0, (16, 1)), bump, T_GOLDEN, 4)
    assert np.max(np.abs(f.coeffs[np.arange(9) != 4])) <= 1e-15
    expect = bump.coeffs * np.exp(-1j * (bump.modes.n @ q0))
    assert np.allclose(f.coeffs[4], expect, atol=1e-15)


def test_forcing_constant_bump():
    # a bump keeps every mode nonzero, so the mode-0 profile is realized by the k = 0 truncation
    bump = default_bump(2, 4)
    f = sample_forcing(circle_loop_q(16), bump, T_GOLDEN, 4, k=0)
    assert f.modes.size == 1
    assert np.max(np.abs(np.delete(f.coeffs[:, 0], 4))) <= 1e-15
    assert f.coeffs[4, 0] == pytest.approx(bump.coeffs[bump.modes.index((0, 0))], rel=1e-15)


def test_forcing_matches_dense_quadrature():
    # DERIVED: rho(q(t) - x) synthesized on a dense grid, then 2D FFT in x and rectangle rule in t
    k, M = 8, 16
    bump = default_bump(2, k)
    ms = bump.modes
    f = sample_forcing(circle_loop_q(4 * M), bump, T_GOLDEN, M)
    nt, nx = 128, 32
    x = 2 * math.pi * np.arange(nx) / nx
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    q = circle_loop_q(nt)
    space = np.empty((nt, ms.size), complex)
    for j in range(nt):
        y1, y2 = q[j, 0] - X1, q[j, 1] - X2
        rho = np.zeros_like(X1, dtype=complex)
        for i, n in enumerate(ms.n):
            rho += bump.coeffs[i] * np.exp(1j * (n[0] * y1 + n[1] * y2))
        F = np.fft.fft2(rho.real) / nx ** 2
        space[j] = F[ms.n[:, 0] % nx, ms.n[:, 1] % nx]
    ref = np.fft.fft(space, axis=0) / nt
    ref = ref[np.arange(-M, M + 1) % nt]
    assert np.max(np.abs(f.coeffs - ref)) <= 1e-9
    assert f.hermitian_defect() <= 1e-15


def test_forcing_nyquist_guard():
    with pytest.raises(ValueError):
        sample_forcing(circle_loop_q(16), default_bump(2, 2), T_GOLDEN, 8)


def test_field_loop_interpolates_samples(rng):
    a = rng.standard_normal((16, 5)) + 1j * rng.standard_normal((16, 5))
    fl = FieldLoop(a, 3.0)
    for j in (0, 5, 15):
        assert np.allclose(fl.at(3.0 * j / 16), a[j], atol=1e-13)
    assert np.allclose(fl.at(3.0 + 0.3), fl.at(0.3), atol=1e-12)


# ---------------------------------------------------------------- shooting


def test_shoot_free_particle_rest():
    spec = circle_spec(eps=0.0, potential=NO_POTENTIAL)
    q0 = circle_point(1.0)
    guess = ParticleState(q0, 1e-3 * np.array([-math.sin(1.0), math.cos(1.0)]))
    s = particle_shoot(FieldLoop.zeros(16, spec.modes.size, spec.T), guess, spec)
    assert np.linalg.norm(s.p) <= 1e-9


def test_shoot_finds_potential_minimum():
    # V = 0.1 sin(x1) on the circle is -0.1 sin(cos theta): minimum at theta = 0
    spec = circle_spec(eps=0.0, potential=autonomous_potential())
    guess = ParticleState(circle_point(0.1), [0.0, 0.0])
    s = particle_shoot(FieldLoop.zeros(16, spec.modes.size, spec.T), guess, spec)
    assert np.allclose(s.q, circle_point(0.0), atol=1e-9)
    assert np.linalg.norm(s.p) <= 1e-9


def test_shoot_weak_coupling_from_decoupled():
    spec = circle_spec(eps=1e-2)
    dec = circle_spec(eps=0.0)
    s0 = particle_shoot(FieldLoop.zeros(64, spec.modes.size, spec.T),
                        ParticleState((math.pi - 1.0, math.pi), (0.0, 0.0)), dec)
    loop = loop_from_particle(dec, s0, nt=64)
    fl = FieldLoop(resolvent_field(spec, loop.q), spec.T)
    s, info = particle_shoot(fl, s0, spec, info=True)
    assert info.iterations <= 10
    qT, pT, _, _ = flow_particle(spec, fl, s)
    assert np.linalg.norm(np.concatenate([qT - s.q, pT - s.p])) <= 1e-10


# ---------------------------------------------------------------- residual


def test_residual_rest_solution():
    spec = circle_spec(eps=0.0, potential=autonomous_potential())
    nt = 32
    q = np.tile(circle_point(0.0), (nt, 1))
    loop = LoopState(q, np.zeros_like(q), np.zeros((nt, spec.modes.size)), spec.T, spec.modes)
    assert orbit_residual(loop, spec).total <= 1e-12


@pytest.mark.parametrize("nt", [32, 64])
def test_residual_perturbation_scaling(nt):
    spec = circle_spec(eps=0.0, potential=autonomous_potential())
    q = np.tile(circle_point(0.0), (nt, 1))
    base = LoopState(q, np.zeros_like(q), np.zeros((nt, spec.modes.size)), spec.T, spec.modes)
    for delta in (1e-7, 1e-5):
        p = base.p.copy()
        p[nt // 3] += delta * np.array([0.0, 1.0])  # tangent at theta = 0
        r = orbit_residual(LoopState(base.q, p, base.a, spec.T, spec.modes), spec).total
        ratio = r / (delta * nt / spec.T)
        assert 0.1 <= ratio <= 10.0


# ---------------------------------------------------------------- alternating fixed point


def test_alternating_decoupled_single_iteration():
    spec = circle_spec(eps=0.0)
    orb = alternating_fixed_point(ParticleState((math.pi - 1.0, math.pi), (0.0, 0.0)), spec)
    assert orb.iterations == 1
    assert np.all(orb.loop.a == 0)
    assert orb.residual <= 1e-8


def test_weak_orbit_certified(weak_orbit, weak_spec):
    assert weak_orbit.iterations <= 30
    assert orbit_residual(weak_orbit.loop, weak_spec).total <= 1e-8
    assert weak_orbit.field_decay[1] > 0
    assert decay_fit_alpha(weak_orbit) > 0
    assert weak_orbit.action == pytest.approx(action(weak_orbit.loop, weak_spec))


def decay_fit_alpha(orbit):
    from pflab.orbit_solver import field_spectrum
    return decay_fit(field_spectrum(orbit.loop)).alpha


def test_fixed_point_consistency(weak_orbit, weak_spec):
    again = alternating_sweep(weak_orbit.loop, weak_spec)
    assert loop_distance(again, weak_orbit.loop) <= 2e-8


def test_gauge_untwisted_orbit(weak_orbit, weak_spec):
    tw = gauge_transform(weak_orbit.loop, "forward")
    assert orbit_residual(tw, weak_spec).total <= 1e-8
    assert loop_distance(untwisted(tw), weak_orbit.loop) <= 1e-13


def test_doubled_winding_fails(weak_orbit, weak_spec):
    assert orbit_residual(double_winding(weak_orbit.loop), weak_spec).total >= 1e3 * 1e-8


def test_contraction_scales_with_coupling():
    # DERIVED: the unrelaxed iteration contracts by a factor proportional to epsilon
    factors = {}
    for eps in (4e-3, 1.6e-2):
        orb = alternating_fixed_point(ParticleState((math.pi - 1.0, math.pi), (0.0, 0.0)),
                                      circle_spec(eps=eps), relaxation=1.0)
        tr = orb.trace
        factors[eps] = tr[-1] / tr[-2]
        assert factors[eps] <= 1.0 * eps
    assert 2.0 <= factors[1.6e-2] / factors[4e-3] <= 8.0


def test_alternating_rejects_resonant_period():
    with pytest.raises(RationalResonance):
        alternating_fixed_point(ParticleState((math.pi - 1.0, math.pi), (0.0, 0.0)),
                                circle_spec(T=2 * math.pi))


def test_alternating_no_convergence_reports_trace():
    with pytest.raises(NoConvergence) as exc:
        alternating_fixed_point(ParticleState((math.pi - 1.0, math.pi), (0.0, 0.0)), circle_spec(eps=1e-2),
                                max_iter=1, continuation_steps=0)
    assert len(exc.value.trace) == 1


def test_deduplicate(weak_orbit):
    from dataclasses import replace
    u = weak_orbit.loop
    idx = (np.arange(u.nt) + 5) % u.nt
    shifted = replace(weak_orbit, loop=LoopState(u.q[idx], u.p[idx], u.a[idx], u.T, u.modes))
    far = replace(weak_orbit, loop=LoopState(u.q, u.p + 0.1, u.a, u.T, u.modes))
    kept = deduplicate_orbits([weak_orbit, shifted, far])
    assert len(kept) == 2 and kept[0] is weak_orbit and kept[1] is far


# ---------------------------------------------------------------- descent


def test_descent_at_orbit_is_stationary(weak_orbit, weak_spec):
    _, tr = floer_descent(gauge_transform(weak_orbit.loop, "forward"), CUT, weak_spec)
    assert len(tr.actions) == 1 and tr.converged
    assert tr.stationarity <= 1e-8


def test_descent_agrees_with_alternating(descent_run, weak_orbit):
    u, tr = descent_run
    assert tr.converged
    assert loop_distance(untwisted(u), weak_orbit.loop) <= 1e-6


def test_descent_energy_identity(descent_run, weak_spec):
    u, tr = descent_run
    assert tr.energy_mismatch() <= 0.02
    assert tr.action_drop > 0
    assert all(b <= a + 1e-10 for a, b in zip(tr.actions, tr.actions[1:]))
    assert tr.terminal_residual <= 1e-6
    budget, ok = tr.energy_budget(tr.actions[-1] - 0.02 * tr.action_drop)
    assert ok and budget == pytest.approx(1.02 * tr.action_drop)
    assert not tr.energy_budget(tr.actions[0])[1]


def test_descent_decoupled_field_decays(weak_spec):
    spec = weak_spec.with_coupling(strength=0.0)
    rng = np.random.default_rng(3)
    nt = 32
    th = math.pi + 0.2 + 0.05 * np.sin(2 * math.pi * np.arange(nt) / nt)
    q = np.column_stack([math.pi + np.cos(th), math.pi + np.sin(th)])
    a = np.array([random_field(2, 8, rng, 1.0, 1e-2).coeffs for _ in range(nt)])
    u, tr = floer_descent(LoopState(q, np.zeros_like(q), a, spec.T, spec.modes, True), None, spec)
    assert tr.converged
    h0 = np.sqrt(np.sum(spec.modes.omega * np.abs(untwisted(u).a) ** 2, axis=1))
    assert np.max(h0) <= 1e-8


# ---------------------------------------------------------------- Galerkin probe


def test_probe_reference_gap_zero():
    spec = circle_spec(eps=0.5, k=8)
    pr = galerkin_convergence_probe(spec, [8], n_states=4)
    assert pr.gaps == [0.0]


def test_probe_rejects_large_k():
    with pytest.raises(ValueError):
        galerkin_convergence_probe(circle_spec(k=8), [12])


@pytest.fixture(scope="module")
def probes():
    ks = [4, 8, 12, 16, 24]
    return {alpha: galerkin_convergence_probe(circle_spec(eps=0.5, k=32, alpha=alpha), ks)
            for alpha in (1.0, 2.0)}


def test_probe_rates(probes):
    p1, p2 = probes[1.0], probes[2.0]
    assert p1.rate >= 0.8
    assert p2.rate > p1.rate
    for pr in (p1, p2):
        assert all(b <= 1.05 * a for a, b in zip(pr.gaps, pr.gaps[1:]))
