"""Coupled particle-field Hamiltonians, their flows, the gauge transform and the action.

State variables are (q, p, a) with q, p ambient vectors and a the complex field
amplitudes of :mod:`pflab.spectral_field`.  The field slot carries the
unnormalized H^{1/2} inner product

    <u, v>_H = (2 pi)^d sum_n w_n Re(a_u(n) conj a_v(n)),   w_n = sqrt(n^2 + 1),

in which the field energy is H_field = (2 pi)^d / 2 sum_n w_n^2 |a(n)|^2 and
metric gradients are computed.  The complex structure acts by
J(x_q, x_p, x_a) = (x_p, -x_q, i x_a); on the real pair this is
J(phi, pi) = (pi, -phi), the sign that reproduces the coupled equations
dphi/dt = B pi + d2f B^-1 rho(q - .) and dpi/dt = -B phi - d1f B^-1 rho(q - .).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
import math
from typing import Callable, Sequence

import numpy as np

from .geometry import ParticleState, FlatTorus, Submanifold, wrap_angle, TWO_PI
from .spectral_field import (
    BumpProfile,
    FieldState,
    ModeSet,
    conv_complex,
    majorant_constant,
    majorant_weights,
    phi_pi_from_a,
    scale_norm,
)

# --------------------------------------------------------------------------
# potentials and couplings


@dataclass(frozen=True)
class PotentialTerm:
    """amplitude * cos(k.x + phase) * cos(2 pi m t / T + time_phase)."""

    amplitude: float
    wavevector: tuple
    phase: float = 0.0
    time_mode: int = 0
    time_phase: float = 0.0


@dataclass(frozen=True)
class Potential:
    terms: tuple = ()
    d: int = 2

    def __post_init__(self):
        terms = tuple(self.terms)
        for term in terms:
            if len(term.wavevector) != self.d:
                raise ValueError("potential wavevector dimension mismatch")
        object.__setattr__(self, "terms", terms)

    @cached_property
    def _arrays(self):
        if not self.terms:
            z = np.zeros(0)
            return z, np.zeros((0, self.d)), z, z.astype(int), z
        amp = np.array([t.amplitude for t in self.terms], float)
        k = np.array([t.wavevector for t in self.terms], float)
        ph = np.array([t.phase for t in self.terms], float)
        m = np.array([t.time_mode for t in self.terms], int)
        tph = np.array([t.time_phase for t in self.terms], float)
        return amp, k, ph, m, tph

    @property
    def autonomous(self) -> bool:
        return all(t.time_mode == 0 for t in self.terms)

    def _time_factor(self, t: float, T: float) -> np.ndarray:
        amp, _, _, m, tph = self._arrays
        return amp * np.cos(TWO_PI * m * t / T + tph)

    def value(self, q, t: float, T: float) -> float:
        _, k, ph, _, _ = self._arrays
        return float(np.sum(self._time_factor(t, T) * np.cos(k @ q + ph)))

    def grad(self, q, t: float, T: float) -> np.ndarray:
        _, k, ph, _, _ = self._arrays
        return -(self._time_factor(t, T) * np.sin(k @ q + ph)) @ k

    def hessian(self, q, t: float, T: float) -> np.ndarray:
        _, k, ph, _, _ = self._arrays
        c = self._time_factor(t, T) * np.cos(k @ q + ph)
        return -(k.T * c) @ k

    def batch(self, q: np.ndarray, t: np.ndarray, T: float):
        """Values and gradients at samples q (n, d) and times t (n,)."""
        amp, k, ph, m, tph = self._arrays
        if amp.size == 0:
            return np.zeros(q.shape[0]), np.zeros_like(q)
        tf = amp * np.cos(TWO_PI * np.outer(t, m) / T + tph)
        arg = q @ k.T + ph
        return np.sum(tf * np.cos(arg), axis=1), -(tf * np.sin(arg)) @ k

    def sup_abs(self) -> float:
        return float(sum(abs(t.amplitude) for t in self.terms))

    def hessian_bound(self) -> float:
        return float(sum(abs(t.amplitude) * np.dot(t.wavevector, t.wavevector) for t in self.terms))


COUPLINGS = ("linear", "sine_mixed")


@dataclass(frozen=True)
class Coupling:
    """Catalog of interaction functions f_t(a, b) with bounded first derivatives.

    linear:      f = eps * a
    sine_mixed:  f = eps * (sin a + c cos(2 pi t / T) b)
    """

    kind: str = "linear"
    strength: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.kind!r}; choose from {COUPLINGS}")
        if self.strength < 0:
            raise ValueError("coupling strength must be non-negative")

    def _ct(self, t: float, T: float) -> float:
        return self.c * np.cos(TWO_PI * t / T)

    def value(self, a: float, b: float, t: float, T: float) -> float:
        if self.kind == "linear":
            return self.strength * a
        return self.strength * (np.sin(a) + self._ct(t, T) * b)

    def d1(self, a: float, b: float, t: float, T: float) -> float:
        if self.kind == "linear":
            return self.strength + 0.0 * a
        return self.strength * np.cos(a)

    def d2(self, a: float, b: float, t: float, T: float) -> float:
        if self.kind == "linear":
            return 0.0 * a
        return self.strength * self._ct(t, T) + 0.0 * a

    @property
    def pi_independent(self) -> bool:
        return self.kind == "linear" or self.c == 0.0

    @property
    def derivative_bounds(self) -> tuple[float, float]:
        if self.kind == "linear":
            return self.strength, 0.0
        return self.strength, self.strength * abs(self.c)

    def kick_integrals(self, a: float, b: float, t: float, T: float, kappa: float, tau: float):
        """Integrals of d1f and d2f along the exact flow of kappa-scaled self-interaction.

        During a kick the convolution values obey da/ds = kappa d2f, db/ds = -kappa d1f.
        """
        if self.kind == "linear":
            return self.strength * tau, 0.0
        eps, ct = self.strength, self._ct(t, T)
        i2 = eps * ct * tau
        half = 0.5 * kappa * eps * ct * tau
        i1 = eps * tau * math.cos(a + half) * np.sinc(half / math.pi)
        return float(i1), i2


# --------------------------------------------------------------------------
# specification and states


@dataclass(frozen=True)
class CutoffParams:
    R1: float
    R2: float

    def __post_init__(self):
        if not (self.R1 > 0 and self.R2 > 0):
            raise ValueError("cutoff levels must be positive")


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Particle on Q coupled to the truncated field through ``bump``.

    The field truncation is the bump's mode ball.  ``c0, c1, c2`` are the
    declared constants for the growth conditions; ``None`` selects the values
    implied by the quadratic kinetic term and the potential.
    """

    manifold: Submanifold
    bump: BumpProfile
    potential: Potential
    coupling: Coupling
    T: float
    c0: float | None = None
    c1: float | None = None
    c2: float | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("period must be positive")
        if self.manifold.ambient_d != self.bump.modes.d or self.potential.d != self.bump.modes.d:
            raise ValueError("manifold, bump and potential must share the ambient dimension")

    @property
    def modes(self) -> ModeSet:
        return self.bump.modes

    @property
    def d(self) -> int:
        return self.modes.d

    @cached_property
    def volume(self) -> float:
        return TWO_PI ** self.d

    @cached_property
    def rho(self) -> np.ndarray:
        return self.bump.coeffs

    @cached_property
    def psi0(self) -> np.ndarray:
        """Coefficients of B^-1 rho(-.) ; B^-1 rho(q - .) has psi0 * exp(-i n.q)."""
        return np.conj(self.rho) / self.modes.omega

    @cached_property
    def kappa(self) -> float:
        """(2 pi)^d sum |rho_n|^2 / w_n, the self-interaction constant."""
        return float(self.volume * np.sum(np.abs(self.rho) ** 2 / self.modes.omega))

    @cached_property
    def n_float(self) -> np.ndarray:
        return self.modes.n.astype(float)

    @cached_property
    def majorant_factor(self) -> tuple[float, np.ndarray]:
        c = majorant_constant(self.d)
        return c, majorant_weights(self.modes) * np.abs(self.rho) ** 2

    def with_coupling(self, **changes) -> "HamiltonianSpec":
        return replace(self, coupling=replace(self.coupling, **changes))

    def declared_constants(self) -> tuple[float, float, float]:
        c0 = 0.5 if self.c0 is None else self.c0
        c1 = self.potential.sup_abs() if self.c1 is None else self.c1
        c2 = 1.0 + self.potential.hessian_bound() + 1e-9 if self.c2 is None else self.c2
        return c0, c1, c2


@dataclass(frozen=True)
class FullState:
    particle: ParticleState
    field: FieldState

    @classmethod
    def make(cls, q, p, field: FieldState) -> "FullState":
        return cls(ParticleState(q, p), field)

    @property
    def q(self) -> np.ndarray:
        return self.particle.q

    @property
    def p(self) -> np.ndarray:
        return self.particle.p

    @property
    def a(self) -> np.ndarray:
        return self.field.coeffs


@dataclass(frozen=True)
class StateVector:
    """A tangent vector or metric gradient at a full state."""

    q: np.ndarray
    p: np.ndarray
    a: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.q, self.p, self.a.real, self.a.imag])


def apply_j(v: StateVector) -> StateVector:
    return StateVector(v.p, -v.q, 1j * v.a)


# --------------------------------------------------------------------------
# cutoffs


def _g(x):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def cutoff_chi(r, R: float):
    """Smooth step: 1 on (-inf, R], 0 on [R+1, inf), symmetric about R + 1/2."""
    if not R > 0:
        raise ValueError("cutoff level must be positive")
    r = np.asarray(r, float)
    u, v = _g(R + 1.0 - r), _g(r - R)
    out = u / (u + v)
    return float(out) if out.ndim == 0 else out


def cutoff_chi_prime(r, R: float):
    r = np.asarray(r, float)
    x, y = R + 1.0 - r, r - R
    u, v = _g(x), _g(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        du = np.where(x > 0, u / np.where(x > 0, x * x, 1.0), 0.0)
        dv = np.where(y > 0, v / np.where(y > 0, y * y, 1.0), 0.0)
        out = -(du * v + u * dv) / (u + v) ** 2
    out = np.where((x > 0) & (y > 0), out, 0.0)
    return float(out) if out.ndim == 0 else out


def _log_momentum_cutoff(p: np.ndarray, R2: float) -> tuple[float, float]:
    """chi_R2(ln|p|) and its derivative in ln|p|; equal to (1, 0) near p = 0."""
    norm = float(np.linalg.norm(p))
    if norm == 0.0 or math.log(norm) <= R2:
        return 1.0, 0.0
    lr = math.log(norm)
    return cutoff_chi(lr, R2), cutoff_chi_prime(lr, R2)


def majorant_value(spec: HamiltonianSpec, a: np.ndarray) -> float:
    c, w = spec.majorant_factor
    return c * float(np.sqrt(np.sum(w * np.abs(a) ** 2)))


def majorant_gradient(spec: HamiltonianSpec, a: np.ndarray, n3: float) -> np.ndarray:
    """Metric gradient of N3 in the field slot."""
    c, w = spec.majorant_factor
    return (c * c / (n3 * spec.volume)) * w * a / spec.modes.omega


# --------------------------------------------------------------------------
# Hamiltonian pieces (array level)


def _interaction(spec: HamiltonianSpec, q, a, t):
    """Convolution values, their ambient gradients and the coupling derivatives."""
    z, gz = conv_complex(a, spec.rho, spec.n_float, q, spec.d)
    A, B = z.real, -z.imag
    g1, g2 = gz.real, -gz.imag
    cp, T = spec.coupling, spec.T
    return A, B, g1, g2, cp.value(A, B, t, T), cp.d1(A, B, t, T), cp.d2(A, B, t, T)


def psi_hat(spec: HamiltonianSpec, q) -> np.ndarray:
    """Amplitudes of B^-1 rho(q - .)."""
    return spec.psi0 * np.exp(-1j * (spec.n_float @ np.asarray(q, float)))


def field_energy(spec: HamiltonianSpec, a: np.ndarray) -> float:
    return 0.5 * spec.volume * float(np.sum((spec.modes.n2 + 1.0) * np.abs(a) ** 2))


def _state_arrays(s: FullState):
    return s.q, s.p, s.a


def hamiltonian_total(s: FullState, t: float, spec: HamiltonianSpec,
                      cut: CutoffParams | None = None) -> float:
    """H_part + H_field + H_inter, with the interaction cut off when ``cut`` is given."""
    q, p, a = _state_arrays(s)
    kin = 0.5 * float(p @ p)
    V = spec.potential.value(q, t, spec.T)
    Hf = field_energy(spec, a)
    F = _interaction(spec, q, a, t)[4]
    if cut is not None:
        X, _ = _log_momentum_cutoff(p, cut.R2)
        Y = cutoff_chi(majorant_value(spec, a), cut.R1)
        F = X * Y * F
    return kin + V + Hf + F


def gauge_hamiltonian(s: FullState, t: float, spec: HamiltonianSpec,
                      cut: CutoffParams | None = None) -> float:
    """G_t(ubar) = F_part + F_inter(phi^A_t ubar), optionally with cutoffs."""
    q, p, abar = _state_arrays(s)
    a = abar * np.exp(1j * spec.modes.omega * t)
    kin = 0.5 * float(p @ p)
    V = spec.potential.value(q, t, spec.T)
    F = _interaction(spec, q, a, t)[4]
    if cut is not None:
        X, _ = _log_momentum_cutoff(p, cut.R2)
        Y = cutoff_chi(majorant_value(spec, a), cut.R1)
        F = X * Y * F
    return kin + V + F


def modified_hamiltonian_g(s: FullState, t: float, spec: HamiltonianSpec,
                           cut: CutoffParams) -> float:
    """The cut-off gauge Hamiltonian Gbar_t evaluated on twisted coordinates."""
    return gauge_hamiltonian(s, t, spec, cut)


def interaction_gradient(spec, q, p, a, t, cut=None):
    """Gradients of V + (cut-off) interaction at fixed field amplitudes ``a``.

    Returns (gq, dp_int, ga_int): the projected q-gradient, the extra
    p-gradient from the momentum cutoff (zero without cutoffs) and the
    field-slot metric gradient of the interaction alone.
    """
    m = spec.manifold
    A, B, g1, g2, F, f1, f2 = _interaction(spec, q, a, t)
    psi = psi_hat(spec, q)
    gamma = (f1 - 1j * f2) * psi
    gV = spec.potential.grad(q, t, spec.T)
    dp = np.zeros_like(np.asarray(p, float))
    if cut is None:
        return m.project(q, gV + (f1 * g1 + f2 * g2)), dp, gamma
    X, Xp = _log_momentum_cutoff(p, cut.R2)
    n3 = majorant_value(spec, a)
    Y = cutoff_chi(n3, cut.R1)
    Yp = cutoff_chi_prime(n3, cut.R1)
    gq = m.project(q, gV + X * Y * (f1 * g1 + f2 * g2))
    if Xp != 0.0:
        dp = m.project(q, (Xp * Y * F / float(p @ p)) * p)
    if Yp != 0.0:
        ga_int = X * (Yp * F * majorant_gradient(spec, a, n3) + Y * gamma)
    else:
        ga_int = X * (Y * gamma)
    return gq, dp, ga_int


def _project_rows(manifold: Submanifold, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    if isinstance(manifold, FlatTorus):
        return np.where(manifold._mask, v, 0.0)
    e = q - manifold.c
    e = e / np.linalg.norm(e, axis=1)[:, None]
    return v - np.sum(e * v, axis=1)[:, None] * e


def batch_interaction(spec: HamiltonianSpec, q, p, a, times, cut: CutoffParams | None = None):
    """Vectorized :func:`interaction_gradient` over loop samples.

    Returns (gq, dp_int, ga_int, phi_val) where ``phi_val`` holds
    V + (cut-off) F at every sample.
    """
    q, p = np.asarray(q, float), np.asarray(p, float)
    times = np.asarray(times, float)
    e = np.exp(1j * (q @ spec.n_float.T))
    w = spec.volume * a * spec.rho[None, :] * e
    z = w.sum(axis=1)
    gz = 1j * (w @ spec.n_float)
    A, B = z.real, -z.imag
    g1, g2 = gz.real, -gz.imag
    cp, T = spec.coupling, spec.T
    F, f1, f2 = cp.value(A, B, times, T), cp.d1(A, B, times, T), cp.d2(A, B, times, T)
    psi = spec.psi0[None, :] * np.conj(e)
    gamma = (f1 - 1j * f2)[:, None] * psi
    V, gV = spec.potential.batch(q, times, T)
    dp = np.zeros_like(p)
    if cut is None:
        gq = _project_rows(spec.manifold, q, gV + f1[:, None] * g1 + f2[:, None] * g2)
        return gq, dp, gamma, V + F
    X = np.empty(len(q))
    Xp = np.empty(len(q))
    for j in range(len(q)):
        X[j], Xp[j] = _log_momentum_cutoff(p[j], cut.R2)
    c, wts = spec.majorant_factor
    n3 = c * np.sqrt(np.sum(wts * np.abs(a) ** 2, axis=1))
    Y = np.atleast_1d(cutoff_chi(n3, cut.R1))
    Yp = np.atleast_1d(cutoff_chi_prime(n3, cut.R1))
    XY = X * Y
    gq = _project_rows(spec.manifold, q, gV + XY[:, None] * (f1[:, None] * g1 + f2[:, None] * g2))
    act = Xp != 0.0
    if np.any(act):
        pp = np.sum(p * p, axis=1)
        coef = np.where(act, Xp * Y * F / np.where(act, pp, 1.0), 0.0)
        dp = _project_rows(spec.manifold, q, coef[:, None] * p)
    ga = XY[:, None] * gamma
    hot = Yp != 0.0
    if np.any(hot):
        safe = np.where(hot, n3, 1.0)
        grad_n3 = (c * c / (safe[:, None] * spec.volume)) * wts * a / spec.modes.omega
        ga = ga + np.where(hot, X * Yp * F, 0.0)[:, None] * grad_n3
    return gq, dp, ga, V + XY * F


def _grad_arrays(spec, q, p, a, t, cut=None, gauge=False):
    rot = None
    if gauge:
        rot = np.exp(1j * spec.modes.omega * t)
        a = a * rot
    gq, dp, ga_int = interaction_gradient(spec, q, p, a, t, cut)
    gp = np.array(p, float) + dp
    if gauge:
        ga = ga_int / rot
    else:
        ga = spec.modes.omega * a + ga_int
    return gq, gp, ga


def grad_hamiltonian(s: FullState, t: float, spec: HamiltonianSpec,
                     cut: CutoffParams | None = None, gauge: bool = False) -> StateVector:
    """Metric gradient of H (or of G_t when ``gauge``), with optional cutoffs.

    Particle components are tangent vectors; the field component is the
    gradient for the unnormalized H^{1/2} inner product.
    """
    gq, gp, ga = _grad_arrays(spec, s.q, s.p, s.a, t, cut, gauge)
    return StateVector(gq, gp, ga)


def _vf_arrays(spec, q, p, a, t, gauge=False):
    gq, gp, ga = _grad_arrays(spec, q, p, a, t, None, gauge)
    dp = -gq + spec.manifold.normal_acceleration(q, p)
    return gp, dp, 1j * ga


def vector_field(s: FullState, t: float, spec: HamiltonianSpec) -> StateVector:
    """Right-hand side of the coupled equations in ambient coordinates.

    dq/dt = p, dp/dt = -P(grad V + d1f grad(phi*rho) + d2f grad(pi*rho)) + normal term,
    da/dt = i w a + i (d1f - i d2f) psi, which is the pair
    dphi/dt = B pi + d2f psi, dpi/dt = -B phi - d1f psi with psi = B^-1 rho(q - .).
    """
    dq, dp, da = _vf_arrays(spec, s.q, s.p, s.a, t)
    return StateVector(dq, dp, da)


def gauge_vector_field(s: FullState, t: float, spec: HamiltonianSpec) -> StateVector:
    """J grad G_t on twisted coordinates ubar."""
    dq, dp, da = _vf_arrays(spec, s.q, s.p, s.a, t, gauge=True)
    return StateVector(dq, dp, da)


# --------------------------------------------------------------------------
# splitting integrator


def _kick(spec, q, p, a, t, tau, gauge=False):
    m = spec.manifold
    if gauge:
        rot = np.exp(1j * spec.modes.omega * t)
        b = a * rot
    else:
        b = a
    z, gz = conv_complex(b, spec.rho, spec.n_float, q, spec.d)
    A, B = z.real, -z.imag
    i1, i2 = spec.coupling.kick_integrals(A, B, t, spec.T, spec.kappa, tau)
    force = tau * spec.potential.grad(q, t, spec.T) + i1 * gz.real - i2 * gz.imag
    p = p - m.project(q, force)
    db = (i2 + 1j * i1) * psi_hat(spec, q)
    if gauge:
        db = db / rot
    return p, a + db


def _drift(spec, q, p, a, dt, gauge=False):
    q, p = spec.manifold.geodesic(q, p, dt)
    if not gauge:
        a = a * np.exp(1j * spec.modes.omega * dt)
    return q, p, a


def _strang(spec, q, p, a, t, dt, gauge=False):
    p, a = _kick(spec, q, p, a, t, 0.5 * dt, gauge)
    q, p, a = _drift(spec, q, p, a, dt, gauge)
    p, a = _kick(spec, q, p, a, t + dt, 0.5 * dt, gauge)
    return q, p, a


def strang_step(s: FullState, t: float, dt: float, spec: HamiltonianSpec,
                gauge: bool = False) -> FullState:
    """Half kick (V and interaction), exact drift, half kick.

    Negative ``dt`` runs the adjoint step backwards from time ``t``.
    """
    spec.manifold.check(s.q)
    q, p, a = _strang(spec, s.q, s.p, s.a, t, dt, gauge)
    return FullState(ParticleState(q, p), FieldState(s.field.modes, a))


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    energies: np.ndarray
    energy_times: np.ndarray

    @property
    def final(self) -> FullState:
        return self.states[-1]

    def max_relative_drift(self) -> float:
        e0 = self.energies[0]
        return float(np.max(np.abs(self.energies - e0)) / max(abs(e0), 1e-300))


def _step_count(t0: float, t1: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    span = t1 - t0
    if span < 0:
        raise ValueError("t1 must not precede t0")
    n = int(round(span / dt))
    if abs(n * dt - span) > 1e-9 * max(abs(span), 1.0):
        raise ValueError("dt must divide t1 - t0")
    return n


def integrate(s0: FullState, t0: float, t1: float, dt: float, spec: HamiltonianSpec,
              gauge: bool = False, store_every: int = 1, energy: bool = True) -> Trajectory:
    """Compose Strang steps from t0 to t1, recording the energy after each step.

    With ``gauge`` the twisted system for G_t is integrated and energies refer
    to H evaluated on the untwisted state.  ``store_every`` thins the stored
    states (the final state is always kept).
    """
    n = _step_count(t0, t1, dt)
    h = (t1 - t0) / n if n else 0.0
    q, p, a = s0.q.copy(), s0.p.copy(), s0.a.copy()
    modes = s0.field.modes

    def pack(q, p, a):
        return FullState(ParticleState(q, p), FieldState(modes, a))

    def energy_of(q, p, a, t):
        if gauge:
            a = a * np.exp(1j * modes.omega * t)
        return hamiltonian_total(pack(q, p, a), t, spec)

    times, states, es, ets = [t0], [s0], [], []
    if energy:
        es.append(energy_of(q, p, a, t0))
        ets.append(t0)
    for j in range(n):
        t = t0 + j * h
        q, p, a = _strang(spec, q, p, a, t, h, gauge)
        tn = t0 + (j + 1) * h
        if energy:
            es.append(energy_of(q, p, a, tn))
            ets.append(tn)
        if (j + 1) % store_every == 0 or j == n - 1:
            times.append(tn)
            states.append(pack(q, p, a))
    return Trajectory(np.array(times), states, np.array(es), np.array(ets))


# --------------------------------------------------------------------------
# loops, gauge transform and action


def spectral_dt(x: np.ndarray, T: float) -> np.ndarray:
    """Time derivative of periodic samples along axis 0; Nyquist mode dropped."""
    nt = x.shape[0]
    m = np.fft.fftfreq(nt, 1.0 / nt)
    if nt % 2 == 0:
        m[nt // 2] = 0.0
    shape = (nt,) + (1,) * (x.ndim - 1)
    xh = np.fft.fft(x, axis=0) * (1j * TWO_PI / T * m).reshape(shape)
    out = np.fft.ifft(xh, axis=0)
    return out if np.iscomplexobj(x) else out.real


@dataclass(frozen=True, eq=False)
class LoopState:
    """Nt equally spaced samples t_j = j T / Nt of (q, p, a)."""

    q: np.ndarray
    p: np.ndarray
    a: np.ndarray
    T: float
    modes: ModeSet
    twisted: bool = False

    def __post_init__(self):
        q = np.array(self.q, float)
        p = np.array(self.p, float)
        a = np.array(self.a, complex)
        nt = q.shape[0]
        if nt < 16 or nt & (nt - 1):
            raise ValueError("loop sample count must be a power of two >= 16")
        if p.shape != q.shape or a.shape != (nt, self.modes.size):
            raise ValueError("loop component shapes disagree")
        for name, arr in (("q", q), ("p", p), ("a", a)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nt(self) -> int:
        return self.q.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt) * (self.T / self.nt)

    def sample(self, j: int) -> FullState:
        return FullState(ParticleState(self.q[j], self.p[j]), FieldState(self.modes, self.a[j]))

    @property
    def samples(self) -> list:
        return [self.sample(j) for j in range(self.nt)]

    @classmethod
    def from_samples(cls, samples: Sequence[FullState], T: float, twisted: bool = False) -> "LoopState":
        modes = samples[0].field.modes
        return cls(np.array([s.q for s in samples]), np.array([s.p for s in samples]),
                   np.array([s.a for s in samples]), T, modes, twisted)

    def with_field(self, a) -> "LoopState":
        return LoopState(self.q, self.p, a, self.T, self.modes, self.twisted)


def gauge_transform(u: LoopState, direction: str) -> LoopState:
    """forward: ubar(t) = phi^A_{-t} u(t) (sets the twist); backward undoes it."""
    if direction == "forward":
        if u.twisted:
            raise ValueError("loop is already twisted")
        sign = -1.0
    elif direction == "backward":
        if not u.twisted:
            raise ValueError("loop is not twisted")
        sign = 1.0
    else:
        raise ValueError("direction must be 'forward' or 'backward'")
    rot = np.exp(sign * 1j * np.outer(u.times, u.modes.omega))
    return LoopState(u.q, u.p, u.a * rot, u.T, u.modes, not u.twisted)


def untwisted(u: LoopState) -> LoopState:
    return gauge_transform(u, "backward") if u.twisted else u


def loop_velocity(manifold: Submanifold, q: np.ndarray, T: float) -> np.ndarray:
    """Spectral dq/dt of a closed loop; winding on flat tori is handled by detrending."""
    if isinstance(manifold, FlatTorus):
        nt = q.shape[0]
        lifted = np.unwrap(q, axis=0)
        jump = wrap_angle(q[0] - q[-1])
        winding = (lifted[-1] + jump - lifted[0])
        trend = np.outer(np.arange(nt) / nt, winding)
        return spectral_dt(lifted - trend, T) + winding / T
    return spectral_dt(q, T)


def action_density(spec: HamiltonianSpec, q, p, a, t, qdot, adot, cut=None) -> float:
    """p.qdot - F_tilde + <pi, dphi/dt> - H_field at one time sample."""
    s = FullState(ParticleState(q, p), FieldState(spec.modes, a))
    H = hamiltonian_total(s, t, spec, cut)
    neg = spec.modes.neg
    _, pi_h = phi_pi_from_a(a, neg)
    dphi, _ = phi_pi_from_a(adot, neg)
    sympl = spec.volume * float(np.sum(spec.modes.omega * np.real(pi_h * np.conj(dphi))))
    return float(p @ qdot) + sympl - H


def action(u: LoopState, spec: HamiltonianSpec, cut: CutoffParams | None = None) -> float:
    """Symplectic action with spectral time derivatives, evaluated on the untwisted loop."""
    u = untwisted(u)
    qdot = loop_velocity(spec.manifold, u.q, u.T)
    adot = spectral_dt(u.a, u.T)
    dens = [action_density(spec, u.q[j], u.p[j], u.a[j], t, qdot[j], adot[j], cut)
            for j, t in enumerate(u.times)]
    return u.T * float(np.mean(dens))


# --------------------------------------------------------------------------
# growth conditions


@dataclass
class FConditionReport:
    c0: float
    c1: float
    c2: float
    f1_margin: float
    f2_margin: float
    f1_worst: tuple
    f2_worst: tuple

    @property
    def f1_ok(self) -> bool:
        return self.f1_margin >= 0.0

    @property
    def f2_ok(self) -> bool:
        return self.f2_margin > 0.0

    @property
    def ok(self) -> bool:
        return self.f1_ok and self.f2_ok


def check_f_conditions(spec: HamiltonianSpec, f_part: Callable | None = None,
                       n_points: int = 12, n_times: int = 5,
                       radii: Sequence[float] | None = None, seed: int = 0) -> FConditionReport:
    """Sample (q, p, t) and test (F1) and (F2) with finite differences of F_part.

    (F1): dF.p d/dp - F >= c0 |p|^2 - c1.
    (F2): second p-derivatives and mixed (p, q) derivatives bounded by c2.
    Derivatives are taken along tangent directions in ambient coordinates.
    ``f_part(q, p, t)`` overrides the default |p|^2/2 + V_t(q).
    """
    c0, c1, c2 = spec.declared_constants()
    if f_part is None:
        def f_part(q, p, t):
            return 0.5 * float(p @ p) + spec.potential.value(q, t, spec.T)
    m = spec.manifold
    rng = np.random.default_rng(seed)
    if radii is None:
        radii = np.concatenate([[0.0], np.geomspace(1e-2, 1e3, 16)])
    f1_margin, f2_margin = math.inf, math.inf
    f1_worst = f2_worst = ()
    for t in np.linspace(0.0, spec.T, n_times, endpoint=False):
        for _ in range(n_points):
            q = m.sample_point(rng)
            basis = m.tangent_basis(q)
            direction = basis.T @ rng.standard_normal(basis.shape[0])
            direction /= np.linalg.norm(direction)
            for r in radii:
                p = r * direction
                F = f_part(q, p, t)
                h = 1e-4 * max(1.0, r)
                euler = (f_part(q, p + h * p, t) - f_part(q, p - h * p, t)) / (2 * h) if r else 0.0
                margin = euler - F - (c0 * r * r - c1)
                if margin < f1_margin:
                    f1_margin, f1_worst = margin, (tuple(q), tuple(p), float(t))
                worst = 0.0
                for e in basis:
                    for e2 in basis:
                        dpp = (f_part(q, p + h * (e + e2), t) - f_part(q, p + h * (e - e2), t)
                               - f_part(q, p - h * (e - e2), t) + f_part(q, p - h * (e + e2), t)) / (4 * h * h)
                        worst = max(worst, abs(dpp))
                        hq = 1e-4
                        qa, qb = m.geodesic(q, e2, hq)[0], m.geodesic(q, e2, -hq)[0]
                        dpq = (f_part(qa, p + h * e, t) - f_part(qa, p - h * e, t)
                               - f_part(qb, p + h * e, t) + f_part(qb, p - h * e, t)) / (4 * h * hq)
                        worst = max(worst, abs(dpq))
                if c2 - worst < f2_margin:
                    f2_margin, f2_worst = c2 - worst, (tuple(q), tuple(p), float(t))
    return FConditionReport(c0, c1, c2, f1_margin, f2_margin, f1_worst, f2_worst)


# --------------------------------------------------------------------------
# export


def trajectory_rows(traj: Trajectory, spec: HamiltonianSpec, gauge: bool = False):
    """Rows for CSV export: t, q..., p..., |u|_H0, |u|_H1, energy, action density."""
    d = spec.d
    header = (["t"] + [f"q{i}" for i in range(d)] + [f"p{i}" for i in range(d)]
              + ["field_h0", "field_h1", "energy", "action_density"])
    rows = []
    for t, s in zip(traj.times, traj.states):
        a = s.a * np.exp(1j * spec.modes.omega * t) if gauge else s.a
        su = FullState(s.particle, FieldState(spec.modes, a))
        v = vector_field(su, t, spec)
        dens = action_density(spec, su.q, su.p, a, t, v.q, v.a)
        rows.append([float(t), *map(float, su.q), *map(float, su.p),
                     scale_norm(su.field, 0.0), scale_norm(su.field, 1.0),
                     hamiltonian_total(su, t, spec), dens])
    return header, rows
