"""Periodic orbits of the coupled system.

Two solvers share the discretization of loops on Nt equally spaced samples:

* ``alternating_fixed_point`` alternates a field solve for a frozen particle
  loop with Newton shooting of the particle under the frozen field loop.
* ``floer_descent`` runs the gradient flow of the action on truncated loops
  with the field eliminated by its (exactly solvable) linear equation, so the
  flow lives on particle loops; the stiff kinetic part is integrated exactly
  per time mode.

Field loops are T-periodic in the untwisted representation; ``LoopState``
objects with ``twisted=True`` are converted on entry and exit.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
import math

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import (
    CutoffParams,
    FullState,
    HamiltonianSpec,
    LoopState,
    _interaction,
    action as loop_action,
    gauge_transform,
    grad_hamiltonian,
    batch_interaction,
    loop_velocity,
    spectral_dt,
    untwisted,
    vector_field,
)
from .errors import DegenerateOrbit, InsufficientData, NoConvergence, ResonanceError
from .geometry import FlatTorus, ParticleState, Sphere, TWO_PI, wrap_angle
from .smalldiv import (
    RESONANCE_THRESHOLD,
    SpaceTimeSpectrum,
    decay_fit,
    diophantine_constants,
    resolvent_solve,
    sigma_of,
)
from .spectral_field import (
    BumpProfile,
    FieldState,
    embed_index,
    mode_set,
    phi_pi_from_a,
)

DIOPHANTINE_SCAN = 10_000

# --------------------------------------------------------------------------
# forcing and field loops


def sample_forcing(q_loop, bump: BumpProfile, T: float, M: int, k: int | None = None) -> SpaceTimeSpectrum:
    """Space-time spectrum of f(t, x) = rho(q(t) - x) from Nt loop samples.

    The space coefficient at mode n is rho_hat(-n) exp(-i n.q(t)), which is
    rho_hat(n) exp(-i n.q(t)) for the even bumps used here.
    """
    q = np.asarray(q_loop, float)
    nt = q.shape[0]
    if nt < 2 * M + 2:
        raise ValueError(f"Nyquist condition violated: Nt = {nt} < 2M + 2 = {2 * M + 2}")
    modes = bump.modes if k is None else mode_set(bump.modes.d, k)
    rho = bump.on(modes)
    f = np.conj(rho)[None, :] * np.exp(-1j * (q @ modes.n.T.astype(float)))
    return SpaceTimeSpectrum.from_time_samples(f, modes, M, T)


def _time_modes(nt: int) -> np.ndarray:
    m = np.fft.fftfreq(nt, 1.0 / nt)
    m[nt // 2] = 0.0
    return m


@dataclass(frozen=True, eq=False)
class FieldLoop:
    """T-periodic field amplitudes given by their Nt samples.

    Evaluation between samples uses the trigonometric interpolant, with the
    Nyquist coefficient split symmetrically (a cosine).
    """

    a: np.ndarray
    T: float

    def __post_init__(self):
        a = np.array(self.a, complex)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        nt = a.shape[0]
        c = np.fft.fft(a, axis=0) / nt
        object.__setattr__(self, "_c", c)
        object.__setattr__(self, "_m", np.fft.fftfreq(nt, 1.0 / nt))

    @property
    def nt(self) -> int:
        return self.a.shape[0]

    def at(self, t: float) -> np.ndarray:
        nt = self.nt
        e = np.exp(1j * (TWO_PI / self.T) * self._m * t)
        e[nt // 2] = math.cos(math.pi * nt * t / self.T)
        return e @ self._c

    @classmethod
    def zeros(cls, nt: int, size: int, T: float) -> "FieldLoop":
        return cls(np.zeros((nt, size), complex), T)


def _h0_norms(a: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Normalized H_0 norm of each row of field amplitudes."""
    return np.sqrt(np.sum(omega * np.abs(a) ** 2, axis=-1))


def first_order_field(spec: HamiltonianSpec, q, p, a_guess=None, cut: CutoffParams | None = None,
                      tol: float = 1e-14, max_iter: int = 200) -> np.ndarray:
    """Discrete T-periodic solution of da/dt = i (w a + gamma(q, p, a)) on the loop grid.

    Each time mode is divided by lambda = nu m - w (nu = 2 pi / T, Nyquist m
    taken as 0 to match the spectral derivative).  Couplings that make
    gamma depend on ``a`` are handled by fixed-point iteration.
    """
    q, p = np.asarray(q, float), np.asarray(p, float)
    nt = q.shape[0]
    T = spec.T
    omega = spec.modes.omega
    lam = (TWO_PI / T) * _time_modes(nt)[:, None] - omega[None, :]
    j = np.unravel_index(int(np.argmin(np.abs(lam))), lam.shape)
    if abs(lam[j]) < RESONANCE_THRESHOLD:
        m = int(np.fft.fftfreq(nt, 1.0 / nt)[j[0]])
        raise ResonanceError("resonant time-space mode in the loop field solve",
                             witness=(m, tuple(int(v) for v in spec.modes.n[j[1]])),
                             divisor=float(abs(lam[j])))
    times = np.arange(nt) * (T / nt)
    a = np.zeros((nt, spec.modes.size), complex) if a_guess is None else np.array(a_guess, complex)
    linear = spec.coupling.kind == "linear" and cut is None
    for _ in range(max_iter):
        gam = batch_interaction(spec, q, p, a, times, cut)[2]
        new = np.fft.ifft(np.fft.fft(gam, axis=0) / lam, axis=0)
        change = float(np.max(np.abs(new - a), initial=0.0))
        a = new
        if linear or change <= tol * max(1.0, float(np.max(np.abs(a), initial=0.0))):
            return a
    raise NoConvergence("field fixed point did not converge", best=a)


def resolvent_field(spec: HamiltonianSpec, q) -> np.ndarray:
    """Field loop of the linear coupling obtained through ``resolvent_solve``.

    The second-order solution phi(m, n) is converted to amplitudes with
    pi(m, n) = i nu m phi(m, n) / w; the Nyquist time mode is absent.
    """
    q = np.asarray(q, float)
    nt = q.shape[0]
    M = nt // 2 - 1
    forcing = sample_forcing(q, spec.bump, spec.T, M)
    eps = spec.coupling.strength
    scaled = SpaceTimeSpectrum(forcing.modes, M, spec.T, eps * forcing.coeffs)
    phi, _ = resolvent_solve(scaled)
    nu = TWO_PI / spec.T
    amp = phi.coeffs * (1.0 + nu * phi.m[:, None] / spec.modes.omega[None, :])
    return SpaceTimeSpectrum(spec.modes, M, spec.T, amp).time_samples(nt)


def field_spectrum(loop: LoopState) -> SpaceTimeSpectrum:
    """Space-time spectrum of phi on the untwisted loop."""
    u = untwisted(loop)
    phi, _ = phi_pi_from_a(u.a, u.modes.neg)
    return SpaceTimeSpectrum.from_time_samples(phi, u.modes, u.nt // 2 - 1, u.T)


# --------------------------------------------------------------------------
# particle shooting


def _particle_rhs(spec: HamiltonianSpec, field: FieldLoop):
    m, d, T = spec.manifold, spec.d, spec.T

    def rhs(t, y):
        q, p = y[:d], y[d:]
        a = field.at(t)
        _, _, g1, g2, _, f1, f2 = _interaction(spec, q, a, t)
        force = spec.potential.grad(q, t, T) + f1 * g1 + f2 * g2
        dp = -m.project(q, force) + m.normal_acceleration(q, p)
        return np.concatenate([p, dp])

    return rhs


def flow_particle(spec: HamiltonianSpec, field: FieldLoop, s: ParticleState, nt: int | None = None,
                  rtol: float = 1e-12):
    """Integrate the particle over one period; returns (q_T, p_T, q_samples, p_samples)."""
    d, T = spec.d, spec.T
    grid = np.zeros(0) if nt is None else np.arange(nt) * (T / nt)
    sol = solve_ivp(_particle_rhs(spec, field), (0.0, T), np.concatenate([s.q, s.p]),
                    method="DOP853", rtol=rtol, atol=rtol, t_eval=np.append(grid, T))
    if not sol.success:
        raise NoConvergence(f"particle integration failed: {sol.message}")
    y = sol.y
    if nt is None:
        return y[:d, -1], y[d:, -1], None, None
    return y[:d, -1], y[d:, -1], y[:d, :-1].T, y[d:, :-1].T


def _return_defect(spec, field, q, p, rtol):
    qT, pT, _, _ = flow_particle(spec, field, ParticleState(q, p), rtol=rtol)
    dq = qT - q
    if isinstance(spec.manifold, FlatTorus):
        dq = wrap_angle(dq)
    return np.concatenate([dq, pT - p])


@dataclass
class ShootInfo:
    iterations: int
    defect: float
    condition: float
    history: list


def _chart_point(m, qb, pb, E, xi, eta):
    q = m.retract(qb + xi @ E)
    p = m.project(q, pb + eta @ E)
    return q, p


def particle_shoot(field_loop, s0_guess: ParticleState, spec: HamiltonianSpec, tol: float = 1e-10,
                   max_iter: int = 50, rtol: float = 1e-12, fd_step: float = 1e-6,
                   info: bool = False):
    """Newton iteration on the period map of the particle under a frozen field loop.

    Unknowns are chart coordinates (tangent position and momentum offsets) at
    the current iterate; the Jacobian of the defect is formed by central
    differences and the step solved in least squares.  A singular Jacobian
    is tolerated while the defect still decreases (families of orbits, such
    as rest points of a free particle) and reported as a degenerate orbit
    otherwise.
    """
    m = spec.manifold
    field = field_loop if isinstance(field_loop, FieldLoop) else FieldLoop(field_loop, spec.T)
    q = m.retract(np.asarray(s0_guess.q, float))
    p = m.project(q, np.asarray(s0_guess.p, float))
    history, cond = [], 1.0
    best = (math.inf, q, p)
    for it in range(max_iter + 1):
        R = _return_defect(spec, field, q, p, rtol)
        err = float(np.linalg.norm(R))
        history.append(err)
        if err < best[0]:
            best = (err, q, p)
        if err <= tol:
            state = ParticleState(q, p)
            return (state, ShootInfo(it, err, cond, history)) if info else state
        if it == max_iter:
            break
        E = m.tangent_basis(q)
        k = E.shape[0]
        J = np.empty((R.size, 2 * k))
        for c in range(2 * k):
            z = np.zeros(2 * k)
            z[c] = fd_step
            qa, pa = _chart_point(m, q, p, E, z[:k], z[k:])
            qb, pb = _chart_point(m, q, p, E, -z[:k], -z[k:])
            J[:, c] = (_return_defect(spec, field, qa, pa, rtol)
                       - _return_defect(spec, field, qb, pb, rtol)) / (2 * fd_step)
        sv = np.linalg.svd(J, compute_uv=False)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
        step, *_ = np.linalg.lstsq(J, -R, rcond=1e-12)
        q, p = _chart_point(m, q, p, E, step[:k], step[k:])
        if it >= 3 and history[-1] > 0.5 * history[-4] and cond > 1e12:
            raise DegenerateOrbit(f"singular period-map Jacobian (condition {cond:.2e})",
                                  best=ParticleState(best[1], best[2]), trace=history)
    raise NoConvergence(f"shooting stalled at defect {best[0]:.3e} after {max_iter} iterations",
                        best=ParticleState(best[1], best[2]), trace=history)


# --------------------------------------------------------------------------
# residuals and distances


@dataclass
class OrbitResidual:
    q: float
    p: float
    phi: float
    pi: float

    @property
    def total(self) -> float:
        return max(self.q, self.p, self.phi, self.pi)

    def __float__(self) -> float:
        return self.total

    def as_dict(self) -> dict:
        return {"q": self.q, "p": self.p, "phi": self.phi, "pi": self.pi, "total": self.total}


def orbit_residual(loop: LoopState, spec: HamiltonianSpec) -> OrbitResidual:
    """Max over the grid of |d/dt sample - vector field| per component.

    Time derivatives are spectral.  Field components are measured in the
    normalized H_0 norm of the phi and pi parts.  Twisted loops are
    untwisted first.
    """
    u = untwisted(loop)
    qdot = loop_velocity(spec.manifold, u.q, u.T)
    pdot = spectral_dt(u.p, u.T)
    adot = spectral_dt(u.a, u.T)
    rq = rp = rphi = rpi = 0.0
    omega, neg = u.modes.omega, u.modes.neg
    for j, t in enumerate(u.times):
        v = vector_field(u.sample(j), t, spec)
        rq = max(rq, float(np.linalg.norm(qdot[j] - v.q)))
        rp = max(rp, float(np.linalg.norm(pdot[j] - v.p)))
        dphi, dpi = phi_pi_from_a(adot[j] - v.a, neg)
        rphi = max(rphi, float(np.sqrt(np.sum(omega * np.abs(dphi) ** 2))))
        rpi = max(rpi, float(np.sqrt(np.sum(omega * np.abs(dpi) ** 2))))
    return OrbitResidual(rq, rp, rphi, rpi)


def loop_distance(u: LoopState, v: LoopState, shift: int = 0) -> float:
    """Sup over samples of the particle and field distances (v shifted by ``shift`` samples)."""
    u, v = untwisted(u), untwisted(v)
    idx = (np.arange(v.nt) + shift) % v.nt
    dq = u.q - v.q[idx]
    dq = np.where(np.abs(dq) > math.pi, wrap_angle(dq), dq)
    dp = u.p - v.p[idx]
    da = _h0_norms(u.a - v.a[idx], u.modes.omega)
    return float(max(np.max(np.linalg.norm(dq, axis=1)), np.max(np.linalg.norm(dp, axis=1)),
                     np.max(da)))


def double_winding(loop: LoopState) -> LoopState:
    """q2(t) = q(2t), p2(t) = 2 p(2t) with the same field loop (exact on the grid)."""
    u = untwisted(loop)
    idx = (2 * np.arange(u.nt)) % u.nt
    return LoopState(u.q[idx], 2.0 * u.p[idx], u.a, u.T, u.modes)


# --------------------------------------------------------------------------
# alternating fixed point


@dataclass
class PeriodicOrbit:
    loop: LoopState
    residual: float
    components: OrbitResidual
    action: float
    field_decay: tuple
    iterations: int
    trace: list = dc_field(default_factory=list)
    coupling: float = math.nan

    def catalog_key(self, spec: HamiltonianSpec) -> tuple:
        winding = _winding(spec.manifold, self.loop.q)
        fnorm = float(np.max(_h0_norms(self.loop.a, self.loop.modes.omega)))
        return (self.action, winding, fnorm)


def _winding(manifold, q: np.ndarray) -> tuple:
    closed = np.vstack([q, q[:1]])
    if isinstance(manifold, FlatTorus):
        steps = wrap_angle(np.diff(closed[:, list(manifold.axes)], axis=0))
        return tuple(int(v) for v in np.round(steps.sum(axis=0) / TWO_PI))
    if isinstance(manifold, Sphere) and manifold.dim == 1:
        th = np.array([manifold.angle(x) for x in closed])
        return (int(round(float(np.sum(wrap_angle(np.diff(th)))) / TWO_PI)),)
    return ()


def check_sigma(T: float, scan: int = DIOPHANTINE_SCAN):
    """Raise a resonance error unless T^2 / (2 pi)^2 passes the Diophantine scan."""
    return diophantine_constants(sigma_of(T), scan)


def _field_for_loop(spec, q, p, a_guess, use_resolvent):
    if use_resolvent:
        return resolvent_field(spec, q)
    return first_order_field(spec, q, p, a_guess)


def _sweep_distance(qa, pa, aa, qb, pb, ab, omega):
    dq = qa - qb
    dq = np.where(np.abs(dq) > math.pi, wrap_angle(dq), dq)
    return float(max(np.max(np.abs(dq)), np.max(np.abs(pa - pb)),
                     np.max(_h0_norms(aa - ab, omega))))


def _alternate(spec, s0, nt, tol, max_iter, relaxation, newton_tol, use_resolvent):
    """Run sweeps at one coupling strength; returns (loop, trace, converged)."""
    size = spec.modes.size
    field = np.zeros((nt, size), complex)
    s = particle_shoot(FieldLoop(field, spec.T), s0, spec, tol=newton_tol)
    _, _, q, p = flow_particle(spec, FieldLoop(field, spec.T), s, nt=nt)
    trace = []
    if spec.coupling.strength == 0.0:
        loop = LoopState(q, p, field, spec.T, spec.modes)
        return loop, s, trace, True
    for it in range(1, max_iter + 1):
        target = _field_for_loop(spec, q, p, field, use_resolvent)
        new_field = target if it == 1 else (1.0 - relaxation) * field + relaxation * target
        fl = FieldLoop(new_field, spec.T)
        s = particle_shoot(fl, s, spec, tol=newton_tol)
        _, _, q_new, p_new = flow_particle(spec, fl, s, nt=nt)
        dist = _sweep_distance(q_new, p_new, new_field, q, p, field, spec.modes.omega)
        trace.append(dist)
        q, p, field = q_new, p_new, new_field
        if dist <= 0.1 * tol:
            # final unrelaxed field solve for the converged particle loop
            field = _field_for_loop(spec, q, p, field, use_resolvent)
            loop = LoopState(q, p, field, spec.T, spec.modes)
            if orbit_residual(loop, spec).total <= tol:
                return loop, s, trace, True
    loop = LoopState(q, p, field, spec.T, spec.modes)
    return loop, s, trace, False


def alternating_sweep(loop: LoopState, spec: HamiltonianSpec, newton_tol: float = 1e-10) -> LoopState:
    """One unrelaxed sweep: field solve for the loop's particle, then reshoot the particle."""
    u = untwisted(loop)
    field = _field_for_loop(spec, u.q, u.p, u.a, spec.coupling.kind == "linear")
    fl = FieldLoop(field, spec.T)
    s = particle_shoot(fl, ParticleState(u.q[0], u.p[0]), spec, tol=newton_tol)
    _, _, q, p = flow_particle(spec, fl, s, nt=u.nt)
    return LoopState(q, p, field, spec.T, spec.modes)


def alternating_fixed_point(initial, spec: HamiltonianSpec, nt: int = 64, tol: float = 1e-8,
                            max_iter: int = 30, relaxation: float = 0.7,
                            continuation_steps: int = 8, newton_tol: float = 1e-10,
                            check_diophantine: bool = True) -> PeriodicOrbit:
    """Alternate field solves and particle shooting until the loop is a fixed point.

    ``initial`` is a ParticleState guess (or a LoopState whose first sample
    is used).  The decoupled orbit through the guess seeds the iteration.
    Linear couplings use the second-order resolvent; other couplings use
    the first-order loop field solve.  If direct iteration stalls, the
    coupling is raised geometrically from a small value in
    ``continuation_steps`` stages.
    """
    if not 0.0 < relaxation <= 1.0:
        raise ValueError("relaxation must lie in (0, 1]")
    if nt < 16 or nt & (nt - 1):
        raise ValueError("Nt must be a power of two >= 16")
    if check_diophantine:
        check_sigma(spec.T)
    if isinstance(initial, LoopState):
        u = untwisted(initial)
        initial = ParticleState(u.q[0], u.p[0])
    use_resolvent = spec.coupling.kind == "linear"
    loop, s, trace, ok = _alternate(spec, initial, nt, tol, max_iter, relaxation, newton_tol,
                                    use_resolvent)
    sweeps = len(trace)
    if not ok and continuation_steps > 0:
        eps = spec.coupling.strength
        seed = initial
        for j in range(continuation_steps):
            stage = spec.with_coupling(strength=eps * 2.0 ** (j + 1 - continuation_steps))
            loop, seed, tr, ok = _alternate(stage, seed, nt, tol, max_iter, relaxation,
                                            newton_tol, use_resolvent)
            trace += tr
            sweeps += len(tr)
            if not ok:
                break
    if not ok:
        raise NoConvergence(f"alternating iteration did not reach tol {tol:g}", best=loop, trace=trace)
    comp = orbit_residual(loop, spec)
    try:
        fit = tuple(decay_fit(field_spectrum(loop)))[:2]
    except InsufficientData:  # a zero field (decoupled case) has nothing to fit
        fit = (0.0, math.nan)
    return PeriodicOrbit(loop, comp.total, comp, loop_action(loop, spec), fit, max(sweeps, 1),
                         trace, spec.coupling.strength)


def deduplicate_orbits(orbits, tol: float = 1e-4):
    """Drop orbits within sup-distance ``tol`` of an earlier one, minimizing over grid time shifts."""
    kept = []
    for o in orbits:
        dup = False
        for k in kept:
            if k.loop.nt == o.loop.nt and min(loop_distance(o.loop, k.loop, s)
                                              for s in range(o.loop.nt)) <= tol:
                dup = True
                break
        if not dup:
            kept.append(o)
    return kept


# --------------------------------------------------------------------------
# action descent


class _CircleChart:
    """Angle chart of a circle; q = c + r (cos th, sin th)."""

    dim = 1

    def __init__(self, m: Sphere):
        self.m, self.r, self.c = m, m.radius, m.c
        self.G = m.radius ** 2

    def lift(self, q):
        x = q - self.c
        return np.unwrap(np.arctan2(x[:, 1], x[:, 0]))[:, None]

    def embed(self, th):
        t = th[:, 0]
        return self.c + self.r * np.column_stack([np.cos(t), np.sin(t)])

    def jac(self, th):
        t = th[:, 0]
        return (self.r * np.column_stack([-np.sin(t), np.cos(t)]))[:, :, None]

    def djac(self, th):
        t = th[:, 0]
        return (-self.r * np.column_stack([np.cos(t), np.sin(t)]))[:, :, None, None]


class _TorusChart:
    """Axis coordinates of a flat sub-torus."""

    def __init__(self, m: FlatTorus):
        self.m = m
        self.dim = m.dim
        self.G = 1.0
        self.E = np.eye(m.ambient_d)[:, list(m.axes)]
        self.offset = np.asarray(m.offset, float)

    def lift(self, q):
        return np.unwrap(q[:, list(self.m.axes)], axis=0)

    def embed(self, th):
        q = np.tile(self.offset, (th.shape[0], 1))
        q[:, list(self.m.axes)] = np.mod(th, TWO_PI)
        return q

    def jac(self, th):
        return np.broadcast_to(self.E, (th.shape[0],) + self.E.shape)

    def djac(self, th):
        return np.zeros((th.shape[0], self.E.shape[0], self.dim, self.dim))


@dataclass
class DescentTrace:
    actions: list
    steps: list
    energy: float
    energy_increments: list
    terminal_residual: float
    stationarity: float
    converged: bool
    rejected: int = 0

    @property
    def action_drop(self) -> float:
        return self.actions[0] - self.actions[-1]

    def energy_mismatch(self) -> float:
        drop = self.action_drop
        return abs(drop - self.energy) / abs(drop) if drop else 0.0

    def energy_budget(self, action_floor: float) -> tuple[float, bool]:
        """Budget A(u_0) - action_floor for the accumulated energy, and whether it holds.

        The descent uses an s-independent Hamiltonian, so no homotopy term
        enters; ``action_floor`` is a user-supplied lower bound of the action.
        """
        budget = self.actions[0] - action_floor
        return budget, self.energy <= budget * (1.0 + 1e-12)


class _Reduced:
    """Action of particle loops with the field eliminated (chart coordinates)."""

    def __init__(self, spec: HamiltonianSpec, chart, nt: int, winding, cut):
        self.spec, self.chart, self.nt, self.cut = spec, chart, nt, cut
        self.T = spec.T
        self.times = np.arange(nt) * (spec.T / nt)
        self.trend = np.outer(np.arange(nt) / nt, TWO_PI * np.asarray(winding, float))
        self.vel0 = TWO_PI * np.asarray(winding, float) / spec.T
        self.a = None

    def evaluate(self, th_per):
        spec, ch, cut = self.spec, self.chart, self.cut
        th = th_per + self.trend
        dth = spectral_dt(th_per, self.T) + self.vel0
        q = ch.embed(th)
        J = ch.jac(th)
        p = np.einsum("jdk,jk->jd", J, dth)
        a = first_order_field(spec, q, p, self.a, cut)
        w = self.T / self.nt
        gq, gp, _, pot = batch_interaction(spec, q, p, a, self.times, cut)
        field_part = _field_action_terms(spec, a, self.T)
        G = ch.G
        kin = 0.5 * G * float(np.sum(dth * dth))
        A_red = w * (kin - float(np.sum(pot)) + field_part)
        # chain rule through q = embed(th) and p = jac(th) dth
        Jt_gq = np.einsum("jdk,jd->jk", J, gq)
        Jt_gp = np.einsum("jdk,jd->jk", J, gp)
        dJ = ch.djac(th)
        dJ_gp = np.einsum("jdkl,jd,jl->jk", dJ, gp, dth)
        n_term = -(Jt_gq + dJ_gp) + spectral_dt(Jt_gp, self.T)
        n_term = n_term / G
        self.a = a
        return A_red, n_term, q, p, a


def _field_action_terms(spec, a, T):
    """sum over samples of <pi, dphi/dt> - H_field (unnormalized inner product)."""
    neg, omega = spec.modes.neg, spec.modes.omega
    _, pi_h = phi_pi_from_a(a, neg)
    dphi, _ = phi_pi_from_a(spectral_dt(a, T), neg)
    sympl = spec.volume * float(np.sum(omega * np.real(pi_h * np.conj(dphi))))
    energy = 0.5 * spec.volume * float(np.sum((spec.modes.n2 + 1.0) * np.abs(a) ** 2))
    return sympl - energy


def _nyquist_free(x):
    nt = x.shape[0]
    xh = np.fft.fft(x, axis=0)
    xh[nt // 2] = 0.0
    return np.fft.ifft(xh, axis=0).real


def floer_descent(u0: LoopState, cut: CutoffParams | None, spec: HamiltonianSpec, ds: float = 0.02,
                  steps: int = 5000, tol: float = 1e-8, ds_max: float = 0.05,
                  energy_rtol: float = 0.01, armijo: float = 0.1, residual_tol: float | None = None,
                  check_diophantine: bool = True):
    """Action-gradient descent on particle loops with the field slaved to its loop equation.

    The flow parameter s evolves the chart coordinates th(t) by
    d th/ds = -(L th + N(th)) with L = -d^2/dt^2 integrated exactly per time
    mode and N frozen over a step.  A step is accepted when the action
    decreases (Armijo) and the accumulated energy of the step matches the
    action drop to ``energy_rtol``; otherwise ds is halved.  Returns the
    twisted terminal loop and its DescentTrace.
    """
    if check_diophantine:
        check_sigma(spec.T)
    m = spec.manifold
    if isinstance(m, Sphere) and m.dim == 1:
        chart = _CircleChart(m)
    elif isinstance(m, FlatTorus):
        chart = _TorusChart(m)
    else:
        return _sphere_descent(u0, cut, spec, ds, steps, tol, ds_max, armijo, residual_tol)
    u = untwisted(u0)
    nt, T = u.nt, spec.T
    th = chart.lift(u.q)
    winding = np.round((th[-1] + wrap_angle(th[0] - th[-1]) - th[0]) / TWO_PI)
    red = _Reduced(spec, chart, nt, winding, cut)
    red.a = u.a
    th_per = _nyquist_free(th - red.trend)
    mu = ((TWO_PI / T) * _time_modes(nt)) ** 2
    nyq = nt // 2
    G = chart.G

    def flow(th_per, n_term, h):
        xh = np.fft.fft(th_per, axis=0) / nt
        nh = np.fft.fft(n_term, axis=0) / nt
        decay = np.exp(-mu * h)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            phi1 = np.where(mu > 0, -np.expm1(-mu * h) / np.where(mu > 0, mu, 1.0), h)[:, None]
            wgt = np.where(mu > 0, -np.expm1(-2 * mu * h) / np.where(mu > 0, 2 * mu, 1.0), h)[:, None]
        out = decay * xh - phi1 * nh
        out[nyq] = 0.0
        g = mu[:, None] * xh + nh
        g[nyq] = 0.0
        energy = G * T * float(np.sum(np.abs(g) ** 2 * wgt))
        return np.fft.ifft(out * nt, axis=0).real, energy

    def stationarity(th_per, n_term):
        g = -spectral_dt(spectral_dt(th_per, T), T) + n_term
        g = _nyquist_free(g)
        return math.sqrt(G) * float(np.max(np.abs(g)))

    A, n_term, q, p, a = red.evaluate(th_per)
    actions, svals, incs = [A], [0.0], []
    energy, rejected, s_now = 0.0, 0, 0.0
    stat = stationarity(th_per, n_term)
    converged = stat <= tol
    h = ds
    k = 0
    while not converged and k < steps:
        cand, e_step = flow(th_per, n_term, h)
        saved_a = red.a
        A_new, n_new, q_new, p_new, a_new = red.evaluate(cand)
        drop = A - A_new
        ok = drop >= armijo * e_step - 1e-10 and abs(drop - e_step) <= energy_rtol * e_step + 1e-13
        if not ok:
            red.a = saved_a
            rejected += 1
            h *= 0.5
            if h < 1e-12:
                raise NoConvergence("descent step size underflow", best=_twisted(q, p, a, spec),
                                    trace=actions)
            continue
        th_per, n_term, A, q, p, a = cand, n_new, A_new, q_new, p_new, a_new
        energy += e_step
        s_now += h
        actions.append(A)
        svals.append(s_now)
        incs.append(e_step)
        k += 1
        stat = stationarity(th_per, n_term)
        converged = stat <= tol
        h = min(1.25 * h, ds_max)
    loop = LoopState(q, p, a, T, spec.modes)
    res = orbit_residual(loop, spec).total
    trace = DescentTrace(actions, svals, energy, incs, res, stat, converged, rejected)
    if residual_tol is not None and converged and res > residual_tol:
        raise NoConvergence(f"stationary loop has residual {res:.3e}", best=loop, trace=trace)
    return gauge_transform(loop, "forward"), trace


def _twisted(q, p, a, spec):
    return gauge_transform(LoopState(q, p, a, spec.T, spec.modes), "forward")


def _sphere_descent(u0, cut, spec, ds, steps, tol, ds_max, armijo, residual_tol):
    """Projected descent for spheres of dimension >= 2 in ambient coordinates.

    The reduced action is evaluated with q on the sphere and p = P(dq/dt);
    each step applies the exact kinetic integrating factor in ambient
    coordinates, then retracts to the sphere.  The energy bookkeeping is
    first order in ds here, so the energy identity holds only approximately.
    """
    m = spec.manifold
    u = untwisted(u0)
    nt, T = u.nt, spec.T
    times = np.arange(nt) * (T / nt)
    w = T / nt
    mu = ((TWO_PI / T) * _time_modes(nt)) ** 2
    R = m.radius

    def evaluate(q, a_guess):
        dq = spectral_dt(q, T)
        e = (q - m.c) / R
        p = dq - np.sum(dq * e, axis=1)[:, None] * e
        a = first_order_field(spec, q, p, a_guess, cut)
        gq, gp, _, pot = batch_interaction(spec, q, p, a, times, cut)
        total = 0.5 * float(np.sum(p * p)) - float(np.sum(pot)) + _field_action_terms(spec, a, T)
        # derivative of the loop functional along tangent variations
        edq = np.sum(e * dq, axis=1)[:, None]
        kin = -edq * p / R - spectral_dt(p, T)
        pot = -gq + edq * gp / R + spectral_dt(gp, T)
        g = kin + pot
        g = g - np.sum(g * e, axis=1)[:, None] * e
        return w * total, g, p, a

    q = np.array([m.retract(x) for x in u.q])
    A, g, p, a = evaluate(q, u.a)
    actions, svals, incs = [A], [0.0], []
    energy, rejected, s_now, h = 0.0, 0, 0.0, ds
    stat = float(np.max(np.linalg.norm(g, axis=1)))
    converged = stat <= tol
    k = 0
    while not converged and k < steps:
        nonlin = g + spectral_dt(spectral_dt(q, T), T)
        xh = np.fft.fft(q, axis=0) / nt
        nh = np.fft.fft(nonlin, axis=0) / nt
        with np.errstate(divide="ignore", invalid="ignore"):
            phi1 = np.where(mu > 0, -np.expm1(-mu * h) / np.where(mu > 0, mu, 1.0), h)[:, None]
        xh_new = np.exp(-mu * h)[:, None] * xh - phi1 * nh
        cand = np.fft.ifft(xh_new * nt, axis=0).real
        cand = np.array([m.retract(x) for x in cand])
        e_step = h * w * float(np.sum(g * g))
        A_new, g_new, p_new, a_new = evaluate(cand, a)
        if A - A_new < armijo * e_step - 1e-10:
            rejected += 1
            h *= 0.5
            if h < 1e-12:
                raise NoConvergence("descent step size underflow", trace=actions)
            continue
        q, g, p, a, A = cand, g_new, p_new, a_new, A_new
        energy += e_step
        s_now += h
        actions.append(A)
        svals.append(s_now)
        incs.append(e_step)
        k += 1
        stat = float(np.max(np.linalg.norm(g, axis=1)))
        converged = stat <= tol
        h = min(1.25 * h, ds_max)
    loop = LoopState(q, p, a, T, spec.modes)
    res = orbit_residual(loop, spec).total
    trace = DescentTrace(actions, svals, energy, incs, res, stat, converged, rejected)
    if residual_tol is not None and converged and res > residual_tol:
        raise NoConvergence(f"stationary loop has residual {res:.3e}", best=loop, trace=trace)
    return gauge_transform(loop, "forward"), trace


def loop_from_particle(spec: HamiltonianSpec, s: ParticleState, nt: int = 64, field=None) -> LoopState:
    """Sample the particle trajectory through ``s`` under a field loop (zero by default)."""
    fl = FieldLoop.zeros(nt, spec.modes.size, spec.T) if field is None else FieldLoop(field, spec.T)
    _, _, q, p = flow_particle(spec, fl, s, nt=nt)
    return LoopState(q, p, fl.a, spec.T, spec.modes)


# --------------------------------------------------------------------------
# Galerkin convergence


@dataclass
class GalerkinProbe:
    k_list: list
    gaps: list
    rate: float
    K: int

    def rows(self):
        return [(k, g) for k, g in zip(self.k_list, self.gaps)]


def _restricted_spec(spec: HamiltonianSpec, k: int) -> HamiltonianSpec:
    d, K = spec.d, spec.modes.k
    idx = embed_index(d, k, K)
    bump = BumpProfile(mode_set(d, k), spec.bump.coeffs[idx], spec.bump.decay_rate)
    return replace(spec, bump=bump)


def galerkin_convergence_probe(spec: HamiltonianSpec, k_list, n_states: int = 16, seed: int = 0,
                               cut: CutoffParams | None = None, field_scale: float = 1e-4,
                               p_scale: float = 1.0) -> GalerkinProbe:
    """sup over a random ensemble of |grad G^k - grad G^K| for the cut-off gauge Hamiltonian.

    ``spec`` fixes the reference truncation K.  Ensemble fields have
    independent Gaussian amplitudes of size ``field_scale`` on every mode of
    the K-ball (no decay), so the gap isolates the truncation of rho.  The
    gap combines the q and p gradients with the field gradient in the
    unnormalized H^{1/2} norm.  ``rate`` is minus the fitted slope of
    log(gap) against k over the positive gaps.
    """
    K = spec.modes.k
    if K < max(k_list):
        raise ValueError("reference truncation must not be below a probed k")
    rng = np.random.default_rng(seed)
    m = spec.manifold
    states = []
    for _ in range(n_states):
        q = m.sample_point(rng)
        p = m.project(q, p_scale * rng.standard_normal(spec.d))
        a = field_scale * (rng.standard_normal(spec.modes.size) + 1j * rng.standard_normal(spec.modes.size))
        states.append((q, p, a, float(rng.uniform(0, spec.T))))
    omega_K = spec.modes.omega
    gaps = []
    for k in k_list:
        sk = _restricted_spec(spec, k) if k < K else spec
        idx = embed_index(spec.d, k, K) if k < K else np.arange(spec.modes.size)
        worst = 0.0
        for q, p, a, t in states:
            full = grad_hamiltonian(FullState.make(q, p, FieldState(spec.modes, a)), t, spec, cut, gauge=True)
            part = grad_hamiltonian(FullState.make(q, p, FieldState(sk.modes, a[idx])), t, sk, cut, gauge=True)
            da = full.a.copy()
            da[idx] -= part.a
            gap2 = (float(np.sum((full.q - part.q) ** 2)) + float(np.sum((full.p - part.p) ** 2))
                    + spec.volume * float(np.sum(omega_K * np.abs(da) ** 2)))
            worst = max(worst, math.sqrt(gap2))
        gaps.append(worst)
    ks = np.array(k_list, float)
    g = np.array(gaps)
    pos = g > 0
    rate = -float(np.polyfit(ks[pos], np.log(g[pos]), 1)[0]) if pos.sum() >= 2 else math.nan
    return GalerkinProbe(list(k_list), gaps, rate, K)
