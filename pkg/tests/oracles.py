"""Independent reference computations used by several test modules.

The Hamiltonian here is assembled directly from its defining formulas
(kinetic + potential + field energy + cut-off interaction), vectorized over a
batch of states, and shares no code with ``pflab.dynamics`` beyond the mode
tables and the C^3 majorant (tested on its own in test_spectral_field).
"""

import math

import numpy as np

from pflab.spectral_field import majorant_constant, majorant_weights

TWO_PI = 2.0 * math.pi


def smoothstep(r, R):
    """chi_R(r) from g(x) = exp(-1/x): 1 below R, 0 above R + 1."""
    r = np.asarray(r, float)
    x, y = R + 1.0 - r, r - R
    gx = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    gy = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return gx / (gx + gy)


def coupling_value(spec, A, B, t):
    cp = spec.coupling
    if cp.kind == "linear":
        return cp.strength * A
    return cp.strength * (np.sin(A) + cp.c * math.cos(TWO_PI * t / spec.T) * B)


def potential_value(spec, q, t):
    out = np.zeros(q.shape[0])
    for term in spec.potential.terms:
        k = np.asarray(term.wavevector, float)
        out += (term.amplitude * np.cos(q @ k + term.phase)
                * math.cos(TWO_PI * term.time_mode * t / spec.T + term.time_phase))
    return out


def hamiltonian_batch(spec, q, p, a, t, cut=None, gauge=False):
    """H (or the gauge Hamiltonian G_t when ``gauge``) for rows of q, p, a at time t."""
    q, p, a = np.atleast_2d(q), np.atleast_2d(p), np.atleast_2d(a)
    modes = spec.modes
    vol = TWO_PI ** spec.d
    if gauge:
        a = a * np.exp(1j * modes.omega * t)
    z = vol * np.sum(a * spec.bump.coeffs * np.exp(1j * (q @ modes.n.T)), axis=1)
    F = coupling_value(spec, z.real, -z.imag, t)
    if cut is not None:
        norm = np.linalg.norm(p, axis=1)
        with np.errstate(divide="ignore"):
            X = np.where(norm > 0, smoothstep(np.log(np.where(norm > 0, norm, 1.0)), cut.R2), 1.0)
        w = majorant_weights(modes) * np.abs(spec.bump.coeffs) ** 2
        n3 = majorant_constant(spec.d) * np.sqrt(np.sum(w * np.abs(a) ** 2, axis=1))
        F = X * smoothstep(n3, cut.R1) * F
    H = 0.5 * np.sum(p * p, axis=1) + potential_value(spec, q, t) + F
    if not gauge:
        H = H + 0.5 * vol * np.sum((modes.n2 + 1.0) * np.abs(a) ** 2, axis=1)
    return H


def directions(spec, q):
    """Unit directions of the state space: tangent q, tangent p, metric-orthonormal field."""
    E = spec.manifold.tangent_basis(q)
    d, size = spec.d, spec.modes.size
    scale = np.sqrt(TWO_PI ** d * spec.modes.omega)
    dirs = []
    for e in E:
        dirs.append((e, np.zeros(d), np.zeros(size, complex)))
    for e in E:
        dirs.append((np.zeros(d), e, np.zeros(size, complex)))
    for i in range(size):
        for unit in (1.0, 1j):
            da = np.zeros(size, complex)
            da[i] = unit / scale[i]
            dirs.append((np.zeros(d), np.zeros(d), da))
    return dirs


def fd_directional(spec, q, p, a, t, cut=None, gauge=False, h=1e-4, richardson=True):
    """Central differences of the oracle Hamiltonian along every direction.

    With ``richardson`` the steps h and h/2 are combined to cancel the h^2 term.
    """
    dirs = directions(spec, q)
    dq = np.array([d[0] for d in dirs])
    dp = np.array([d[1] for d in dirs])
    da = np.array([d[2] for d in dirs])

    def central(step):
        plus = hamiltonian_batch(spec, q + step * dq, p + step * dp, a + step * da, t, cut, gauge)
        minus = hamiltonian_batch(spec, q - step * dq, p - step * dp, a - step * da, t, cut, gauge)
        return (plus - minus) / (2 * step)

    d1 = central(h)
    if not richardson:
        return d1, dirs
    return (4.0 * central(h / 2) - d1) / 3.0, dirs


def analytic_directional(spec, grad, dirs):
    """<grad, direction> in the product metric (H^{1/2} metric on the field slot)."""
    vol = TWO_PI ** spec.d
    w = vol * spec.modes.omega
    return np.array([grad.q @ dq + grad.p @ dp + float(np.sum(w * np.real(grad.a * np.conj(da))))
                     for dq, dp, da in dirs])


def relative_errors(exact, approx, floor=1e-3):
    """Per-coordinate relative error; coordinates below floor * sup are measured against that level."""
    denom = np.maximum(np.abs(exact), floor * np.max(np.abs(exact)))
    return np.abs(exact - approx) / denom


def field_slot_norm(spec, ga):
    return math.sqrt(TWO_PI ** spec.d * float(np.sum(spec.modes.omega * np.abs(ga) ** 2)))


def field_slot_bound(spec, R1):
    """Amplitude-independent bound on the field slot of the cut gradient.

    chi X (f1 grad A + f2 grad B) has norm <= |grad f| sqrt(kappa), and the
    chi' term is nonzero only where the majorant, hence |A| and |B|, stay
    below R1 + 1; there |F| <= eps (1 + |c|)(R1 + 1) and the majorant
    gradient has norm <= C sqrt(max W / (vol w)).
    """
    eps, c = spec.coupling.strength, abs(spec.coupling.c)
    lip = eps * (1.0 + c)
    vol = TWO_PI ** spec.d
    W = majorant_weights(spec.modes) * np.abs(spec.bump.coeffs) ** 2
    grad_n3 = majorant_constant(spec.d) * math.sqrt(float(np.max(W / (vol * spec.modes.omega))))
    kappa = vol * float(np.sum(np.abs(spec.bump.coeffs) ** 2 / spec.modes.omega))
    return lip * math.sqrt(kappa) + 2.0 * lip * (R1 + 1.0) * grad_n3  # max |chi'| = 2


# ---------------------------------------------------------------- resolvent checks


def smooth_forcing(rng, d=2, k=8, M=16, T=None, rate=0.5, hermitian=True):
    """Random space-time spectrum with exp(-rate (|m| + |n|)) envelope."""
    from pflab.smalldiv import SpaceTimeSpectrum
    from pflab.spectral_field import mode_set
    T = TWO_PI * math.sqrt((1 + math.sqrt(5)) / 2) if T is None else T
    ms = mode_set(d, k)
    m = np.arange(-M, M + 1)
    env = np.exp(-rate * (np.abs(m)[:, None] + ms.norm[None, :]))
    c = (rng.standard_normal(env.shape) + 1j * rng.standard_normal(env.shape)) * env
    if hermitian:
        c = 0.5 * (c + np.conj(c[::-1, :][:, ms.neg]))
    return SpaceTimeSpectrum(ms, M, T, c)


def mode_residual(u, f):
    """Per-mode relative residual of (sigma N - m^2) u + sigma f = 0 in extended precision.

    The product sigma * N of a double and a small integer is exact in the
    64-bit-mantissa long double, so the divisor carries no cancellation error.
    """
    ld = np.longdouble
    sigma = ld((u.T / TWO_PI) ** 2)  # the double sigma used by the solver
    N = (u.modes.n2 + 1).astype(ld)[None, :]
    m = u.m.astype(ld)[:, None]
    gap = sigma * N - m * m
    res_re = gap * u.coeffs.real.astype(ld) + sigma * f.coeffs.real.astype(ld)
    res_im = gap * u.coeffs.imag.astype(ld) + sigma * f.coeffs.imag.astype(ld)
    scale = sigma * np.hypot(f.coeffs.real, f.coeffs.imag).astype(ld)
    mask = scale > 0
    rel = np.hypot(res_re, res_im)[mask] / scale[mask]
    return float(np.max(rel)) if rel.size else 0.0


def time_domain_residual(u, f, nt=48, nx=24):
    """phi_tt - Delta phi + phi + f on a collocation grid, derivatives by grid FFTs (d = 2)."""
    U = u.to_grid(nt, nx)
    F = f.to_grid(nt, nx)
    w = TWO_PI * np.fft.fftfreq(nt, d=u.T / nt)
    kx = np.fft.fftfreq(nx, d=1.0 / nx)
    sym = -(w[:, None, None] ** 2) + kx[None, :, None] ** 2 + kx[None, None, :] ** 2 + 1.0
    res = np.fft.ifftn(sym * np.fft.fftn(U)).real + F
    return float(np.max(np.abs(res)) / np.max(np.abs(F)))
