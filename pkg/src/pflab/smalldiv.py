"""Small divisors: continued fractions, Diophantine constants, the spectrum
lambda_{m,n} = 2 pi m / T - sqrt(n^2 + 1), and mode-wise resolvent solves.

Throughout, sigma = T^2 / (2 pi)^2 and N = n^2 + 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np

from .errors import InsufficientData, RationalResonance, ResonanceError
from .spectral_field import ModeSet, mode_set

RESONANCE_THRESHOLD = 1e-10
R_GRID = (1.5, 2.0, 2.5, 3.0)
EXPONENT_GRID = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
STABILITY_RATIO = 0.5


def sigma_of(T: float) -> float:
    return (T / (2.0 * math.pi)) ** 2


# --------------------------------------------------------------------------
# compensated arithmetic

_SPLIT = 134217729.0  # 2^27 + 1


def _split(x):
    c = _SPLIT * x
    hi = c - (c - x)
    return hi, x - hi


def two_product(a, b):
    """p, e with p = fl(a*b) and a*b = p + e exactly (Dekker)."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def sigma_gap(sigma, N, m):
    """sigma * N - m^2 with the product carried in double-double."""
    p, e = two_product(np.asarray(sigma, float), np.asarray(N, float))
    return (p - np.asarray(m, float) ** 2) + e


def lambda_values(T: float, m, N):
    """2 pi m / T - sqrt(N), rationalized where the two terms nearly cancel."""
    m = np.asarray(m, float)
    N = np.asarray(N, float)
    x = (2.0 * math.pi / T) * m
    w = np.sqrt(N)
    p, e = two_product(x, x)
    close = (p - N) + e
    with np.errstate(divide="ignore", invalid="ignore"):
        rational = close / (x + w)
    return np.where(m > 0, rational, x - w)


# --------------------------------------------------------------------------
# continued fractions and Diophantine constants


@dataclass
class ContinuedFraction:
    quotients: list
    convergents: list
    truncated: bool


def continued_fraction(sigma: float, depth: int = 40) -> ContinuedFraction:
    """Expansion of the double ``sigma`` computed in exact rational arithmetic.

    The expansion stops when a convergent reproduces sigma to within one ulp.
    If that happens while q^2 * ulp is still tiny, sigma is treated as that
    rational and the result is complete.  Otherwise the final quotient only
    encodes the rounding of sigma; it is dropped and the result is flagged as
    truncated.  Hitting ``depth`` also sets the flag.
    """
    if depth < 1 or depth > 40:
        raise ValueError("depth must lie in [1, 40]")
    x = Fraction(sigma)
    ulp = math.ulp(sigma) if sigma else math.ulp(1.0)
    quotients, convergents = [], []
    p0, q0, p1, q1 = 1, 0, 0, 1
    for _ in range(depth):
        a = math.floor(x)
        quotients.append(a)
        p0, p1 = a * p0 + p1, p0
        q0, q1 = a * q0 + q1, q0
        convergents.append((p0, q0))
        err = abs(Fraction(p0, q0) - Fraction(sigma))
        frac = x - a
        if frac == 0:
            return ContinuedFraction(quotients, convergents, False)
        if err <= ulp:
            if q0 * q0 * ulp > 1e-3 and len(quotients) > 1:
                # the last quotient absorbed the rounding of sigma itself
                return ContinuedFraction(quotients[:-1], convergents[:-1], True)
            return ContinuedFraction(quotients, convergents, False)
        x = 1 / frac
    return ContinuedFraction(quotients, convergents, True)


@dataclass
class DiophantineReport:
    sigma: float
    r: float
    best_c: float
    fitted_r: float
    witness_n: int
    scan_limit: int
    n_min: int
    global_c: float
    global_witness_n: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _normalized_gaps(sigma: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(1, N + 1, dtype=float)
    prod = sigma * n
    dist = np.abs(prod - np.round(prod))
    return n, dist


def diophantine_constants(sigma: float, N: int, r: float = 2.0, n_min: int = 10) -> DiophantineReport:
    """Estimate c in inf_m |sigma - m/n| >= c n^-r over denominators n <= N.

    ``best_c`` is the minimum of n^(r-1) |sigma n - round(sigma n)| over
    n_min <= n <= N.  Finitely many small denominators only rescale c, so the
    tail minimum is the quantity that governs small divisors; the minimum over
    every n >= 1 is kept in ``global_c``.  ``fitted_r`` is the smallest r in
    R_GRID whose constant over [n_min, N] stays within a factor two of its
    value over [n_min, sqrt N].
    """
    if N < 2:
        raise ValueError("scan limit must be at least 2")
    if n_min < 1:
        raise ValueError("n_min must be positive")
    n, dist = _normalized_gaps(sigma, N)
    close = dist / n < 1e-12
    if np.any(close):
        w = int(n[np.argmax(close)])
        raise RationalResonance(
            f"sigma = {sigma!r} is within 1e-12 of {round(sigma * w)}/{w}",
            witness=w, divisor=float(dist[w - 1] / w))

    def window_min(rr, hi):
        lo = min(n_min, hi)
        vals = n[lo - 1:hi] ** (rr - 1.0) * dist[lo - 1:hi]
        j = int(np.argmin(vals))
        return float(vals[j]), int(n[lo - 1 + j])

    best_c, witness = window_min(r, N)
    allvals = n ** (r - 1.0) * dist
    g = int(np.argmin(allvals))
    half = max(int(math.isqrt(N)), min(n_min, N))
    fitted = R_GRID[-1]
    for rr in R_GRID:
        full, _ = window_min(rr, N)
        part, _ = window_min(rr, half)
        if full >= STABILITY_RATIO * part:
            fitted = rr
            break
    return DiophantineReport(float(sigma), float(r), best_c, fitted, witness, int(N), int(n_min),
                             float(allvals[g]), g + 1)


# --------------------------------------------------------------------------
# the lambda spectrum


@dataclass
class LambdaSpectrum:
    T: float
    k: int
    M: int
    d: int
    m: np.ndarray
    n: np.ndarray
    lam: np.ndarray
    min_abs: float
    witness: tuple
    shell_N: np.ndarray
    shell_min: np.ndarray
    fitted_c: float
    fitted_exponent: float
    record_slope: float

    def rows(self):
        for mi, ni, li in zip(self.m, self.n, self.lam):
            yield int(mi), tuple(int(v) for v in ni), float(li)


def _stable_exponent(N: np.ndarray, vals: np.ndarray) -> tuple[float, float]:
    """Smallest exponent on EXPONENT_GRID for which min vals*N^e is stable.

    Stability compares the minimum over all shells with the minimum over
    shells N <= sqrt(max N), mirroring ``diophantine_constants``.
    """
    cut = math.sqrt(N.max())
    head = N <= max(cut, N.min())
    for e in EXPONENT_GRID:
        w = vals * N ** e
        full, part = w.min(), w[head].min()
        if full >= STABILITY_RATIO * part:
            return float(full), e
    e = EXPONENT_GRID[-1]
    return float((vals * N ** e).min()), e


def lambda_spectrum(T: float, k: int, M: int, d: int = 2) -> LambdaSpectrum:
    """Enumerate lambda_{m,n} for |m| <= M, |n|_2 <= k with shell-wise minima.

    The decay of min_m |lambda| in N = n^2 + 1 is summarized by a bound
    c' N^-e (see ``_stable_exponent``) and by the least-squares slope of the
    record lows in log-log coordinates.
    """
    if k < 0 or M < 0:
        raise ValueError("truncations must be non-negative")
    ms = mode_set(d, k)
    ms_m = np.arange(-M, M + 1)
    mm, idx = np.meshgrid(ms_m, np.arange(ms.size), indexing="ij")
    mm, idx = mm.ravel(), idx.ravel()
    lam = lambda_values(T, mm, ms.n2[idx] + 1.0)
    j = int(np.argmin(np.abs(lam)))
    shells = np.unique(ms.n2 + 1)
    lam_shell = np.abs(lambda_values(T, ms_m[:, None], shells[None, :].astype(float)))
    shell_min = lam_shell.min(axis=0)
    positive = shell_min > 0
    if positive.sum() >= 2:
        c_fit, e_fit = _stable_exponent(shells[positive].astype(float), shell_min[positive])
        rec_N, rec_v, best = [], [], math.inf
        for Nv, v in zip(shells[positive], shell_min[positive]):
            if v < best:
                best = v
                rec_N.append(Nv)
                rec_v.append(v)
        slope = (-float(np.polyfit(np.log(rec_N), np.log(rec_v), 1)[0])
                 if len(rec_N) >= 2 else math.nan)
    else:
        c_fit, e_fit, slope = 0.0, math.nan, math.nan
    return LambdaSpectrum(T, k, M, d, mm, ms.n[idx], lam, float(abs(lam[j])),
                          (int(mm[j]), tuple(int(v) for v in ms.n[idx[j]])),
                          shells, shell_min, c_fit, e_fit, slope)


def flow_separation_bound(T: float, k: int, h: float, h0: float, d: int = 2) -> float:
    """c''(k) = min_{|n| <= k} |exp(i T w_n) - 1| (n^2 + 1)^(h0/2).

    The ratio |phi_T u - u|_h / |u|_{h-h0} is mode-wise independent of h.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    shells = np.unique(mode_set(d, k).n2 + 1).astype(float)
    gap = 2.0 * np.abs(np.sin(0.5 * T * np.sqrt(shells)))
    return float(np.min(gap * shells ** (h0 / 2.0)))


# --------------------------------------------------------------------------
# space-time spectra and the resolvent


@dataclass(frozen=True, eq=False)
class SpaceTimeSpectrum:
    """Coefficients u(m, n) of u(t, x) = sum u(m, n) exp(i (2 pi m t / T + n.x)).

    ``coeffs[m + M, i]`` holds the time mode m and the i-th space mode.
    """

    modes: ModeSet
    M: int
    T: float
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, complex)
        if c.shape != (2 * self.M + 1, self.modes.size):
            raise ValueError("coefficient array shape does not match (2M+1, modes)")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def m(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def hermitian_defect(self) -> float:
        c = self.coeffs
        mirror = np.conj(c[::-1, :][:, self.modes.neg])
        return float(np.max(np.abs(c - mirror), initial=0.0))

    def time_samples(self, nt: int) -> np.ndarray:
        """Space coefficients at t_j = j T / nt, shape (nt, modes)."""
        if nt < 2 * self.M + 1:
            raise ValueError("too few time samples for the time truncation")
        g = np.zeros((nt, self.modes.size), complex)
        g[self.m % nt] = self.coeffs
        return np.fft.ifft(g, axis=0) * nt

    def to_grid(self, nt: int, nx: int) -> np.ndarray:
        """Real part of the synthesized function on an (nt, nx, ..., nx) grid."""
        d = self.modes.d
        if nx < 2 * self.modes.k + 1:
            raise ValueError("space grid too coarse")
        g = np.zeros((nt,) + (nx,) * d, complex)
        idx = (self.m[:, None] % nt,) + tuple((self.modes.n % nx).T[:, None, :])
        g[idx] = self.coeffs
        return (np.fft.ifftn(g) * g.size).real

    @classmethod
    def from_time_samples(cls, samples: np.ndarray, modes: ModeSet, M: int, T: float) -> "SpaceTimeSpectrum":
        nt = samples.shape[0]
        if nt < 2 * M + 2:
            raise ValueError("Nyquist condition violated: need Nt >= 2M + 2")
        c = np.fft.fft(samples, axis=0) / nt
        return cls(modes, M, T, c[np.arange(-M, M + 1) % nt])


@dataclass
class DivisorReport:
    min_divisor: float
    witness: tuple
    max_gain: float


def resolvent_solve(forcing: SpaceTimeSpectrum, T: float | None = None):
    """Solve phi_tt = Delta phi - phi - f mode by mode.

    The mode equation is (sigma - m^2/N) phi(m,n) = -(sigma/N) f(m,n), i.e.
    phi = -sigma f / (sigma N - m^2) with the gap sigma N - m^2 computed in
    compensated arithmetic.
    """
    T = forcing.T if T is None else T
    sigma = sigma_of(T)
    N = forcing.modes.n2 + 1.0
    m = forcing.m.astype(float)
    gap = sigma_gap(sigma, N[None, :], m[:, None])
    div = gap / N[None, :]
    j = np.unravel_index(int(np.argmin(np.abs(div))), div.shape)
    witness = (int(forcing.m[j[0]]), tuple(int(v) for v in forcing.modes.n[j[1]]))
    mind = float(abs(div[j]))
    if mind < RESONANCE_THRESHOLD:
        raise ResonanceError(f"near-resonant divisor {mind:.3e} at (m, n) = {witness}",
                             witness=witness, divisor=mind)
    out = -sigma * forcing.coeffs / gap
    gain = sigma / np.abs(gap)
    report = DivisorReport(mind, witness, float(gain.max()))
    return SpaceTimeSpectrum(forcing.modes, forcing.M, T, out), report


def resolvent_table(forcing: SpaceTimeSpectrum, T: float | None = None):
    """Rows (m, n, lambda, divisor, gain) for every mode of a forcing spectrum."""
    T = forcing.T if T is None else T
    sigma = sigma_of(T)
    N = forcing.modes.n2 + 1.0
    rows = []
    with np.errstate(divide="ignore"):
        gains = sigma / np.abs(sigma_gap(sigma, N[None, :], forcing.m.astype(float)[:, None]))
    for r, mi in enumerate(forcing.m):
        lam = lambda_values(T, np.full(N.shape, mi), N)
        gap = sigma_gap(sigma, N, float(mi))
        for i in range(forcing.modes.size):
            rows.append((int(mi), tuple(int(v) for v in forcing.modes.n[i]), float(lam[i]),
                         float(gap[i] / N[i]), float(gains[r, i])))
    return rows


@dataclass
class DecayFit:
    C: float
    alpha: float
    residual: float
    n_modes: int

    def __iter__(self):
        return iter((self.C, self.alpha, self.residual))


def decay_fit(spec: SpaceTimeSpectrum, floor: float = 1e-14, min_modes: int = 8) -> DecayFit:
    """Least squares of log|u(m,n)| against log C - alpha (|m| + |n|_2)."""
    mag = np.abs(spec.coeffs)
    x = np.abs(spec.m)[:, None] + spec.modes.norm[None, :]
    keep = mag > floor
    if keep.sum() < min_modes:
        raise InsufficientData(f"only {int(keep.sum())} coefficients above {floor:g}")
    xs, ys = x[keep], np.log(mag[keep])
    A = np.column_stack([np.ones_like(xs), -xs])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    res = ys - A @ coef
    return DecayFit(float(math.exp(coef[0])), float(coef[1]),
                    float(math.sqrt(np.mean(res ** 2))), int(keep.sum()))
