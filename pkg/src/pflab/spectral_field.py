"""Truncated Fourier fields on the flat torus T^d = R^d / (2 pi Z)^d.

Conventions used throughout the package:

* synthesis u(x) = sum_n u_n exp(i n.x), analysis u_n = (2 pi)^-d int u(x) exp(-i n.x) dx;
* a real field pair (phi, pi) is stored through the single complex amplitude
  a(n) = phi_n - i pi_n, so that sum_n a(n) exp(i n.x) = phi(x) - i pi(x) and
  reality of (phi, pi) holds for every choice of a;
* the free flow multiplies a(n) by exp(i w_n t) with w_n = sqrt(n^2 + 1);
* norms and ``inner_h_half`` use the normalized measure dx / (2 pi)^d, while
  convolutions use the plain measure dx, so constants convolve to the product
  of their means times (2 pi)^d.

Modes live in the Euclidean ball |n|_2 <= k, enumerated lexicographically.
The set is symmetric under n -> -n, which reverses lexicographic order, so the
index of -n is ``N - 1 - i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import lru_cache
import math

import numpy as np
from scipy import integrate, special

CONVENTION_TAG = "a=phi_hat-i*pi_hat;u(x)=sum_n u_n exp(i n.x);normalized_analysis"

ScaleIndex = float


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Lattice points n in Z^d with |n|_2 <= k, in lexicographic order."""

    d: int
    k: int
    n: np.ndarray = dc_field(repr=False)
    n2: np.ndarray = dc_field(repr=False)
    omega: np.ndarray = dc_field(repr=False)

    @property
    def size(self) -> int:
        return self.n.shape[0]

    @property
    def neg(self) -> np.ndarray:
        return np.arange(self.size - 1, -1, -1)

    @property
    def norm(self) -> np.ndarray:
        return np.sqrt(self.n2)

    def index(self, n) -> int:
        return _index_table(self.d, self.k)[tuple(int(v) for v in n)]

    def weights(self, power: float) -> np.ndarray:
        """(n^2 + 1)^power for every mode."""
        return (self.n2 + 1.0) ** power


@lru_cache(maxsize=None)
def mode_set(d: int, k: int) -> ModeSet:
    if d < 1:
        raise ValueError("dimension must be positive")
    if k < 0:
        raise ValueError("truncation must be non-negative")
    grid = np.indices((2 * k + 1,) * d).reshape(d, -1).T - k
    n2 = np.sum(grid * grid, axis=1)
    keep = n2 <= k * k
    grid, n2 = grid[keep], n2[keep]
    n = np.ascontiguousarray(grid, dtype=np.int64)
    for arr in (n, n2):
        arr.setflags(write=False)
    omega = np.sqrt(n2 + 1.0)
    omega.setflags(write=False)
    return ModeSet(d, k, n, n2.astype(np.int64), omega)


@lru_cache(maxsize=None)
def _index_table(d: int, k: int) -> dict:
    ms = mode_set(d, k)
    return {tuple(int(v) for v in row): i for i, row in enumerate(ms.n)}


@lru_cache(maxsize=None)
def embed_index(d: int, k_small: int, k_big: int) -> np.ndarray:
    """Positions of the modes of ball(k_small) inside ball(k_big)."""
    if k_small > k_big:
        raise ValueError("cannot embed a larger ball into a smaller one")
    table = _index_table(d, k_big)
    idx = np.array([table[tuple(int(v) for v in row)] for row in mode_set(d, k_small).n])
    idx.setflags(write=False)
    return idx


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=np.complex128, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FieldState:
    """Complex amplitudes a(n) = phi_n - i pi_n on a mode ball."""

    modes: ModeSet
    coeffs: np.ndarray

    def __post_init__(self):
        c = _readonly(self.coeffs)
        if c.shape != (self.modes.size,):
            raise ValueError(f"expected {self.modes.size} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def d(self) -> int:
        return self.modes.d

    @property
    def truncation_k(self) -> int:
        return self.modes.k

    @classmethod
    def zeros(cls, d: int, k: int) -> "FieldState":
        ms = mode_set(d, k)
        return cls(ms, np.zeros(ms.size, complex))

    @classmethod
    def single_mode(cls, d: int, k: int, n, amplitude: complex = 1.0) -> "FieldState":
        ms = mode_set(d, k)
        c = np.zeros(ms.size, complex)
        c[ms.index(n)] = amplitude
        return cls(ms, c)

    @classmethod
    def from_phi_pi(cls, modes: ModeSet, phi_hat, pi_hat, atol: float = 1e-12) -> "FieldState":
        """Build from Fourier coefficients of a real pair; checks Hermitian symmetry."""
        phi_hat = np.asarray(phi_hat, complex)
        pi_hat = np.asarray(pi_hat, complex)
        neg = modes.neg
        for name, c in (("phi", phi_hat), ("pi", pi_hat)):
            scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
            if np.max(np.abs(c - np.conj(c[neg])), initial=0.0) > atol * scale:
                raise ValueError(f"{name} coefficients are not Hermitian symmetric")
        return cls(modes, phi_hat - 1j * pi_hat)

    def phi_pi(self) -> tuple[np.ndarray, np.ndarray]:
        """Hermitian Fourier coefficients (phi_n, pi_n)."""
        return phi_pi_from_a(self.coeffs, self.modes.neg)

    def __add__(self, other: "FieldState") -> "FieldState":
        _check_same(self, other)
        return FieldState(self.modes, self.coeffs + other.coeffs)

    def __sub__(self, other: "FieldState") -> "FieldState":
        _check_same(self, other)
        return FieldState(self.modes, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "FieldState":
        return FieldState(self.modes, self.coeffs * s)

    __rmul__ = __mul__


def phi_pi_from_a(a: np.ndarray, neg: np.ndarray):
    """Split complex amplitudes (last axis = modes) into Hermitian phi_n, pi_n."""
    ac = np.conj(a[..., neg])
    return 0.5 * (a + ac), 0.5j * (a - ac)


def _check_same(f: FieldState, g: FieldState) -> None:
    if f.modes is not g.modes:
        raise ValueError("fields live on different truncations; embed first")


def random_field(d: int, k: int, rng: np.random.Generator, decay: float = 0.0,
                 scale: float = 1.0) -> FieldState:
    """Gaussian amplitudes with envelope scale * exp(-decay |n|)."""
    ms = mode_set(d, k)
    env = scale * np.exp(-decay * ms.norm)
    c = (rng.standard_normal(ms.size) + 1j * rng.standard_normal(ms.size)) * env / math.sqrt(2)
    return FieldState(ms, c)


@dataclass(frozen=True, eq=False)
class BumpProfile:
    """Fourier coefficients rho_n of the real interaction bump."""

    modes: ModeSet
    coeffs: np.ndarray
    decay_rate: float

    def __post_init__(self):
        c = _readonly(self.coeffs)
        if c.shape != (self.modes.size,):
            raise ValueError("bump coefficient array does not match its mode set")
        if np.any(c == 0):
            raise ValueError("bump must have every Fourier mode present (rho_n != 0)")
        if np.max(np.abs(c - np.conj(c[self.modes.neg]))) > 1e-14 * np.max(np.abs(c)):
            raise ValueError("bump coefficients must be Hermitian symmetric")
        if not self.decay_rate > 0:
            raise ValueError("decay rate must be positive")
        object.__setattr__(self, "coeffs", c)

    def on(self, modes: ModeSet) -> np.ndarray:
        """Coefficients aligned with ``modes`` (which must fit inside the bump's ball)."""
        if modes is self.modes:
            return self.coeffs
        if modes.d != self.modes.d:
            raise ValueError("dimension mismatch between field and bump")
        return self.coeffs[embed_index(modes.d, modes.k, self.modes.k)]


def default_bump(d: int, k: int, rho0: float = 1.0, alpha: float = 1.0) -> BumpProfile:
    """rho_n = rho0 exp(-alpha |n|)."""
    ms = mode_set(d, k)
    return BumpProfile(ms, rho0 * np.exp(-alpha * ms.norm), alpha)


def apply_b(field: FieldState, power: float) -> FieldState:
    return FieldState(field.modes, field.coeffs * field.modes.weights(power / 2.0))


def scale_norm(field: FieldState, h: ScaleIndex) -> float:
    w = field.modes.weights(h + 0.5)
    return float(np.sqrt(np.sum(w * np.abs(field.coeffs) ** 2)))


def inner_h_half(f: FieldState, g: FieldState) -> float:
    """Normalized <f, B g> summed over both components of the pair."""
    f, g = _common(f, g)
    return float(np.sum(f.modes.omega * np.real(f.coeffs * np.conj(g.coeffs))))


def _common(f: FieldState, g: FieldState):
    if f.modes is g.modes:
        return f, g
    k = max(f.truncation_k, g.truncation_k)
    return embed(f, k), embed(g, k)


def embed(field: FieldState, k: int) -> FieldState:
    """Zero-pad onto the larger ball |n| <= k."""
    if k == field.truncation_k:
        return field
    ms = mode_set(field.d, k)
    c = np.zeros(ms.size, complex)
    c[embed_index(field.d, field.truncation_k, k)] = field.coeffs
    return FieldState(ms, c)


def restrict(field: FieldState, k: int) -> FieldState:
    """Drop modes outside |n| <= k and shrink the storage to that ball."""
    if k > field.truncation_k:
        raise ValueError("restriction level exceeds the field truncation")
    return FieldState(mode_set(field.d, k), field.coeffs[embed_index(field.d, k, field.truncation_k)])


def free_flow(field: FieldState, t: float) -> FieldState:
    return FieldState(field.modes, field.coeffs * np.exp(1j * field.modes.omega * t))


def galerkin_project(field: FieldState, k: int) -> FieldState:
    """Zero every mode with |n|_2 > k; the storage ball is kept."""
    if k < 0:
        raise ValueError("projection level must be non-negative")
    if k > field.truncation_k:
        raise ValueError("projection level exceeds the field truncation")
    keep = field.modes.n2 <= k * k
    return FieldState(field.modes, np.where(keep, field.coeffs, 0.0))


def _synth(field: FieldState, x) -> complex:
    x = np.asarray(x, float)
    if x.shape != (field.d,):
        raise ValueError(f"point must have {field.d} coordinates")
    return complex(np.sum(field.coeffs * np.exp(1j * (field.modes.n @ x))))


def evaluate_point(field: FieldState, x, component: str = "phi") -> float:
    """phi(x) (default) or pi(x) synthesized from the amplitudes."""
    z = _synth(field, x)
    if component == "phi":
        return z.real
    if component == "pi":
        return -z.imag
    raise ValueError("component must be 'phi' or 'pi'")


def to_grid(field: FieldState, points: int, component: str = "phi") -> np.ndarray:
    """Values on the uniform grid x_j = 2 pi j / points along each axis."""
    if points < 2 * field.truncation_k + 1:
        raise ValueError("grid too coarse for the truncation (aliasing)")
    g = np.zeros((points,) * field.d, complex)
    idx = tuple((field.modes.n % points).T)
    g[idx] = field.coeffs
    z = np.fft.ifftn(g) * points ** field.d
    if component == "phi":
        return z.real
    if component == "pi":
        return -z.imag
    if component == "complex":
        return z
    raise ValueError("component must be 'phi', 'pi' or 'complex'")


def grid_coefficients(values: np.ndarray, modes: ModeSet) -> np.ndarray:
    """Normalized Fourier coefficients of grid samples, read off at ``modes``."""
    points = values.shape[0]
    c = np.fft.fftn(values) / points ** values.ndim
    return c[tuple((modes.n % points).T)]


def conv_complex(a: np.ndarray, rho: np.ndarray, n: np.ndarray, q, d: int):
    """(phi*rho)(q) - i (pi*rho)(q) and its gradient, for aligned arrays."""
    e = np.exp(1j * (n @ np.asarray(q, float)))
    w = (2.0 * math.pi) ** d * a * rho * e
    return w.sum(), 1j * (w @ n)


def convolve_eval(field: FieldState, bump: BumpProfile, q, component: str = "phi") -> float:
    """(phi*rho)(q) = int phi(x) rho(q - x) dx (or the pi analogue)."""
    z, _ = conv_complex(field.coeffs, bump.on(field.modes), field.modes.n, q, field.d)
    if component == "phi":
        return float(z.real)
    if component == "pi":
        return float(-z.imag)
    raise ValueError("component must be 'phi' or 'pi'")


def convolve_grad(field: FieldState, bump: BumpProfile, q, component: str = "phi") -> np.ndarray:
    _, g = conv_complex(field.coeffs, bump.on(field.modes), field.modes.n, q, field.d)
    if component == "phi":
        return g.real.copy()
    if component == "pi":
        return -g.imag
    raise ValueError("component must be 'phi' or 'pi'")


@lru_cache(maxsize=None)
def lattice_zeta(d: int, s: float, radius: int | None = None) -> float:
    """sum over n in Z^d of (n^2 + 1)^-s, with an integral tail beyond ``radius``."""
    if s <= d / 2:
        raise ValueError("lattice sum diverges for s <= d/2")
    if d == 1 and s == 1.0:
        return math.pi / math.tanh(math.pi)
    if radius is None:
        radius = {1: 20000, 2: 400, 3: 60}.get(d, 20)
    ms = mode_set(d, radius)
    head = float(np.sum((ms.n2 + 1.0) ** (-s)))
    area = 2.0 * math.pi ** (d / 2) / special.gamma(d / 2)
    tail, _ = integrate.quad(lambda r: area * r ** (d - 1) * (r * r + 1.0) ** (-s),
                             radius + 0.5, np.inf)
    return head + tail


def majorant_constant(d: int) -> float:
    """(2 pi)^d sqrt(S_d(s)) with s = d/2 + 1/2; turns the weighted sum into a C^3 bound."""
    s = d / 2 + 0.5
    return (2.0 * math.pi) ** d * math.sqrt(lattice_zeta(d, s))


def majorant_weights(modes: ModeSet) -> np.ndarray:
    s = modes.d / 2 + 0.5
    return modes.weights(3.0 + s)


def c3_majorant(field: FieldState, bump: BumpProfile) -> float:
    """Smooth upper bound N3(u) for the C^3 norms of phi*rho and pi*rho."""
    rho = bump.on(field.modes)
    w = majorant_weights(field.modes)
    return majorant_constant(field.d) * float(np.sqrt(np.sum(w * np.abs(field.coeffs * rho) ** 2)))


def field_to_dict(field: FieldState) -> dict:
    return {
        "d": field.d,
        "k": field.truncation_k,
        "convention_tag": CONVENTION_TAG,
        "modes": [
            {"n": [int(v) for v in n], "re": float(c.real), "im": float(c.imag)}
            for n, c in zip(field.modes.n, field.coeffs)
        ],
    }


def field_from_dict(data: dict) -> FieldState:
    if data.get("convention_tag") != CONVENTION_TAG:
        raise ValueError("field snapshot uses an unknown convention tag")
    ms = mode_set(int(data["d"]), int(data["k"]))
    c = np.zeros(ms.size, complex)
    for entry in data["modes"]:
        n = entry["n"]
        if sum(v * v for v in n) > ms.k ** 2:
            raise ValueError(f"mode {n} lies outside the truncation ball")
        c[ms.index(n)] = complex(entry["re"], entry["im"])
    return FieldState(ms, c)
