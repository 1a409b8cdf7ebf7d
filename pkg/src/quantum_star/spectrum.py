"""Eigenbasis of the potential-free star graph.

Each arm ``j`` carries a coordinate ``x`` in ``[0, L_j]`` with the vertex at
``x = 0``.  Outer ends are Dirichlet, the vertex is Kirchhoff (continuity plus
vanishing derivative sum).  The eigenfunctions are

    psi_{j,n}(x) = B_n sin(k_n (L_j - x)) / sin(k_n L_j)

with ``k_n`` the positive roots of ``sum_j cot(k L_j) = 0``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .errors import PoleCollision, RootResidual, SinGuard, StarGraphError

POLE_GAP = 1e-6
SIN_GUARD = 1e-6
BRACKET_WIDTH = 1e-8
NEWTON_ITERATIONS = 5
RESIDUAL_TOL = 1e-10
# a double-precision root cannot beat |S'(k)| * ulp(k); near-coincident poles of
# different arms make |S'| large, so the accepted residual includes that floor
FLOOR_FACTOR = 8.0

DEFAULT_ARM_LENGTHS = (40.0, 40.0 + np.sqrt(2.0), 40.0 + np.sqrt(3.0))


@dataclass(frozen=True)
class StarGraph:
    """Star graph with arms of length ``arm_lengths`` joined at one vertex."""

    arm_lengths: tuple

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.arm_lengths)
        if len(lengths) < 1:
            raise StarGraphError("a star graph needs at least one arm")
        if not all(np.isfinite(v) and v > 0 for v in lengths):
            raise StarGraphError(f"arm lengths must be positive, got {lengths}")
        object.__setattr__(self, "arm_lengths", lengths)

    @property
    def arm_count(self):
        return len(self.arm_lengths)

    @property
    def total_length(self):
        return float(sum(self.arm_lengths))

    @classmethod
    def default(cls):
        return cls(DEFAULT_ARM_LENGTHS)


def secular(graph, k):
    """S(k) = sum_j cot(k L_j), vectorized over ``k``."""
    k = np.asarray(k, dtype=float)
    return sum(1.0 / np.tan(k * L) for L in graph.arm_lengths)


def secular_derivative(graph, k):
    k = np.asarray(k, dtype=float)
    return -sum(L / np.sin(k * L) ** 2 for L in graph.arm_lengths)


def residual_tolerance(graph, k):
    """Accepted |S(k)|: 1e-10 plus the rounding floor of a double-precision root."""
    k = np.asarray(k, dtype=float)
    return RESIDUAL_TOL + FLOOR_FACTOR * np.spacing(k) * np.abs(secular_derivative(graph, k))


def poles(graph, k_max):
    """Merged poles of S on (0, k_max] plus the first pole beyond ``k_max``.

    Returns
    -------
    values : ndarray
        Sorted pole positions ``m * pi / L_j``.
    arms : ndarray
        Arm index owning each pole.
    """
    values, arms = [], []
    for j, L in enumerate(graph.arm_lengths):
        m = np.arange(1, int(np.floor(k_max * L / np.pi)) + 2)
        values.append(m * np.pi / L)
        arms.append(np.full(m.size, j))
    values = np.concatenate(values)
    arms = np.concatenate(arms)
    order = np.argsort(values, kind="stable")
    values, arms = values[order], arms[order]
    # only keep the first pole above k_max; the rest are irrelevant
    beyond = np.nonzero(values > k_max)[0]
    stop = beyond[0] + 1 if beyond.size else values.size
    return values[:stop], arms[:stop]


def check_pole_collisions(pole_values, pole_arms, k_max, gap=POLE_GAP):
    inside = pole_values <= k_max
    v, a = pole_values[inside], pole_arms[inside]
    close = (np.diff(v) < gap) & (a[1:] != a[:-1])
    if np.any(close):
        i = int(np.argmax(close))
        raise PoleCollision(
            f"poles of arms {a[i] + 1} and {a[i + 1] + 1} at k={v[i]:.12g} are closer "
            f"than {gap:g}; the arm lengths are too commensurate, perturb them slightly"
        )


def solve_secular(graph, k_max):
    """All roots of ``sum_j cot(k L_j)`` in (0, k_max], sorted.

    Each cotangent decreases monotonically between its poles, so S has exactly
    one root between consecutive merged poles.  Brackets are bisected jointly
    down to width 1e-8 and then polished with at most five Newton steps.
    """
    if not k_max > 0:
        raise StarGraphError(f"k_max must be positive, got {k_max}")
    pole_values, pole_arms = poles(graph, k_max)
    check_pole_collisions(pole_values, pole_arms, k_max)

    lo = np.concatenate(([0.0], pole_values[:-1]))
    hi = pole_values.copy()
    keep = lo < k_max
    lo, hi = lo[keep], hi[keep]

    # interior starting points keep S finite; S(a) > 0 > S(b)
    a = lo + 0.25 * (hi - lo)
    b = hi - 0.25 * (hi - lo)
    for _ in range(200):
        fa = secular(graph, a)
        fb = secular(graph, b)
        grow_a, grow_b = fa <= 0, fb >= 0
        if not (grow_a.any() or grow_b.any()):
            break
        a = np.where(grow_a, lo + 0.5 * (a - lo), a)
        b = np.where(grow_b, hi - 0.5 * (hi - b), b)
    while np.max(b - a) > BRACKET_WIDTH:
        mid = 0.5 * (a + b)
        positive = secular(graph, mid) > 0
        a = np.where(positive, mid, a)
        b = np.where(positive, b, mid)

    k = 0.5 * (a + b)
    for _ in range(NEWTON_ITERATIONS):
        s = secular(graph, k)
        active = np.abs(s) >= RESIDUAL_TOL
        if not active.any():
            break
        step = np.where(active, s / secular_derivative(graph, k), 0.0)
        k = np.clip(k - step, a, b)

    k = k[k <= k_max]
    excess = np.abs(secular(graph, k)) / residual_tolerance(graph, k)
    if k.size and np.max(excess) >= 1.0:
        i = int(np.argmax(excess))
        residual = np.abs(secular(graph, k))
        raise RootResidual(f"root k={k[i]:.15g} has secular residual {residual[i]:.3e}")

    weyl = k_max * graph.total_length / np.pi
    if abs(k.size - weyl) > graph.arm_count + 1:
        raise RootResidual(
            f"found {k.size} roots below k_max={k_max}, Weyl estimate is {weyl:.1f}"
        )
    return k


def check_sin_guard(graph, k, guard=SIN_GUARD):
    k = np.atleast_1d(np.asarray(k, dtype=float))
    for j, L in enumerate(graph.arm_lengths):
        s = np.abs(np.sin(k * L))
        if np.any(s <= guard):
            i = int(np.argmin(s))
            raise SinGuard(
                f"|sin(k L_{j + 1})| = {s[i]:.3e} <= {guard:g} at k={k[i]:.15g}; "
                "the eigenfunction vanishes at the vertex"
            )


def normalization(graph, k):
    """Normalization B_n for wavenumber(s) ``k``.

    Uses the closed form of the arm integral

        int_0^L sin^2(k (L - x)) dx = L/2 - sin(2 k L) / (4 k)

    so that ``B^-2 = sum_j [L_j/2 - sin(2 k L_j)/(4 k)] / sin^2(k L_j)``.
    """
    k = np.asarray(k, dtype=float)
    check_sin_guard(graph, k)
    total = 0.0
    for L in graph.arm_lengths:
        total = total + (0.5 * L - np.sin(2.0 * k * L) / (4.0 * k)) / np.sin(k * L) ** 2
    return 1.0 / np.sqrt(total)


def normalization_by_quadrature(graph, k, rtol=1e-13):
    """B for a single wavenumber from Gauss-Legendre quadrature of the unnormalized mode."""
    k = float(k)
    check_sin_guard(graph, k)
    total = 0.0
    for L in graph.arm_lengths:
        def evaluate(x, w, L=L):
            u = np.sin(k * (L - x)) / np.sin(k * L)
            return np.sum(w * u * u)

        total += float(quadrature.adaptive(evaluate, L, k, rtol=rtol))
    return 1.0 / np.sqrt(total)


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated orthonormal eigenbasis; arrays are read-only after construction."""

    graph: StarGraph
    k_max: float
    k: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("k", "B"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def size(self):
        return self.k.size

    def amplitude(self, j):
        """Per-mode prefactor ``B_n / sin(k_n L_j)`` on arm ``j`` (0-based)."""
        return self.B / np.sin(self.k * self.graph.arm_lengths[j])

    def arm_values(self, j, x, modes=None):
        """Matrix ``psi_{j,n}(x_i)`` with shape (modes, len(x))."""
        k = self.k if modes is None else self.k[modes]
        amp = self.amplitude(j) if modes is None else self.amplitude(j)[modes]
        L = self.graph.arm_lengths[j]
        x = np.asarray(x, dtype=float)
        return amp[:, None] * np.sin(np.outer(k, L - x))

    def arm_derivatives(self, j, x, modes=None):
        k = self.k if modes is None else self.k[modes]
        amp = self.amplitude(j) if modes is None else self.amplitude(j)[modes]
        L = self.graph.arm_lengths[j]
        x = np.asarray(x, dtype=float)
        return -(amp * k)[:, None] * np.cos(np.outer(k, L - x))

    def secular_residuals(self):
        return np.abs(secular(self.graph, self.k))


def build_basis(graph, k_max):
    """Solve the secular equation and normalize every retained mode."""
    k = solve_secular(graph, k_max)
    B = normalization(graph, k)
    return SpectralBasis(graph=graph, k_max=float(k_max), k=k, B=B)


def eigenfunction_eval(basis, n, j, x):
    """psi_{j,n}(x) for 0-based mode ``n`` and arm ``j``."""
    L = basis.graph.arm_lengths[j]
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > L):
        raise ValueError(f"x must lie in [0, {L}] on arm {j + 1}")
    kn = basis.k[n]
    return basis.B[n] * np.sin(kn * (L - x)) / np.sin(kn * L)


def gram_matrix(basis, modes=None, points_per_wavelength=8, rtol=1e-12):
    """sum_j int psi_{j,m} psi_{j,n} dx by adaptive panel quadrature."""
    if points_per_wavelength < 8:
        raise ValueError("need at least 8 quadrature points per shortest wavelength")
    idx = np.arange(basis.size) if modes is None else np.asarray(modes)
    top = float(np.max(basis.k[idx])) if idx.size else 1.0
    gram = 0.0
    for j, L in enumerate(basis.graph.arm_lengths):
        def evaluate(x, w, j=j):
            values = basis.arm_values(j, x, idx)
            return (values * w) @ values.T

        gram = gram + quadrature.adaptive(
            evaluate, L, top, rtol=rtol, points_per_wavelength=points_per_wavelength
        )
    return gram


def orthonormality_check(basis, points_per_wavelength=8, modes=None):
    """Max-norm of the quadrature Gram matrix minus the identity."""
    gram = gram_matrix(basis, modes=modes, points_per_wavelength=points_per_wavelength)
    return float(np.max(np.abs(gram - np.eye(gram.shape[0]))))
