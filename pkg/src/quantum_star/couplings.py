"""Galerkin coupling matrices between star-graph eigenmodes.

With ``y = L_j - x`` every mode on arm ``j`` is ``c_n sin(k_n y)`` where
``c_n = B_n / sin(k_n L_j)``.  Writing ``alpha = k_n - k_m`` and
``beta = k_n + k_m``, product-to-sum gives

    overlap   int psi_m psi_n dx            = c_n c_m [S(alpha) - S(beta)] / 2
    position  int psi_m x psi_n dx          = c_n c_m [R(alpha) - R(beta)] / 2
    lattice   int psi_m cos(w x) psi_n dx   = c_n c_m [P(alpha) - P(beta)] / 2

with

    S(e) = sin(e L) / e
    R(e) = (1 - cos(e L)) / e**2 = 2 sin(e L / 2)**2 / e**2
    P(e) = [cos((w - e) L / 2) h(w + e) + cos((w + e) L / 2) h(w - e)] / 2
    h(u) = 2 sin(u L / 2) / u

All of ``S``, ``R`` and ``h`` are even, entire functions of their argument;
below ``|e| < 1e-8`` they are replaced by their Taylor series.
"""

from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .errors import OracleMismatch, StarGraphError

LIMIT_THRESHOLD = 1e-8
REL_TOL = 1e-8
ABS_TOL = 1e-10
# entries below this magnitude are judged on the absolute tolerance instead
NEAR_ZERO = ABS_TOL / REL_TOL


@dataclass(frozen=True)
class Modulation:
    """Potential amplitude factor ``1 - a sin(omega t + phi)``."""

    a: float
    omega: float
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise StarGraphError(f"modulation depth a must lie in [0, 1], got {self.a}")
        if not self.omega > 0:
            raise StarGraphError(f"modulation frequency must be positive, got {self.omega}")


@dataclass(frozen=True)
class LatticePotentialSpec:
    V0: float
    d: float = 1.0
    modulation: Modulation = None

    def __post_init__(self):
        if not self.d > 0:
            raise StarGraphError(f"lattice period d must be positive, got {self.d}")

    @property
    def omega_d(self):
        return 2.0 * np.pi / self.d

    def amplitude(self, t):
        """Effective potential amplitude V0 * [1 - a sin(omega t + phi)] at time ``t``."""
        if self.modulation is None:
            return self.V0
        m = self.modulation
        return self.V0 * (1.0 - m.a * np.sin(m.omega * t + m.phi))


def _sinc_term(e, L):
    """S(e) = sin(e L)/e with its Taylor limit near zero."""
    e = np.asarray(e, dtype=float)
    small = np.abs(e) < LIMIT_THRESHOLD
    safe = np.where(small, 1.0, e)
    taylor = L - e * e * L**3 / 6.0
    return np.where(small, taylor, np.sin(safe * L) / safe)


def _versine_term(e, L):
    """R(e) = (1 - cos(e L))/e**2, evaluated without cancellation."""
    e = np.asarray(e, dtype=float)
    small = np.abs(e) < LIMIT_THRESHOLD
    safe = np.where(small, 1.0, e)
    taylor = 0.5 * L * L - e * e * L**4 / 24.0
    return np.where(small, taylor, 2.0 * np.sin(0.5 * safe * L) ** 2 / (safe * safe))


def _half_sinc_term(u, L):
    """h(u) = 2 sin(u L/2)/u, the limit L taken when ``u`` vanishes."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < LIMIT_THRESHOLD
    safe = np.where(small, 1.0, u)
    taylor = L - u * u * L**3 / 24.0
    return np.where(small, taylor, 2.0 * np.sin(0.5 * safe * L) / safe)


def _lattice_term(e, omega, L):
    return 0.5 * (
        np.cos(0.5 * (omega - e) * L) * _half_sinc_term(omega + e, L)
        + np.cos(0.5 * (omega + e) * L) * _half_sinc_term(omega - e, L)
    )


def _pair_grids(basis):
    k = basis.k
    return k[:, None] - k[None, :], k[:, None] + k[None, :]


def _symmetrize(a):
    return 0.5 * (a + a.T)


def overlap_arm(basis, j):
    L = basis.graph.arm_lengths[j]
    c = basis.amplitude(j)
    alpha, beta = _pair_grids(basis)
    return _symmetrize(np.outer(c, c) * 0.5 * (_sinc_term(alpha, L) - _sinc_term(beta, L)))


def position_arm(basis, j):
    L = basis.graph.arm_lengths[j]
    c = basis.amplitude(j)
    alpha, beta = _pair_grids(basis)
    return _symmetrize(np.outer(c, c) * 0.5 * (_versine_term(alpha, L) - _versine_term(beta, L)))


def lattice_arm(basis, omega, j):
    L = basis.graph.arm_lengths[j]
    c = basis.amplitude(j)
    alpha, beta = _pair_grids(basis)
    body = _lattice_term(alpha, omega, L) - _lattice_term(beta, omega, L)
    return _symmetrize(np.outer(c, c) * 0.5 * body)


def assemble_IV_unit(basis, potential):
    """Cosine-lattice overlap at unit amplitude, summed over arms."""
    omega = potential.omega_d
    return sum(lattice_arm(basis, omega, j) for j in range(basis.graph.arm_count))


def assemble_position(basis):
    """Per-arm position matrices ``X_j[n, m] = int_0^{L_j} psi_{j,m} x psi_{j,n} dx``."""
    return [position_arm(basis, j) for j in range(basis.graph.arm_count)]


def assemble_overlaps(basis):
    """Per-arm overlap matrices ``G_j``; they sum to the identity."""
    return [overlap_arm(basis, j) for j in range(basis.graph.arm_count)]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CouplingSet:
    IV_unit: np.ndarray = field(repr=False)
    X: tuple = field(repr=False)
    G: tuple = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "IV_unit", _frozen(self.IV_unit))
        object.__setattr__(self, "X", tuple(_frozen(x) for x in self.X))
        object.__setattr__(self, "G", tuple(_frozen(g) for g in self.G))

    @property
    def size(self):
        return self.IV_unit.shape[0]

    def lattice(self, potential, t=0.0):
        """I^(V) at time ``t``."""
        return potential.amplitude(t) * self.IV_unit


def assemble(basis, potential):
    return CouplingSet(
        IV_unit=assemble_IV_unit(basis, potential),
        X=assemble_position(basis),
        G=assemble_overlaps(basis),
    )


# -- quadrature oracle -------------------------------------------------------

WEIGHTS = ("one", "x", "cos")


def _weight_values(weight, x, omega):
    if weight == "one":
        return np.ones_like(x)
    if weight == "x":
        return x
    if weight == "cos":
        return np.cos(omega * x)
    raise ValueError(f"unknown weight {weight!r}; expected one of {WEIGHTS}")


def arm_integrals(basis, weight, j, modes=None, omega=None, rtol=1e-12):
    """Quadrature matrix ``int_0^{L_j} psi_{j,m} w(x) psi_{j,n} dx`` over ``modes``.

    Pointwise evaluation of the eigenfunctions on a composite Gauss-Legendre
    rule, refined by panel doubling until two levels agree to ``rtol``
    (relative to the largest entry).
    """
    if weight == "cos" and omega is None:
        raise ValueError("weight 'cos' needs omega")
    idx = np.arange(basis.size) if modes is None else np.asarray(modes)
    L = basis.graph.arm_lengths[j]
    top = max(float(np.max(basis.k[idx])), omega or 0.0)

    def evaluate(x, w):
        values = basis.arm_values(j, x, idx)
        return (values * (w * _weight_values(weight, x, omega))) @ values.T

    return quadrature.adaptive(evaluate, L, top, rtol=rtol)


def quadrature_oracle(basis, weight, j, n, m, omega=None):
    """Single matrix element by quadrature; ``weight`` is 'one', 'x' or 'cos'."""
    block = arm_integrals(basis, weight, j, modes=[n, m], omega=omega)
    return float(block[0, 1])


def relative_error(analytic, oracle):
    """|a - q| / max(|q|, NEAR_ZERO); below 1e-8 means within rel 1e-8 or abs 1e-10."""
    return np.abs(analytic - oracle) / np.maximum(np.abs(oracle), NEAR_ZERO)


@dataclass
class VerificationReport:
    """Outcome of comparing every assembled entry to quadrature."""

    max_rel_err: dict
    rows: list
    mismatches: list
    identity_defect: float
    digest: str = ""

    @property
    def passed(self):
        return not self.mismatches and self.identity_defect < REL_TOL

    def summary(self):
        return {
            "max_rel_err": {k: float(v) for k, v in self.max_rel_err.items()},
            "mismatches": len(self.mismatches),
            "identity_defect": float(self.identity_defect),
            "digest": self.digest,
        }


def _analytic_arm(basis, potential, couplings, matrix, j):
    if matrix == "G":
        return couplings.G[j]
    if matrix == "X":
        return couplings.X[j]
    return lattice_arm(basis, potential.omega_d, j)


_ORACLE_WEIGHT = {"IV": "cos", "X": "x", "G": "one"}


def verify(basis, potential, couplings, strict=False, rows_per_block=100, worst_rows=50,
           executor=None):
    """Compare IV (per arm), X_j and G_j with the quadrature oracle.

    Returns a :class:`VerificationReport`.  Rows kept for output are the upper
    triangle of the leading ``rows_per_block`` modes plus the ``worst_rows``
    largest relative errors of each block.  With ``strict`` any mismatch
    raises :class:`OracleMismatch`; otherwise mismatches are recorded and the
    caller may continue on oracle values via :func:`corrected`.
    """
    import hashlib

    jobs = [(matrix, j) for matrix in ("IV", "X", "G") for j in range(basis.graph.arm_count)]

    def oracle(job):
        matrix, j = job
        return arm_integrals(basis, _ORACLE_WEIGHT[matrix], j, omega=potential.omega_d)

    mapper = executor.map if executor is not None else map
    oracles = list(mapper(oracle, jobs))

    digest = hashlib.sha256()
    rows, mismatches, worst = [], [], {}
    lead = min(rows_per_block, basis.size)
    iu = np.triu_indices(lead)
    for (matrix, j), q in zip(jobs, oracles):
        a = _analytic_arm(basis, potential, couplings, matrix, j)
        err = relative_error(a, q)
        worst[f"{matrix}_{j + 1}"] = float(np.max(err))
        digest.update(np.ascontiguousarray(np.round(a, 12)).tobytes())
        picked = set(zip(iu[0].tolist(), iu[1].tolist()))
        flat = np.argsort(err, axis=None)[::-1][:worst_rows]
        picked.update(zip(*(v.tolist() for v in np.unravel_index(flat, err.shape))))
        for n, m in sorted(picked):
            rows.append((matrix, j + 1, n + 1, m + 1, float(a[n, m]), float(q[n, m]), float(err[n, m])))
        for n, m in zip(*np.nonzero(err >= 1.0 * REL_TOL)):
            mismatches.append((matrix, j + 1, int(n) + 1, int(m) + 1, float(a[n, m]), float(q[n, m])))

    identity_defect = float(np.max(np.abs(sum(couplings.G) - np.eye(basis.size))))
    report = VerificationReport(worst, rows, mismatches, identity_defect, digest.hexdigest()[:16])
    report.oracle = dict(zip(jobs, oracles))
    if strict and mismatches:
        first = mismatches[0]
        raise OracleMismatch(
            f"{len(mismatches)} entries disagree with quadrature; first {first[0]} arm {first[1]} "
            f"(n={first[2]}, m={first[3]}): analytic={first[4]:.15g} quadrature={first[5]:.15g}",
            mismatches,
        )
    return report


def corrected(couplings, report):
    """CouplingSet with any mismatching blocks replaced by their oracle values."""
    if not report.mismatches:
        return couplings
    bad = {(m[0], m[1] - 1) for m in report.mismatches}
    X = [report.oracle[("X", j)] if ("X", j) in bad else x for j, x in enumerate(couplings.X)]
    G = [report.oracle[("G", j)] if ("G", j) in bad else g for j, g in enumerate(couplings.G)]
    IV = couplings.IV_unit
    if any(m == "IV" for m, _ in bad):
        IV = sum(report.oracle[("IV", j)] for j in range(len(couplings.X)))
    return CouplingSet(IV_unit=_symmetrize(IV), X=[_symmetrize(x) for x in X],
                       G=[_symmetrize(g) for g in G])


# -- alternative closed forms --------------------------------------------------


def alternate_forms_report(basis, report):
    """How far the commonly quoted closed forms deviate from quadrature.

    The quoted forms are ``B^-2 = sum_j [L_j + sin(2kL_j)] / (2 sin^2(kL_j))``
    and ``A_nn = L^2/2 - (1 - cos 2kL)/(4k^2)``,
    ``A_nm = (1 - cos 2(k_n-k_m)L)/(k_n-k_m)^2 - (1 - cos 2(k_n+k_m)L)/(k_n+k_m)^2``
    scaled by ``c_n c_m``.  Returned values are max relative deviations from
    quadrature, plus the median diagonal ratio quoted/quadrature per arm.
    """
    k = basis.k
    out = {}
    quoted = sum((L + np.sin(2 * k * L)) / np.sin(k * L) ** 2 for L in basis.graph.arm_lengths)
    B_quoted = 1.0 / np.sqrt(0.5 * quoted)
    out["B"] = float(np.max(np.abs(B_quoted / basis.B - 1.0)))

    alpha, beta = _pair_grids(basis)
    for j, L in enumerate(basis.graph.arm_lengths):
        c = basis.amplitude(j)
        with np.errstate(divide="ignore", invalid="ignore"):
            A = (1 - np.cos(2 * alpha * L)) / alpha**2 - (1 - np.cos(2 * beta * L)) / beta**2
        A[np.diag_indices_from(A)] = L * L / 2 - (1 - np.cos(2 * k * L)) / (4 * k * k)
        q = report.oracle[("X", j)]
        out[f"X_{j + 1}"] = float(np.max(relative_error(np.outer(c, c) * A, q)))
        diag = np.outer(c, c).diagonal() * A.diagonal()
        out[f"X_{j + 1}_diagonal_ratio"] = float(np.median(diag / q.diagonal()))
    return out
