"""Time evolution of Galerkin coefficients under per-arm drives.

The coefficients obey

    i dC/dt = D C + [V0(t) IV + sum_j F_j(t) X_j] C,   D = diag(k_n^2).

Stepping is done in an interaction picture: the static part ``H0`` (``D`` plus
the unmodulated lattice term) is diagonalized once, its phases are applied
exactly, and only the bounded time-dependent remainder is integrated with a
Dormand-Prince 5(4) pair.  The frame is re-anchored at the start of every
step, so each step is a Lawson-type integrating-factor Runge-Kutta step.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import quadrature
from .errors import (
    NormDriftExceeded,
    StarGraphError,
    StepUnderflow,
    SupportViolation,
    TruncationTooSmall,
)

RTOL = 1e-9
NORM_BUDGET = 1e-6
MIN_STEP = 1e-12
PROJECTION_LOSS_LIMIT = 1e-4


# -- drives ----------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantField:
    strength: float


@dataclass(frozen=True)
class SinusoidalField:
    """F(t) = strength * sin(omega t + phase); omega lives on the DriveSpec."""

    strength: float
    phase: float = 0.0


@dataclass(frozen=True)
class DriveSpec:
    """Per-arm field laws plus the optional lattice amplitude modulation.

    ``clock_offset`` and ``clock_sign`` map the integration time ``t`` to the
    drive time ``offset + sign * t``; the default is the identity.  Use
    :meth:`reversed` to obtain the drive seen by a time-reversed run.
    """

    fields: tuple
    omega: float = None
    modulation: object = None
    clock_offset: float = 0.0
    clock_sign: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.fields:
            raise StarGraphError("a drive needs one field law per arm")
        for law in self.fields:
            if not isinstance(law, (ConstantField, SinusoidalField)):
                raise StarGraphError(f"unknown field law {law!r}")
        if any(isinstance(f, SinusoidalField) for f in self.fields):
            if self.omega is None or not self.omega > 0:
                raise StarGraphError("sinusoidal drives need a shared omega > 0")

    @property
    def arm_count(self):
        return len(self.fields)

    def clock(self, t):
        return self.clock_offset + self.clock_sign * t

    def field_values(self, t):
        """F_j at integration time ``t``."""
        tau = self.clock(t)
        out = np.empty(len(self.fields))
        for j, law in enumerate(self.fields):
            if isinstance(law, ConstantField):
                out[j] = law.strength
            else:
                out[j] = law.strength * np.sin(self.omega * tau + law.phase)
        return out

    def potential_factor(self, t):
        """1 - a sin(omega_pot t + phi_pot), or 1 without modulation."""
        if self.modulation is None:
            return 1.0
        m = self.modulation
        return 1.0 - m.a * np.sin(m.omega * self.clock(t) + m.phi)

    def reversed(self, t_end):
        """Drive evaluated at ``t_end - t``."""
        return replace(self, clock_offset=self.clock(t_end), clock_sign=-self.clock_sign)

    def reference_field(self):
        return max(abs(f.strength) for f in self.fields)

    def temporal_terms(self):
        """Split sum_j F_j(t) X_j into scalar functions times fixed arm weights.

        Returns a list of ``(weights, g)`` with ``weights`` an array over arms
        and ``g(t)`` a scalar function, such that
        ``F_j(t) = sum_terms weights[j] * g(t)``.
        """
        n = len(self.fields)
        const = np.zeros(n)
        sin_w = np.zeros(n)
        cos_w = np.zeros(n)
        for j, law in enumerate(self.fields):
            if isinstance(law, ConstantField):
                const[j] = law.strength
            else:
                sin_w[j] = law.strength * np.cos(law.phase)
                cos_w[j] = law.strength * np.sin(law.phase)
        terms = []
        if np.any(const):
            terms.append((const, lambda t: 1.0))
        if np.any(sin_w):
            terms.append((sin_w, lambda t: np.sin(self.omega * self.clock(t))))
        if np.any(cos_w):
            terms.append((cos_w, lambda t: np.cos(self.omega * self.clock(t))))
        return terms


# -- state -----------------------------------------------------------------------


@dataclass
class WaveState:
    t: float
    C: np.ndarray

    @property
    def norm(self):
        return float(np.vdot(self.C, self.C).real)

    def copy(self):
        return WaveState(self.t, self.C.copy())


@dataclass
class InitialPacket:
    """Gaussian packet on one arm; ``arm`` is 0-based."""

    arm: int
    x0: float
    sigma: float
    q: float = 0.0


def gaussian(x, x0, sigma, q=0.0):
    """Normalized Gaussian amplitude with |g|^2 of standard deviation ``sigma``."""
    x = np.asarray(x, dtype=float)
    envelope = (2.0 * np.pi * sigma**2) ** -0.25 * np.exp(-((x - x0) ** 2) / (4.0 * sigma**2))
    return envelope * np.exp(1j * q * x) if q else envelope.astype(complex)


def init_gaussian(basis, arm, x0, sigma, q=0.0, return_loss=False):
    """Project a Gaussian on arm ``arm`` onto the basis and renormalize.

    The projection loss is measured against the packet's mass on the arm,
    ``1 - sum|C_n|^2 / int_0^L |g|^2 dx``, so it isolates basis truncation
    from the (separately guarded) tail beyond the arm ends.
    """
    L = basis.graph.arm_lengths[arm]
    if not sigma > 0:
        raise StarGraphError(f"sigma must be positive, got {sigma}")
    if x0 - 3 * sigma < 0 or x0 + 3 * sigma > L:
        raise SupportViolation(
            f"packet x0={x0} +/- 3 sigma={3 * sigma} leaves arm {arm + 1} of length {L}"
        )

    def evaluate(x, w):
        g = gaussian(x, x0, sigma, q)
        return np.concatenate((basis.arm_values(arm, x) @ (w * g), [np.sum(w * np.abs(g) ** 2)]))

    top = float(np.max(basis.k)) + abs(q)
    out = quadrature.adaptive(evaluate, L, top, rtol=1e-13)
    C, mass = out[:-1], out[-1].real
    loss = 1.0 - float(np.vdot(C, C).real) / mass
    if loss >= PROJECTION_LOSS_LIMIT:
        raise TruncationTooSmall(
            f"projection loses {loss:.2e} of the packet (limit {PROJECTION_LOSS_LIMIT:g}); "
            "increase k_max"
        )
    C = C / np.sqrt(np.vdot(C, C).real)
    state = WaveState(0.0, C)
    return (state, loss) if return_loss else state


# -- integrator ------------------------------------------------------------------

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass
class Trajectory:
    """Sampled coefficients in the mode basis plus norm history."""

    times: list = field(default_factory=list)
    coefficients: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    steps: int = 0
    rejected: int = 0

    def as_arrays(self):
        return np.asarray(self.times), np.asarray(self.coefficients), np.asarray(self.norms)

    @property
    def max_norm_drift(self):
        return float(np.max(np.abs(np.asarray(self.norms) - 1.0))) if self.norms else 0.0


class StaticFrame:
    """Eigen-decomposition of the time-independent Hamiltonian ``D + V0 IV``.

    Shared by every trajectory that uses the same basis, couplings and
    lattice; only the drive-dependent combination of the position matrices
    differs between them.
    """

    def __init__(self, basis, couplings, potential, energy_offset=0.0):
        kinetic = basis.k**2 + energy_offset
        self.V0 = float(potential.V0)
        if self.V0 != 0.0:
            energies, vectors = np.linalg.eigh(np.diag(kinetic) + self.V0 * couplings.IV_unit)
        else:
            energies, vectors = kinetic.copy(), None
        self.energies = energies
        self.vectors = vectors
        self.X = [self.rotate(x) for x in couplings.X]
        self._IV = None
        self._couplings = couplings

    def rotate(self, m):
        return m if self.vectors is None else self.vectors.T @ m @ self.vectors

    @property
    def IV(self):
        if self._IV is None:
            self._IV = self.rotate(self._couplings.IV_unit)
        return self._IV


class Propagator:
    """Integrates the coefficient ODE for one (basis, couplings, potential, drive) set.

    The propagator holds only immutable precomputed matrices; the same
    instance can drive any number of trajectories.
    """

    def __init__(self, basis, couplings, potential, drives, rtol=RTOL,
                 norm_budget=NORM_BUDGET, energy_offset=0.0, frame=None):
        if drives.arm_count != basis.graph.arm_count:
            raise StarGraphError(
                f"drive has {drives.arm_count} field laws, graph has {basis.graph.arm_count} arms"
            )
        self.basis = basis
        self.drives = drives
        self.potential = potential
        self.rtol = rtol
        self.norm_budget = norm_budget

        if frame is None:
            frame = StaticFrame(basis, couplings, potential, energy_offset)
        self.energies = frame.energies
        self.frame = frame.vectors

        matrices, scalars = [], []
        for weights, g in drives.temporal_terms():
            matrices.append(sum(w * x for w, x in zip(weights, frame.X)))
            scalars.append(g)
        if drives.modulation is not None and frame.V0 != 0.0:
            V0 = frame.V0
            matrices.append(frame.IV)
            scalars.append(lambda t: V0 * (drives.potential_factor(t) - 1.0))
        self._scalars = scalars
        n = basis.size
        self._stack = np.ascontiguousarray(np.vstack(matrices)) if matrices else np.zeros((0, n))

    # coordinates --------------------------------------------------------------

    def to_frame(self, C):
        return C if self.frame is None else self.frame.T @ C

    def from_frame(self, c):
        return c if self.frame is None else self.frame @ c

    # right-hand side ------------------------------------------------------------

    def coupling_apply(self, t, v):
        """W(t) v in frame coordinates."""
        if not self._scalars:
            return np.zeros_like(v)
        n = v.size
        parts = self._stack @ np.column_stack((v.real, v.imag))
        coeffs = np.array([g(t) for g in self._scalars])
        combined = np.tensordot(coeffs, parts.reshape(len(coeffs), n, 2), axes=1)
        return combined[:, 0] + 1j * combined[:, 1]

    def hamiltonian(self, t):
        """Full Hamiltonian matrix in the mode basis at time ``t`` (for oracles)."""
        n = self.basis.size
        h = np.diag(self.energies) if self.frame is None else (self.frame * self.energies) @ self.frame.T
        if self._scalars:
            coeffs = np.array([g(t) for g in self._scalars])
            w = np.tensordot(coeffs, self._stack.reshape(len(coeffs), n, n), axes=1)
            h = h + (w if self.frame is None else self.frame @ w @ self.frame.T)
        return h

    # stepping -------------------------------------------------------------------

    def _step(self, t, c, h):
        """One integrating-factor DP5(4) step; returns (c_new, error_estimate)."""
        phases = np.exp(-1j * np.outer(_C * h, self.energies))
        k = []
        for s in range(7):
            y = c.copy()
            for a, ks in zip(_A[s], k):
                if a:
                    y += (h * a) * ks
            if s == 6:
                y_new = y
            ph = phases[s]
            k.append(-1j * np.conj(ph) * self.coupling_apply(t + _C[s] * h, ph * y))
        err = h * sum(e * ks for e, ks in zip(_E, k) if e)
        return y_new, err

    def evolve(self, state, t_end, dt_sample=None, sample_times=None, first_step=None,
               check_norm=True):
        """Advance ``state`` to ``t_end`` and sample the coefficients.

        Samples are taken on ``sample_times`` (if given) or every ``dt_sample``
        from ``state.t``; the initial and final times are always included.
        The norm is monitored at every sample but never rescaled.

        Returns
        -------
        (WaveState, Trajectory)
        """
        t0 = float(state.t)
        if not t_end > t0:
            raise StarGraphError(f"t_end={t_end} must exceed the state time {t0}")
        if sample_times is None:
            if dt_sample is None:
                dt_sample = t_end - t0
            count = int(np.floor((t_end - t0) / dt_sample + 1e-9))
            sample_times = t0 + dt_sample * np.arange(1, count + 1)
        targets = [s for s in np.asarray(sample_times, dtype=float) if t0 < s < t_end - 1e-12]
        targets.append(float(t_end))

        record = Trajectory()
        c = self.to_frame(np.asarray(state.C, dtype=complex))
        record.times.append(t0)
        record.coefficients.append(np.array(state.C, dtype=complex))
        record.norms.append(float(np.vdot(c, c).real))

        t = t0
        h = first_step or self._initial_step()
        for target in targets:
            while t < target:
                span = target - t
                trial = min(h, span)
                if trial < MIN_STEP and span > MIN_STEP:
                    raise StepUnderflow(f"step size {trial:.3e} fell below {MIN_STEP:g} at t={t}")
                y, err = self._step(t, c, trial)
                scale = max(np.linalg.norm(c), np.linalg.norm(y))
                ratio = np.linalg.norm(err) / (self.rtol * scale)
                if ratio <= 1.0:
                    c = np.exp(-1j * self.energies * trial) * y
                    t = target if trial == span else t + trial
                    record.steps += 1
                    grow = 5.0 if ratio == 0 else min(5.0, 0.9 * ratio**-0.2)
                    if trial == h or grow < 1.0:
                        h = trial * grow
                else:
                    record.rejected += 1
                    h = trial * max(0.2, 0.9 * ratio**-0.2)
            record.times.append(t)
            record.coefficients.append(self.from_frame(c))
            record.norms.append(float(np.vdot(c, c).real))

        final = WaveState(t, self.from_frame(c))
        drift = abs(record.norms[-1] - 1.0)
        if check_norm and drift > self.norm_budget:
            raise NormDriftExceeded(
                f"norm drifted by {drift:.3e} (budget {self.norm_budget:g}) by t={t}"
            )
        return final, record

    def _initial_step(self):
        scale = np.sum(np.abs(self._stack), axis=1).max() if self._stack.size else 0.0
        return 0.1 if scale == 0 else min(0.1, 0.01 / scale ** 0.5)


def evolve(state, t_end, drives, couplings, basis, potential, dt_sample=None, rtol=RTOL):
    """Functional front end: build a :class:`Propagator` and run one trajectory."""
    return Propagator(basis, couplings, potential, drives, rtol=rtol).evolve(
        state, t_end, dt_sample=dt_sample
    )


# -- observables -----------------------------------------------------------------


def partial_norms(C, couplings):
    """P_j = C^H G_j C for a coefficient vector or an array of them (last axis modes)."""
    C = np.asarray(C)
    return np.stack(
        [np.einsum("...i,ij,...j->...", C.conj(), g, C).real for g in couplings.G], axis=-1
    )


def arm_grid(basis, j, points_per_arm):
    minimum = 8 * basis.k_max * basis.graph.arm_lengths[j] / (2 * np.pi)
    if points_per_arm < minimum:
        raise StarGraphError(
            f"points_per_arm={points_per_arm} is below the resolution floor {int(np.ceil(minimum))}"
        )
    return np.linspace(0.0, basis.graph.arm_lengths[j], int(points_per_arm))


def default_points_per_arm(basis):
    longest = max(basis.graph.arm_lengths)
    return int(np.ceil(8 * basis.k_max * longest / (2 * np.pi))) + 1


def density_on_grid(C, basis, points_per_arm=None):
    """Per-arm ``(x, |Psi_j(x)|^2)``; ``C`` may carry leading sample axes."""
    if points_per_arm is None:
        points_per_arm = default_points_per_arm(basis)
    out = []
    for j in range(basis.graph.arm_count):
        x = arm_grid(basis, j, points_per_arm)
        psi = np.asarray(C) @ basis.arm_values(j, x)
        out.append((x, np.abs(psi) ** 2))
    return out
