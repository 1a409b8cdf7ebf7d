"""Observables extracted from trajectories: widths, Bloch motion, phase sweeps."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import MultiModal, NoConvergence, NoOscillation, StarGraphError

SATURATION_WINDOW = 0.1
SATURATION_TOL = 0.02
# white noise peaks at ~3-4x the median spectral magnitude
PEAK_RATIO_MIN = 8.0


# -- Bessel J0 ---------------------------------------------------------------------


def bessel_j0(x):
    """J0(x) by Miller's backward recurrence, normalized with J0 + 2 sum J_2k = 1.

    Accurate to ~1e-15 absolute for |x| up to a few hundred.
    """
    x = abs(float(x))
    if x == 0.0:
        return 1.0
    if x < 1e-4:
        return 1.0 - 0.25 * x * x + x**4 / 64.0
    start = int(x + 40 + 10 * np.sqrt(x))
    start += start % 2
    j_next, j_cur = 0.0, 1e-300
    norm = 0.0
    j0 = 0.0
    for n in range(start, 0, -1):
        j_prev = (2.0 * n / x) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if abs(j_cur) > 1e250:
            j_next *= 1e-250
            j_cur *= 1e-250
            norm *= 1e-250
        if (n - 1) % 2 == 0 and n - 1 > 0:
            norm += 2.0 * j_cur
        if n - 1 == 0:
            j0 = j_cur
    return j0 / (norm + j0)


def predicted_width(t, f, omega, phi, sigma0):
    """Width of a driven lowest-band packet,

    sigma0 * sqrt(1 + t^2 [J0(f/omega) cos((f/omega) cos phi) / sigma0^2]^2).
    """
    if not omega > 0:
        raise StarGraphError(f"omega must be positive, got {omega}")
    ratio = f / omega
    rate = bessel_j0(ratio) * np.cos(ratio * np.cos(phi)) / sigma0**2
    t = np.asarray(t, dtype=float)
    return sigma0 * np.sqrt(1.0 + (t * rate) ** 2)


# -- lattice envelope --------------------------------------------------------------


def cell_average(x, density, d):
    """Running mean of ``density`` over one lattice period ``d``.

    Removes the on-site structure of a packet in a periodic potential and
    leaves its envelope.  The kernel is the trapezoid rule over an even
    number of grid intervals closest to ``d``.  Near the ends the window is
    truncated and the mean renormalized to the samples it covers.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(density, dtype=float)
    intervals = 2 * int(round(0.5 * d / (x[1] - x[0])))
    if intervals < 2:
        return y.copy()
    kernel = np.ones(intervals + 1)
    kernel[[0, -1]] = 0.5
    return np.convolve(y, kernel, mode="same") / np.convolve(np.ones_like(y), kernel, mode="same")


# -- Gaussian fit --------------------------------------------------------------------


@dataclass
class WidthFit:
    t: float
    center: float
    sigma_fit: float
    amplitude: float
    residual: float
    sigma_predicted: float = float("nan")
    iterations: int = 0


def _model(p, x):
    A, c, s = p
    return A * np.exp(-((x - c) ** 2) / (2.0 * s * s))


def _jacobian(p, x):
    A, c, s = p
    g = np.exp(-((x - c) ** 2) / (2.0 * s * s))
    return np.column_stack((g, A * g * (x - c) / s**2, A * g * (x - c) ** 2 / s**3))


def _local_maxima(y):
    inner = (y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])
    return np.nonzero(inner)[0] + 1


def fit_gaussian_width(x, density, t=0.0, dominance=5.0, max_iter=100, tol=1e-9):
    """Least-squares fit of ``A exp(-(x-c)^2 / (2 sigma^2))`` to one arm's profile.

    The initial width comes from the half-maximum crossing around the peak;
    the fit window is peak +/- 4 of that width, where the first two moments
    seed Gauss-Newton.  Any local maximum outside the window above
    ``peak / dominance`` raises :class:`MultiModal`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(density, dtype=float)
    i_peak = int(np.argmax(y))
    peak = y[i_peak]
    if not peak > 0:
        raise MultiModal("profile is identically zero")

    half = y >= 0.5 * peak
    lo = i_peak
    while lo > 0 and half[lo - 1]:
        lo -= 1
    hi = i_peak
    while hi < y.size - 1 and half[hi + 1]:
        hi += 1
    sigma_est = max((x[hi] - x[lo]) / 2.3548200450309493, x[1] - x[0])

    window = np.abs(x - x[i_peak]) <= 4.0 * sigma_est
    maxima = _local_maxima(y)
    outside = maxima[~window[maxima]]
    if outside.size and y[outside].max() * dominance > peak:
        raise MultiModal(
            f"secondary maximum {y[outside].max():.3g} at x={x[outside[np.argmax(y[outside])]]:.3g} "
            f"is within a factor {dominance:g} of the peak {peak:.3g}"
        )

    xw, yw = x[window], y[window]
    if xw.size < 4:
        raise MultiModal("fit window holds fewer than four samples")
    mass = np.trapezoid(yw, xw)
    c0 = np.trapezoid(xw * yw, xw) / mass
    s0 = np.sqrt(max(np.trapezoid((xw - c0) ** 2 * yw, xw) / mass, (x[1] - x[0]) ** 2))
    p = np.array([peak, c0, s0])

    cost = np.sum((yw - _model(p, xw)) ** 2)
    for it in range(1, max_iter + 1):
        r = yw - _model(p, xw)
        J = _jacobian(p, xw)
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        damping = 1.0
        while True:
            trial = p + damping * step
            trial[2] = abs(trial[2])
            new_cost = np.sum((yw - _model(trial, xw)) ** 2)
            if new_cost <= cost or damping < 1e-6:
                break
            damping *= 0.5
        change = np.max(np.abs(trial - p) / np.maximum(np.abs(trial), 1e-300))
        p, cost = trial, new_cost
        if change < tol:
            break
    else:
        raise NoConvergence(f"Gauss-Newton width fit did not converge in {max_iter} iterations")

    residual = float(np.sqrt(cost / np.sum(yw**2)))
    return WidthFit(t=t, center=float(p[1]), sigma_fit=float(p[2]), amplitude=float(p[0]),
                    residual=residual, iterations=it)


# -- Bloch oscillations ------------------------------------------------------------


@dataclass
class BlochObservables:
    T_B_measured: float
    amplitude: float
    bandwidth: float
    times: np.ndarray = field(repr=False)
    center_series: np.ndarray = field(repr=False)
    peak_to_background: float = float("nan")


def dominant_period(times, series, pad=16):
    """Period of the strongest spectral line of a uniformly sampled series.

    Uses a Hann window, zero padding and a parabola through the log-magnitudes
    of the peak bin and its neighbours.  Returns ``(period, peak/background)``.
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(series, dtype=float)
    dt = times[1] - times[0]
    if not np.allclose(np.diff(times), dt, rtol=1e-6, atol=1e-9):
        raise StarGraphError("dominant_period needs uniformly sampled times")
    y = (y - y.mean()) * np.hanning(y.size)
    n_fft = pad * y.size
    spectrum = np.abs(np.fft.rfft(y, n_fft))
    freqs = np.fft.rfftfreq(n_fft, dt)
    # skip the DC lobe of the window
    start = 2 * pad
    i = start + int(np.argmax(spectrum[start:]))
    if i + 1 >= spectrum.size:
        raise NoOscillation("spectral peak sits at the Nyquist edge")
    background = float(np.median(spectrum[start:]))
    ratio = spectrum[i] / background if background > 0 else np.inf
    if ratio < PEAK_RATIO_MIN:
        raise NoOscillation(f"spectral peak only {ratio:.2f}x the background")
    a, b, c = np.log(spectrum[i - 1 : i + 2])
    shift = 0.5 * (a - c) / (a - 2 * b + c)
    freq = freqs[i] + shift * (freqs[1] - freqs[0])
    return 1.0 / freq, float(ratio)


def bloch_observables(times, center_series, f, d=1.0):
    """Period, amplitude and inferred bandwidth of an oscillating packet center."""
    times = np.asarray(times, dtype=float)
    center = np.asarray(center_series, dtype=float)
    predicted = 2.0 * np.pi / (d * abs(f))
    if times[-1] - times[0] < 2.0 * predicted * (1 - 1e-9):
        raise StarGraphError(
            f"series spans {times[-1] - times[0]:.3g}, less than two predicted periods ({predicted:.3g})"
        )
    period, ratio = dominant_period(times, center)
    amplitude = float(center.max() - center.min())
    return BlochObservables(period, amplitude, amplitude * abs(f), times, center, ratio)


def center_series(coefficients, couplings, signs=None):
    """Signed line coordinate sum_j sign_j <x>_j, or per-arm centers if ``signs`` is None.

    Per-arm centers are ``<x>_j / P_j``.
    """
    C = np.asarray(coefficients)
    moments = np.stack(
        [np.einsum("...i,ij,...j->...", C.conj(), x, C).real for x in couplings.X], axis=-1
    )
    if signs is not None:
        return moments @ np.asarray(signs, dtype=float)
    weights = np.stack(
        [np.einsum("...i,ij,...j->...", C.conj(), g, C).real for g in couplings.G], axis=-1
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        return moments / weights


# -- partial norms -----------------------------------------------------------------


def saturated(times, partial_norms, window=SATURATION_WINDOW, tol=SATURATION_TOL):
    """Per-arm flags: variation over the trailing ``window`` fraction of the run below ``tol``."""
    times = np.asarray(times, dtype=float)
    P = np.asarray(partial_norms, dtype=float)
    tail = times >= times[-1] - window * (times[-1] - times[0])
    span = P[tail].max(axis=0) - P[tail].min(axis=0)
    return span < tol


@dataclass
class SweepResult:
    phi2: np.ndarray
    partial_norms: np.ndarray
    t_final: float
    errors: dict = field(default_factory=dict)

    target: int = -1

    @property
    def separation(self):
        """Target-arm norm minus the largest other arm's norm (target defaults to the last arm)."""
        P = self.partial_norms
        target = self.target % P.shape[1]
        others = np.delete(P, target, axis=1)
        return P[:, target] - (others.max(axis=1) if others.shape[1] else 0.0)

    @property
    def best_phase(self):
        sep = np.where(np.isfinite(self.separation), self.separation, -np.inf)
        return float(self.phi2[int(np.argmax(sep))])


def default_phase_grid(points=33):
    return 2.0 * np.pi * np.arange(points) / points


def phase_sweep(run_point, grid, t_final, workers=1):
    """Partial norms at ``t_final`` for every second-arm phase in ``grid``.

    ``run_point(phi2, t_final)`` returns the final partial norms of one
    trajectory.  Points run concurrently on ``workers`` threads; results are
    aggregated in grid order and a failing point is recorded (NaN row plus
    message) without stopping the others.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(grid >= 2 * np.pi):
        raise StarGraphError("phase grid must lie in [0, 2 pi)")

    def one(phi):
        try:
            return np.asarray(run_point(float(phi), t_final), dtype=float), None
        except StarGraphError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, grid))
    else:
        outcomes = [one(phi) for phi in grid]

    width = next((len(p) for p, _ in outcomes if p is not None), 3)
    rows, errors = [], {}
    for phi, (P, err) in zip(grid, outcomes):
        if P is None:
            errors[float(phi)] = err
            rows.append(np.full(width, np.nan))
        else:
            rows.append(P)
    return SweepResult(grid, np.array(rows), float(t_final), errors)
