"""Scenario orchestration and deterministic output files.

``simulate`` runs the numerical pipeline in memory; ``run`` wraps it for the
CLI and writes CSVs plus a JSON manifest.
"""

import csv
import hashlib
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, analysis, couplings as cpl, propagator as prop
from .errors import MultiModal, NoConvergence, StarGraphError
from .spectrum import StarGraph, build_basis

log = logging.getLogger(__name__)


# -- building blocks -------------------------------------------------------------


def make_potential(config):
    modulation = None
    if config.modulation is not None:
        modulation = cpl.Modulation(**config.modulation)
    return cpl.LatticePotentialSpec(V0=config.V0, d=config.d, modulation=modulation)


def make_drives(config, phi2=None):
    fields = []
    for j, law in enumerate(config.fields):
        phase = phi2 if (phi2 is not None and j == 1) else law.phi
        if law.law == "constant":
            fields.append(prop.ConstantField(law.f))
        else:
            fields.append(prop.SinusoidalField(law.f, phase))
    modulation = cpl.Modulation(**config.modulation) if config.modulation else None
    return prop.DriveSpec(tuple(fields), omega=config.omega, modulation=modulation)


def coupling_digest(couplings):
    h = hashlib.sha256()
    for m in (couplings.IV_unit, *couplings.X, *couplings.G):
        h.update(np.ascontiguousarray(np.round(m, 12)).tobytes())
    return h.hexdigest()[:16]


@dataclass
class Setup:
    config: object
    basis: object
    potential: object
    couplings: object
    verification: object = None
    frame: object = None


def prepare(config, verify=None, strict=False, executor=None):
    """Spectrum, couplings and (optionally) the oracle pass for a config."""
    graph = StarGraph(tuple(config.arm_lengths))
    basis = build_basis(graph, config.numerics.k_max)
    potential = make_potential(config)
    couplings = cpl.assemble(basis, potential)
    verification = None
    if verify if verify is not None else config.numerics.verify:
        verification = cpl.verify(basis, potential, couplings, strict=strict, executor=executor)
        for m in verification.mismatches[:20]:
            log.warning("oracle mismatch %s arm %d (n=%d, m=%d): analytic=%.15g quadrature=%.15g", *m)
        couplings = cpl.corrected(couplings, verification)
    return Setup(config, basis, potential, couplings, verification)


def static_frame(setup):
    if setup.frame is None:
        setup.frame = prop.StaticFrame(setup.basis, setup.couplings, setup.potential)
    return setup.frame


def sample_times(config):
    n = config.numerics
    count = int(np.floor(n.t_end / n.dt_sample + 1e-9))
    return n.dt_sample * np.arange(1, count + 1)


@dataclass
class SimulationResult:
    setup: Setup
    initial_loss: float
    trajectory: object
    times: np.ndarray
    coefficients: np.ndarray
    partial_norms: np.ndarray

    @property
    def final_norm_defect(self):
        return abs(float(np.sum(np.abs(self.coefficients[-1]) ** 2)) - 1.0)


def simulate(config, setup=None, phi2=None, t_end=None, check_norm=True):
    """Run one trajectory for ``config``; ``phi2`` overrides the second arm's phase."""
    setup = setup or prepare(config)
    pk = config.packet
    state, loss = prop.init_gaussian(setup.basis, pk["arm"] - 1, pk["x0"], pk["sigma"], pk["q"],
                                     return_loss=True)
    drives = make_drives(config, phi2)
    engine = prop.Propagator(setup.basis, setup.couplings, setup.potential, drives,
                             rtol=config.numerics.rtol, norm_budget=config.numerics.norm_budget,
                             frame=static_frame(setup))
    t_end = config.numerics.t_end if t_end is None else t_end
    times = sample_times(config)
    _, record = engine.evolve(state, t_end, sample_times=times, check_norm=check_norm)
    T, C, _ = record.as_arrays()
    P = prop.partial_norms(C, setup.couplings)
    return SimulationResult(setup, loss, record, T, C, P)


def sweep(config, setup=None, grid=None, t_final=None, workers=1):
    """Second-arm phase sweep sharing one basis, coupling set and static frame."""
    setup = setup or prepare(config)
    static_frame(setup)
    grid = analysis.default_phase_grid(config.analysis.sweep_points) if grid is None else grid
    t_final = config.numerics.t_end if t_final is None else t_final

    def run_point(phi2, t):
        pk = config.packet
        state = prop.init_gaussian(setup.basis, pk["arm"] - 1, pk["x0"], pk["sigma"], pk["q"])
        engine = prop.Propagator(setup.basis, setup.couplings, setup.potential,
                                 make_drives(config, phi2), rtol=config.numerics.rtol,
                                 norm_budget=config.numerics.norm_budget, frame=setup.frame)
        final, _ = engine.evolve(state, t)
        return prop.partial_norms(final.C, setup.couplings)

    return analysis.phase_sweep(run_point, grid, t_final, workers=workers)


# -- analysis tables ---------------------------------------------------------------


def width_rows(result, stride=1):
    """Gaussian width fits on the most populated arm at every ``stride``-th sample.

    The fit uses the density averaged over one lattice cell, i.e. the packet
    envelope rather than its on-site structure.
    """
    config = result.setup.config
    basis = result.setup.basis
    pk = config.packet
    law = config.fields[pk["arm"] - 1]
    rows = []
    densities = prop.density_on_grid(result.coefficients[::stride], basis, config.numerics.points_per_arm)
    for i, t in enumerate(result.times[::stride]):
        arm = int(np.argmax(result.partial_norms[i * stride]))
        x, rho = densities[arm][0], densities[arm][1][i]
        if config.V0 != 0.0:
            rho = analysis.cell_average(x, rho, config.d)
        try:
            fit = analysis.fit_gaussian_width(x, rho, t=float(t))
        except (MultiModal, NoConvergence):
            continue
        if law.law == "sinusoidal":
            fit.sigma_predicted = float(
                analysis.predicted_width(t, abs(law.f), config.omega, law.phi, pk["sigma"])
            )
        rows.append(fit)
    return rows


def bloch_table(result):
    config = result.setup.config
    signs = config.analysis.line_signs
    center = analysis.center_series(result.coefficients, result.setup.couplings, signs)
    return analysis.bloch_observables(result.times, center, config.reference_field, config.d)


# -- output ------------------------------------------------------------------------


def _fmt(v):
    return format(float(v), ".12e")


def write_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int)) and not isinstance(v, bool) else _fmt(v)
                        for v in row])
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, config, files, started, extra=None):
    """Write ``manifest.json`` atomically (temp file + rename)."""
    out_dir = Path(out_dir)
    manifest = {
        "tool": "quantum_star",
        "version": __version__,
        "config": config.to_dict(),
        "wall_clock_seconds": round(time.time() - started, 3),
        "files": {Path(p).name: sha256_file(p) for p in files},
    }
    manifest.update(extra or {})
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, out_dir / "manifest.json")
    return out_dir / "manifest.json"


def write_spectrum(out_dir, basis):
    rows = [(n + 1, k, B, r) for n, (k, B, r) in
            enumerate(zip(basis.k, basis.B, basis.secular_residuals()))]
    return write_csv(Path(out_dir) / "spectrum.csv", ["n", "k", "B", "secular_residual"], rows)


def write_verification(out_dir, report):
    return write_csv(Path(out_dir) / "coupling_verification.csv",
                     ["matrix", "arm", "n", "m", "analytic", "quadrature", "rel_err"], report.rows)


def write_norms(out_dir, result):
    N = result.partial_norms.shape[1]
    header = ["t"] + [f"P_{j + 1}" for j in range(N)] + ["total"]
    rows = [(t, *P, P.sum()) for t, P in zip(result.times, result.partial_norms)]
    return write_csv(Path(out_dir) / "norms.csv", header, rows)


def write_densities(out_dir, result):
    config = result.setup.config
    stride = config.numerics.density_stride
    idx = np.arange(0, result.times.size, stride)
    if idx[-1] != result.times.size - 1:
        idx = np.append(idx, result.times.size - 1)
    grids = prop.density_on_grid(result.coefficients[idx], result.setup.basis,
                                 config.numerics.points_per_arm)
    paths = []
    for j, (x, rho) in enumerate(grids):
        rows = ((result.times[i], xv, rv) for i, row in zip(idx, rho) for xv, rv in zip(x, row))
        paths.append(write_csv(Path(out_dir) / f"density_arm{j + 1}.csv", ["t", "x", "density"], rows))
    return paths


def write_width(out_dir, fits):
    rows = [(w.t, w.center, w.sigma_fit, w.sigma_predicted, w.residual) for w in fits]
    return write_csv(Path(out_dir) / "width.csv",
                     ["t", "center", "sigma_fit", "sigma_predicted", "residual"], rows)


def write_bloch(out_dir, obs):
    return write_csv(Path(out_dir) / "bloch.csv", ["T_B_measured", "Lambda", "Delta"],
                     [(obs.T_B_measured, obs.amplitude, obs.bandwidth)])


def write_sweep(out_dir, result):
    N = result.partial_norms.shape[1]
    header = ["phi2"] + [f"P_{j + 1}" for j in range(N)]
    return write_csv(Path(out_dir) / "sweep.csv", header,
                     [(phi, *P) for phi, P in zip(result.phi2, result.partial_norms)])


# -- commands --------------------------------------------------------------------


def run(config, command="evolve", out_dir=None, threads=1, strict_oracle=False):
    """Execute one CLI command and write its outputs; returns the manifest path."""
    started = time.time()
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        verify = True if command == "verify" else None
        verify = verify if not strict_oracle else True
        setup = prepare(config, verify=verify, strict=strict_oracle, executor=executor)
    finally:
        if executor is not None:
            executor.shutdown()

    files = [write_spectrum(out_dir, setup.basis)]
    extra = {"basis_size": int(setup.basis.size), "coupling_digest": coupling_digest(setup.couplings)}
    if setup.verification is not None:
        files.append(write_verification(out_dir, setup.verification))
        extra["verification"] = setup.verification.summary()
        extra["alternate_forms"] = cpl.alternate_forms_report(setup.basis, setup.verification)

    if command == "evolve":
        result = simulate(config, setup)
        files.append(write_norms(out_dir, result))
        files.extend(write_densities(out_dir, result))
        extra["projection_loss"] = result.initial_loss
        extra["final_norm_defect"] = result.final_norm_defect
        extra["max_norm_drift"] = result.trajectory.max_norm_drift
        extra["steps"] = {"accepted": result.trajectory.steps, "rejected": result.trajectory.rejected}
        extra["saturated"] = [bool(s) for s in analysis.saturated(result.times, result.partial_norms)]
        if config.analysis.width:
            files.append(write_width(out_dir, width_rows(result)))
        if config.analysis.bloch:
            obs = bloch_table(result)
            files.append(write_bloch(out_dir, obs))
            extra["bloch_peak_to_background"] = obs.peak_to_background
    elif command == "sweep":
        result = sweep(config, setup, workers=threads)
        files.append(write_sweep(out_dir, result))
        extra["sweep"] = {"best_phase": result.best_phase, "t_final": result.t_final,
                          "errors": {str(k): v for k, v in result.errors.items()}}
    elif command not in ("spectrum", "verify"):
        raise StarGraphError(f"unknown command {command!r}")

    return write_manifest(out_dir, config, files, started, extra)
