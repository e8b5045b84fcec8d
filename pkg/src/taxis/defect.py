"""Defect-measure estimation over a family of regularised runs and blow-up diagnostics.

For a sequence of runs with increasing regularisation index ``k`` the mass held
above a threshold ``theta`` (the excess mass) is extrapolated linearly in
``1/k`` to ``1/k -> 0``.  The same extrapolation of the complementary mass
``int min(u_k, theta)`` gives the mass of the regular part, so the two limits
add up to the conserved total.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .mesh import Grid, ScalarField, integrate
from .solver import Trajectory

ATOM_SHARE = 0.9


@dataclass
class DefectEstimate:
    """Estimated defect measure at each sample time.

    ``density[i]`` holds the diffuse part as a cell density, ``atoms[i]`` lists
    ``(cell index, mass)`` pairs; together they carry ``mu_total[i]``.
    ``regular_mass`` is the extrapolated mass of ``min(u_k, threshold)``.
    """

    times: np.ndarray
    density: list[ScalarField]
    atoms: list[list[tuple[tuple[int, ...], float]]]
    mu_total: np.ndarray
    uncertainty: np.ndarray
    threshold: float
    ks: tuple[int, ...] = ()
    regular_mass: Optional[np.ndarray] = None
    regular_uncertainty: Optional[np.ndarray] = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t", "mu_total", "uncertainty", "n_atoms"))
        for t, m, e, a in zip(self.times, self.mu_total, self.uncertainty, self.atoms):
            w.writerow((repr(float(t)), repr(float(m)), repr(float(e)), len(a)))
        return buf.getvalue()

    def atoms_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t", "cell", "mass"))
        for t, atoms in zip(self.times, self.atoms):
            for idx, m in atoms:
                w.writerow((repr(float(t)), ":".join(str(i) for i in idx), repr(float(m))))
        return buf.getvalue()

    def write(self, directory: Union[str, Path]) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / "defect.csv", d / "defect_atoms.csv"]
        paths[0].write_text(self.to_csv())
        paths[1].write_text(self.atoms_csv())
        return paths


@dataclass
class BlowupReport:
    suspected: bool
    t_onset: Optional[float]
    growth_t: np.ndarray
    growth_max_u: np.ndarray
    concentration_cells: list[tuple[int, ...]] = field(default_factory=list)
    reason: str = ""

    @property
    def growth_factor(self) -> float:
        if self.growth_max_u.size == 0:
            return math.nan
        return float(self.growth_max_u.max() / self.growth_max_u[0])

    def summary(self) -> str:
        lines = [f"blow-up suspected: {'yes' if self.suspected else 'no'}"]
        if self.suspected:
            lines.append(f"onset estimate: t = {self.t_onset:.6g} ({self.reason})")
        lines.append(f"max_u growth factor: {self.growth_factor:.6g}")
        if self.concentration_cells:
            lines.append("concentration cells: " + " ".join(":".join(map(str, c)) for c in self.concentration_cells))
        return "\n".join(lines)


def excess_mass(u: Union[ScalarField, np.ndarray], threshold: float, grid: Optional[Grid] = None) -> float:
    """``int (u - threshold)_+``."""
    if isinstance(u, ScalarField):
        grid, values = u.grid, u.values
    else:
        values = np.asarray(u, dtype=float)
    if np.any(values < 0):
        raise ValueError("excess mass needs u >= 0")
    return integrate(np.maximum(values - threshold, 0.0), grid)


def _richardson(ks: Sequence[int], values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear extrapolants in ``1/k`` from consecutive pairs.

    ``values`` has shape ``(len(ks), ...)``; returns the last and the
    second-to-last extrapolant.
    """
    k = np.asarray(ks, dtype=float).reshape((-1,) + (1,) * (values.ndim - 1))
    ext = (k[1:] * values[1:] - k[:-1] * values[:-1]) / (k[1:] - k[:-1])
    return ext[-1], ext[-2]


def _amplification(ks: Sequence[int]) -> float:
    """Sum of the absolute weights of the last extrapolant."""
    k1, k0 = float(ks[-1]), float(ks[-2])
    return (k1 + k0) / (k1 - k0)


def _neighbourhood_sum(a: np.ndarray) -> np.ndarray:
    """Sum over each cell and its immediate neighbours (zero outside the box)."""
    out = a.copy()
    for axis in range(a.ndim):
        shifted = np.zeros_like(out)
        n = a.shape[axis]
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[axis], hi[axis] = slice(0, n - 1), slice(1, n)
        acc = out.copy()
        shifted[tuple(hi)] = out[tuple(lo)]
        acc += shifted
        shifted = np.zeros_like(out)
        shifted[tuple(lo)] = out[tuple(hi)]
        acc += shifted
        out = acc
    return out


def _split_atoms(excess_cells: np.ndarray, grid: Grid, scale: float):
    """Split per-cell excess masses into atoms and a diffuse density.

    A cell is an atom when it holds at least 90% of the excess in its
    neighbourhood.  All masses are multiplied by ``scale``.
    """
    local = _neighbourhood_sum(excess_cells)
    is_atom = (excess_cells > 0) & (excess_cells >= ATOM_SHARE * local)
    atoms = [(tuple(int(i) for i in idx), float(excess_cells[tuple(idx)] * scale))
             for idx in np.argwhere(is_atom)]
    diffuse = np.where(is_atom, 0.0, excess_cells) * scale / grid.cell_volume
    return ScalarField(grid, diffuse), atoms


def estimate_defect(k_runs: Sequence[Trajectory], threshold: Optional[float] = None) -> DefectEstimate:
    """Defect measure of a k-sequence of runs at their common snapshot times.

    ``mu_total`` is the linear 1/k extrapolation of the excess mass above
    ``threshold`` (default: the smallest k), clipped to ``[0, mass_u(0)]``; the
    uncertainty is the gap between the last two extrapolants plus rounding of
    the inputs.  Its spatial shape is the finest run's excess profile, rescaled
    to ``mu_total``.
    """
    if len(k_runs) < 3:
        raise ValueError("need at least three runs")
    ks = [int(r.spec.k) for r in k_runs]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError(f"k sequence must be strictly increasing, got {ks}")
    grid = k_runs[0].grid
    times = k_runs[0].times
    for r in k_runs[1:]:
        if r.grid != grid:
            raise ValueError("all runs must share the grid")
        if r.times.shape != times.shape or np.any(r.times != times):
            raise ValueError("all runs must share the snapshot schedule")
    theta = float(min(ks) if threshold is None else threshold)
    vol = grid.cell_volume
    m0 = integrate(k_runs[-1].snapshots[0].u.values, grid)
    amp = _amplification(ks)
    eps = np.finfo(float).eps

    mu, err, reg, reg_err, dens, atoms = [], [], [], [], [], []
    for i in range(len(times)):
        fields = [r.snapshots[i].u.values for r in k_runs]
        E = np.array([excess_mass(u, theta, grid) for u in fields])
        R = np.array([integrate(np.minimum(u, theta), grid) for u in fields])
        drift = max(abs(integrate(u, grid) - integrate(r.snapshots[0].u.values, grid))
                    for u, r in zip(fields, k_runs))
        e_last, e_prev = _richardson(ks, E)
        r_last, r_prev = _richardson(ks, R)
        rounding = 64 * eps * amp * float(np.max(E)) * fields[0].size
        total = float(min(max(e_last, 0.0), m0))
        mu.append(total)
        err.append(abs(e_last - e_prev) + rounding if np.any(E > 0) else 0.0)
        reg.append(float(r_last))
        reg_err.append(abs(r_last - r_prev) + amp * drift + 64 * eps * amp * m0 * math.sqrt(fields[0].size))
        finest = np.maximum(fields[-1] - theta, 0.0) * vol
        scale = total / E[-1] if E[-1] > 0 else 0.0
        d, a = _split_atoms(finest, grid, scale)
        dens.append(d)
        atoms.append(a)
    return DefectEstimate(times=times.copy(), density=dens, atoms=atoms, mu_total=np.array(mu),
                          uncertainty=np.array(err), threshold=theta, ks=tuple(ks),
                          regular_mass=np.array(reg), regular_uncertainty=np.array(reg_err))


def detect_blowup(traj: Trajectory, ceiling: Optional[float] = None, window: float = 0.1,
                  rate: float = 10.0) -> BlowupReport:
    """Flag suspected blow-up from the per-step ``max_u`` record.

    Suspected iff ``max_u`` exceeds ``ceiling`` (default: the solver's flag) or
    the growth rate of ``log max_u`` over a trailing time window of length
    ``window`` exceeds ``rate`` at some step.  The onset is the first step at
    which either happens.
    """
    t = traj.step_times if traj.step_times.size else traj.series["t"]
    m = traj.step_max_u if traj.step_max_u.size else traj.series["max_u"]
    onset, reason = None, ""
    if ceiling is not None:
        over = np.nonzero(m > ceiling)[0]
        if over.size:
            onset, reason = float(t[over[0]]), f"max_u above ceiling {ceiling:g}"
    elif traj.blowup_suspected:
        onset, reason = float(t[-1]), traj.note or "solver ceiling"
    logm = np.log(np.maximum(m, np.finfo(float).tiny))
    # last step at or before t - window; windows reaching before the first step are skipped
    start = np.searchsorted(t, t - window * (1.0 - 1e-12), side="right") - 1
    full = start >= 0
    start = np.maximum(start, 0)
    span = np.maximum(t - t[start], np.finfo(float).tiny)
    slope = np.where(full, (logm - logm[start]) / span, -np.inf)
    fast = np.nonzero(slope > rate)[0]
    if fast.size and (onset is None or t[fast[0]] < onset):
        onset, reason = float(t[fast[0]]), f"log max_u growth rate above {rate:g} over window {window:g}"
    suspected = onset is not None
    cells = []
    if suspected:
        # concentration: the neighbourhood of the maximum in the snapshot with the largest peak
        snap = max(traj.snapshots, key=lambda s: s.u.values.max())
        centre = np.unravel_index(int(np.argmax(snap.u.values)), snap.u.values.shape)
        for offset in np.ndindex(*(3,) * snap.u.values.ndim):
            idx = tuple(c + o - 1 for c, o in zip(centre, offset))
            if all(0 <= i < n for i, n in zip(idx, snap.u.values.shape)):
                cells.append(tuple(int(i) for i in idx))
    return BlowupReport(suspected=suspected, t_onset=onset if suspected else None, growth_t=np.asarray(t),
                        growth_max_u=np.asarray(m), concentration_cells=cells, reason=reason)
