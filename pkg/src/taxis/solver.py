"""Semi-implicit finite-volume integration of the regularised Keller-Segel system.

One step of size ``dt``:

1. backward Euler for ``v``: ``((1 + dt) I - dt L) v+ = v + dt (u + s_v)``;
2. explicit chemotactic transport of ``u`` with face fluxes ``c_k(u_f, v_f) dv/dx``,
   ``u_f`` reconstructed from the upwind side (van Leer limited);
3. backward Euler diffusion for ``u``: ``(I - dt L) u+ = u*``.

``L`` is the cell-centred Neumann Laplacian.  Type-II cosine transforms
diagonalise it exactly, so both implicit solves are direct.  The transport
stage is in flux form with zero wall fluxes, hence the discrete u-mass is
conserved to rounding.  ``dt`` is halved until the explicit stage keeps every
cell above ``(1 - cfl_target)`` of its old value; the implicit stages are
inverse-positive, so positivity is then inherited.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import fft

from . import mesh
from .mesh import Grid, ScalarField, integrate
from .model import ModelSpec, b1_coefficient, c_regularized, cut_pow, cutoff, f_eval, spec_fields, spec_from_fields

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ("t", "mass_u", "mass_v", "min_v", "max_u", "F_integral", "dissipation_1", "dissipation_2")


class SolverError(RuntimeError):
    pass


class CFLError(SolverError):
    """The positivity/CFL condition could not be met after the allowed halvings."""


@dataclass
class SimState:
    t: float
    u: ScalarField
    v: ScalarField

    @property
    def grid(self) -> Grid:
        return self.u.grid


@dataclass(frozen=True)
class StepControl:
    dt: float
    cfl_target: float = 0.5
    scheme: str = "semi-implicit-upwind"
    limiter: str = "vanleer"
    max_halvings: int = 20

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_target <= 1:
            raise ValueError("cfl_target must lie in (0, 1]")
        if self.scheme != "semi-implicit-upwind":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.limiter not in ("vanleer", "none"):
            raise ValueError(f"unknown limiter {self.limiter!r}")


@dataclass
class Trajectory:
    """Snapshots and diagnostic series at the scheduled times.

    ``step_times`` and ``step_max_u`` record every accepted step (starting at the
    initial time), which is all the blow-up monitor and the v reference need.
    """

    spec: ModelSpec
    snapshots: list[SimState]
    series: dict[str, np.ndarray]
    step_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_max_u: np.ndarray = field(default_factory=lambda: np.zeros(0))
    blowup_suspected: bool = False
    note: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.snapshots[0].grid

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def u_stack(self) -> np.ndarray:
        return np.stack([s.u.values for s in self.snapshots])

    def v_stack(self) -> np.ndarray:
        return np.stack([s.v.values for s in self.snapshots])

    def step_sizes(self) -> np.ndarray:
        return np.diff(self.step_times)


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class Profile:
    """Initial profile.

    Kinds:

    * ``constant``: ``(value,)``
    * ``gaussian``: ``(mass, width, centre_1[, centre_2])``; the Gaussian of total
      mass ``mass`` on the whole space plus ``floor``
    * ``cosine``: ``(offset, amplitude, mode_1[, mode_2])``;
      ``offset + amplitude * prod cos(m_i pi x_i / L_i)``
    """

    kind: str
    params: tuple[float, ...]
    floor: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))


def _cell_average_gaussian_axis(grid: Grid, axis: int, centre: float, width: float) -> np.ndarray:
    from scipy.special import erf

    edges = grid.axis_faces(axis)
    cdf = 0.5 * (1.0 + erf((edges - centre) / (math.sqrt(2.0) * width)))
    return np.diff(cdf) / grid.spacing[axis]


def _cell_average_cos_axis(grid: Grid, axis: int, mode: float) -> np.ndarray:
    if mode == 0:
        return np.ones(grid.cells[axis])
    L = grid.extents[axis]
    k = mode * math.pi / L
    edges = grid.axis_faces(axis)
    return np.diff(np.sin(k * edges)) / (k * grid.spacing[axis])


def _outer(factors: Sequence[np.ndarray]) -> np.ndarray:
    out = factors[0]
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out


def profile_values(grid: Grid, profile: Profile) -> tuple[np.ndarray, float]:
    """Exact cell averages of a profile and its nominal L1 mass on the box (floor excluded)."""
    p = profile.params
    if profile.kind == "constant":
        vals = np.full(grid.shape, p[0])
        nominal = p[0] * grid.volume
    elif profile.kind == "gaussian":
        if len(p) != 2 + grid.dim:
            raise ValueError("gaussian profile takes (mass, width, centre per axis)")
        mass, width = p[0], p[1]
        if width <= 0:
            raise ValueError("gaussian width must be positive")
        parts = [_cell_average_gaussian_axis(grid, ax, p[2 + ax], width) for ax in range(grid.dim)]
        vals = mass * _outer(parts)
        nominal = float(mass * np.prod([np.sum(q) * h for q, h in zip(parts, grid.spacing)]))
    elif profile.kind == "cosine":
        if len(p) != 2 + grid.dim:
            raise ValueError("cosine profile takes (offset, amplitude, mode per axis)")
        offset, amp = p[0], p[1]
        parts = [_cell_average_cos_axis(grid, ax, p[2 + ax]) for ax in range(grid.dim)]
        vals = offset + amp * _outer(parts)
        nominal = offset * grid.volume + (amp * grid.volume if all(m == 0 for m in p[2:]) else 0.0)
    else:
        raise ValueError(f"unknown profile kind {profile.kind!r}")
    return vals + profile.floor, nominal


def init_data(grid: Grid, u_profile: Profile, v_profile: Profile) -> SimState:
    """Strictly positive cell-averaged initial data.

    ``v`` is scaled up, if needed, so its discrete mass is at least the nominal
    mass of its profile.
    """
    u0, _ = profile_values(grid, u_profile)
    v0, v_nominal = profile_values(grid, v_profile)
    for name, arr in (("u", u0), ("v", v0)):
        if not np.all(arr > 0):
            raise ValueError(f"initial {name} must be strictly positive (min {arr.min():g})")
    vmass = integrate(v0, grid)
    if vmass < v_nominal:
        v0 = v0 * (v_nominal / vmass)
    return SimState(0.0, ScalarField(grid, u0), ScalarField(grid, v0))


# ---------------------------------------------------------------------------
# stepping kernels


@lru_cache(maxsize=32)
def _laplace_symbol(grid: Grid) -> np.ndarray:
    """Eigenvalues of ``-L`` in the DCT-II basis."""
    parts = []
    for axis in range(grid.dim):
        N, h = grid.cells[axis], grid.spacing[axis]
        j = np.arange(N)
        parts.append((4.0 / h ** 2) * np.sin(np.pi * j / (2 * N)) ** 2)
    lam = parts[0]
    for q in parts[1:]:
        lam = np.add.outer(lam, q)
    return lam


def solve_shifted(rhs: np.ndarray, grid: Grid, alpha: float, beta: float) -> np.ndarray:
    """Solve ``(alpha I - beta L) x = rhs`` with Neumann walls."""
    coef = fft.dctn(rhs, type=2, norm="ortho")
    coef /= alpha + beta * _laplace_symbol(grid)
    return fft.idctn(coef, type=2, norm="ortho", overwrite_x=True)


def _vanleer_faces(u: np.ndarray, axis: int, limiter: str):
    """Left and right reconstructions of ``u`` at the interior faces along ``axis``."""
    n = u.shape[axis]
    lo, hi = mesh._take(u, slice(0, n - 1), axis), mesh._take(u, slice(1, n), axis)
    if limiter == "none":
        return lo, hi
    d = hi - lo
    dm, dp = mesh._take(d, slice(0, n - 2), axis), mesh._take(d, slice(1, n - 1), axis)
    # half the van Leer slope dm dp / (dm + dp); zero at extrema and in the wall cells (mirrored ghosts)
    prod = dm * dp
    half = mesh._pad_faces(prod / np.where(prod > 0, dm + dp, np.inf), axis)
    return lo + mesh._take(half, slice(0, n - 1), axis), hi - mesh._take(half, slice(1, n), axis)


def _sensitivity_sign(spec: ModelSpec) -> float:
    """Sign of ``chi`` on the quadrant (constant for every supported kind)."""
    if spec.chi.kind in ("constant", "rational") and spec.chi.params[0] < 0:
        return -1.0
    return 1.0


def chemotactic_flux(u: np.ndarray, v: np.ndarray, grid: Grid, spec: ModelSpec,
                     limiter: str = "vanleer") -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Face fluxes of ``c_k(u, v) grad v`` and the per-cell outflow rate.

    ``u`` is taken from the upwind side of each face.  Returns the full face
    arrays (zero on walls) and, per cell, the total outgoing flux divided by
    the cell width, i.e. the rate at which the explicit stage drains the cell.
    """
    fluxes = []
    outflow = np.zeros(grid.shape)
    sign = _sensitivity_sign(spec)
    for axis, h in enumerate(grid.spacing):
        n = grid.cells[axis]
        vl = mesh._take(v, slice(0, n - 1), axis)
        vr = mesh._take(v, slice(1, n), axis)
        g = (vr - vl) / h
        ul, ur = _vanleer_faces(u, axis, limiter)
        flux = c_regularized(spec, np.where(sign * g > 0, ul, ur), 0.5 * (vl + vr)) * g
        fluxes.append(mesh._pad_faces(flux, axis))
        # a face drains its left cell by positive flux and its right cell by negative flux
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis], hi[axis] = slice(0, n - 1), slice(1, n)
        outflow[tuple(lo)] += np.maximum(flux, 0.0) / h
        outflow[tuple(hi)] -= np.minimum(flux, 0.0) / h
    return tuple(fluxes), outflow


SourceFn = Callable[[float], tuple[np.ndarray, np.ndarray]]


def _advance(u, v, t, dt, grid, spec, ctl, source):
    su = sv = 0.0
    if source is not None:
        su, sv = source(t + dt)
    v_new = solve_shifted(v + dt * (u + sv), grid, 1.0 + dt, dt)
    fluxes, outflow = chemotactic_flux(u, v_new, grid, spec, ctl.limiter)
    if np.any(dt * outflow > ctl.cfl_target * u):
        return None
    u_star = u - dt * mesh.face_divergence(fluxes, grid) + dt * su
    u_new = solve_shifted(u_star, grid, 1.0, dt)
    if source is None and (u_new.min() < 0 or v_new.min() <= 0):
        raise SolverError(f"positivity lost at t={t + dt:g} (min u {u_new.min():g}, min v {v_new.min():g})")
    return u_new, v_new


def step_arrays(u, v, t, dt, grid, spec, ctl, source=None):
    """Advance raw arrays by at most ``dt``; returns ``(u, v, dt_used)``."""
    trial = dt
    for _ in range(ctl.max_halvings + 1):
        out = _advance(u, v, t, trial, grid, spec, ctl, source)
        if out is not None:
            return out[0], out[1], trial
        trial *= 0.5
    raise CFLError(f"CFL condition not met at t={t:g} after {ctl.max_halvings} halvings of dt={dt:g}")


def step(state: SimState, spec: ModelSpec, ctl: StepControl, dt: Optional[float] = None,
         source: Optional[SourceFn] = None) -> SimState:
    """One accepted step (possibly with a halved ``dt``)."""
    grid = state.grid
    u, v, used = step_arrays(state.u.values, state.v.values, state.t, ctl.dt if dt is None else dt,
                             grid, spec, ctl, source)
    return SimState(state.t + used, ScalarField(grid, u), ScalarField(grid, v))


# ---------------------------------------------------------------------------
# diagnostics


def dissipation_densities(u, v, grid, spec):
    """Cellwise ``4(a-1)/a |grad(ubar^{a/2} vbar^{b/2}) + B1 grad vbar^{b/2}|^2`` and
    ``4(b-1)/b |grad vbar^{b/2}|^2``."""
    a, b = spec.a, spec.b
    ub, vb = cutoff(u, spec.n), cutoff(v, spec.l)
    w = cut_pow(ub, a / 2) * cut_pow(vb, b / 2)
    y = cut_pow(vb, b / 2)
    B1 = b1_coefficient(spec, c_regularized(spec, u, v), u, v)
    gw = mesh.cell_gradient(w, grid)
    gy = mesh.cell_gradient(y, grid)
    d1 = sum((gwi + B1 * gyi) ** 2 for gwi, gyi in zip(gw, gy))
    d2 = sum(gyi ** 2 for gyi in gy)
    return 4.0 * (a - 1) / a * d1, 4.0 * (b - 1) / b * d2


def diagnostics(t, u, v, grid, spec) -> dict[str, float]:
    d1, d2 = dissipation_densities(u, v, grid, spec)
    return {
        "t": t,
        "mass_u": integrate(u, grid),
        "mass_v": integrate(v, grid),
        "min_v": float(v.min()),
        "max_u": float(u.max()),
        "F_integral": integrate(f_eval(spec, u, v), grid),
        "dissipation_1": integrate(d1, grid),
        "dissipation_2": integrate(d2, grid),
    }


# ---------------------------------------------------------------------------
# driver


def run(initial: SimState, spec: ModelSpec, ctl: StepControl, schedule: Sequence[float],
        ceiling_factor: float = 1e6, source: Optional[SourceFn] = None,
        max_steps: int = 10_000_000) -> Trajectory:
    """Integrate to ``schedule[-1]``, recording a snapshot and a series row at every scheduled time.

    Steps are shortened to land exactly on snapshot times.  If ``max_u`` passes
    ``ceiling_factor`` times its initial value the run stops after that step,
    records it as a final snapshot and flags the trajectory.
    """
    times = [float(t) for t in schedule]
    if any(t <= 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("snapshot schedule must be positive and strictly increasing")
    grid = initial.grid
    u, v, t = initial.u.values.copy(), initial.v.values.copy(), float(initial.t)
    ceiling = ceiling_factor * float(u.max())
    rows = [diagnostics(t, u, v, grid, spec)]
    snaps = [SimState(t, ScalarField(grid, u.copy()), ScalarField(grid, v.copy()))]
    step_t, step_max = [t], [float(u.max())]
    flagged, note = False, ""
    last = ctl.dt
    for target in times:
        while t < target and not flagged:
            # retry from twice the last accepted step, never above the configured dt
            dt = min(ctl.dt, 2.0 * last)
            if target - t <= dt * (1.0 + 1e-9):
                dt = target - t   # also absorbs round-off slivers before a snapshot
            u, v, used = step_arrays(u, v, t, dt, grid, spec, ctl, source)
            if used < dt or dt < target - t:
                last = used   # a step shortened only to land on a snapshot says nothing
            t = target if used == dt and dt == target - t else t + used
            step_t.append(t)
            step_max.append(float(u.max()))
            if step_max[-1] > ceiling:
                flagged = True
                note = f"blow-up suspected: max_u {step_max[-1]:.6g} > ceiling {ceiling:.6g} at t={t:.6g}"
                logger.warning(note)
            if len(step_t) - 1 >= max_steps:
                raise SolverError(f"step budget of {max_steps} exhausted at t={t:g}")
        rows.append(diagnostics(t, u, v, grid, spec))
        snaps.append(SimState(t, ScalarField(grid, u.copy()), ScalarField(grid, v.copy())))
        if flagged:
            break
    series = {name: np.array([r[name] for r in rows]) for name in SERIES_COLUMNS}
    return Trajectory(spec=spec, snapshots=snaps, series=series, step_times=np.array(step_t),
                      step_max_u=np.array(step_max), blowup_suspected=flagged, note=note,
                      meta={"steps": len(step_t) - 1, "dt": ctl.dt, "cfl_target": ctl.cfl_target})


def snapshot_schedule(t_final: float, every: float) -> list[float]:
    """Evenly spaced snapshot times ``every, 2 every, ..., t_final``."""
    n = max(1, int(round(t_final / every)))
    return [t_final * (i + 1) / n for i in range(n)]


# ---------------------------------------------------------------------------
# lower bound for v


@dataclass
class LowerBoundReport:
    tau: float
    T: float
    checked: bool
    margin: float
    times: np.ndarray
    min_v: np.ndarray
    floor: np.ndarray

    @property
    def passed(self) -> bool:
        return (not self.checked) or self.margin >= 0.0


def reference_v(traj: Trajectory) -> list[np.ndarray]:
    """``v`` driven by ``u = 0`` along the trajectory's own step sequence, at each snapshot.

    Backward Euler resolvents are inverse-positive, so this is a discrete
    subsolution of the actual ``v``.
    """
    grid = traj.grid
    steps = traj.step_times
    snap_t = traj.times
    w = traj.snapshots[0].v.values.copy()
    out = [w.copy()]
    j = 1
    for t0, t1 in zip(steps[:-1], steps[1:]):
        dt = t1 - t0
        w = solve_shifted(w, grid, 1.0 + dt, dt)
        while j < len(snap_t) and snap_t[j] <= t1:
            out.append(w.copy())
            j += 1
    return out


def check_v_lower_bound(traj: Trajectory, tau: float, T: float) -> LowerBoundReport:
    """``min v(t) >= min v_ref(t) >= e^{-t} min v0`` on snapshots in ``[tau, T]``.

    ``v_ref`` is the same scheme with the u-source switched off.  The margin is the
    smallest gap between ``min v`` and the floor ``min v_ref``.
    """
    times = traj.times
    if not tau < T:
        return LowerBoundReport(tau, T, False, math.inf, np.array([]), np.array([]), np.array([]))
    ref = reference_v(traj)
    sel = [i for i, t in enumerate(times) if tau <= t <= T]
    min_v = np.array([traj.snapshots[i].v.values.min() for i in sel])
    floor = np.array([ref[i].min() for i in sel])
    margin = float(np.min(min_v - floor)) if sel else math.inf
    return LowerBoundReport(tau, T, bool(sel), margin, times[sel], min_v, floor)


# ---------------------------------------------------------------------------
# persistence


def series_csv(traj: Trajectory) -> str:
    lines = [",".join(SERIES_COLUMNS)]
    for i in range(len(traj.series["t"])):
        lines.append(",".join(repr(float(traj.series[c][i])) for c in SERIES_COLUMNS))
    return "\n".join(lines) + "\n"


def save_trajectory(traj: Trajectory, directory) -> list[Path]:
    """Write a trajectory directory and return the files written.

    Layout: ``series.csv`` (scheduled-time diagnostics), ``steps.csv`` (every
    accepted step's time and ``max_u``), ``model.txt`` (the model fields),
    ``snapshots/NNNN_{u,v}.taxf`` and the plain-text index ``index.txt``.
    """
    d = Path(directory)
    (d / "snapshots").mkdir(parents=True, exist_ok=True)
    files = []

    def put(name: str, text: str):
        p = d / name
        p.write_text(text)
        files.append(p)

    put("series.csv", series_csv(traj))
    put("steps.csv", "t,max_u\n" + "".join(f"{float(t)!r},{float(m)!r}\n"
                                            for t, m in zip(traj.step_times, traj.step_max_u)))
    put("model.txt", "".join(f"{k} = {v}\n" for k, v in spec_fields(traj.spec).items()))
    index = [f"blowup_suspected = {str(traj.blowup_suspected).lower()}", f"note = {traj.note}"]
    for key, val in sorted(traj.meta.items()):
        index.append(f"meta.{key} = {val!r}")
    for i, s in enumerate(traj.snapshots):
        names = [f"snapshots/{i:04d}_u.taxf", f"snapshots/{i:04d}_v.taxf"]
        mesh.write_field(d / names[0], s.u)
        mesh.write_field(d / names[1], s.v)
        files.extend(d / n for n in names)
        index.append(f"snapshot {i} {float(s.t)!r} {names[0]} {names[1]}")
    put("index.txt", "\n".join(index) + "\n")
    return files


def _read_key_values(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line and not line.startswith("snapshot "):
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def load_trajectory(directory, spec: Optional[ModelSpec] = None) -> Trajectory:
    """Read a directory written by :func:`save_trajectory`; ``spec`` overrides the stored model."""
    d = Path(directory)
    if spec is None:
        spec = spec_from_fields(_read_key_values((d / "model.txt").read_text()))
    index_text = (d / "index.txt").read_text()
    info = _read_key_values(index_text)
    snaps = []
    for line in index_text.splitlines():
        if line.startswith("snapshot "):
            _, _, t, ufile, vfile = line.split(" ")
            snaps.append(SimState(float(t), mesh.read_field(d / ufile), mesh.read_field(d / vfile)))
    series = _read_csv_columns(d / "series.csv")
    steps = _read_csv_columns(d / "steps.csv")
    meta = {}
    for key, val in info.items():
        if key.startswith("meta."):
            try:
                meta[key[5:]] = float(val) if "." in val or "e" in val else int(val)
            except ValueError:
                meta[key[5:]] = val
    return Trajectory(spec=spec, snapshots=snaps, series={c: series[c] for c in SERIES_COLUMNS},
                      step_times=steps["t"], step_max_u=steps["max_u"],
                      blowup_suspected=info.get("blowup_suspected") == "true", note=info.get("note", ""),
                      meta=meta)


def _read_csv_columns(path: Path) -> dict[str, np.ndarray]:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [[float(x) for x in line.split(",")] for line in lines[1:] if line]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, j].copy() for j, name in enumerate(header)}
