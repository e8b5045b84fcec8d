"""Run configuration, pipeline orchestration, manifests and the ``taxis`` command.

Config files use one ``section.key = value`` assignment per line; ``#`` starts a
comment.  Lists are comma separated.  Sections: ``grid``, ``model``,
``initial``, ``stepping`` (all required) and ``pipeline``, ``output``
(optional).  Example::

    grid.extents = 1.0
    grid.cells = 128
    model.chi = constant
    model.chi_params = 1.0
    initial.u = cosine
    initial.u_params = 0.3, 0.15, 1
    initial.v = constant
    initial.v_params = 0.4
    stepping.dt = 1e-3
    stepping.t_final = 1.0
    stepping.snapshot_every = 0.0078125
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .certify import (FAIL, CertificateReport, certify_trajectory, mass_identity_check, summarize, time_reversed,
                      worker_count, write_reports)
from .defect import detect_blowup, estimate_defect
from .mesh import Grid
from .model import ModelSpec, Sensitivity, m_star, validate_model_values
from .solver import (Profile, StepControl, Trajectory, init_data, load_trajectory, run, save_trajectory,
                     snapshot_schedule)

logger = logging.getLogger(__name__)

STAGES = ("solve", "certify", "k-sweep", "defect")
PROFILE_KINDS = ("constant", "gaussian", "cosine")


class ConfigError(ValueError):
    """All problems found in a config, one message per entry of ``errors``."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


# ---------------------------------------------------------------------------
# config blocks


@dataclass(frozen=True)
class GridBlock:
    extents: tuple[float, ...]
    cells: tuple[int, ...]
    dim: Optional[int] = None


@dataclass(frozen=True)
class ModelBlock:
    chi: str = "constant"
    chi_params: tuple[float, ...] = (1.0,)
    a: float = 3.0
    b: float = 3.0
    n: int = 1
    l: int = 1
    M: Optional[float] = None
    k: Optional[int] = None
    plateau_width: float = 1.0


@dataclass(frozen=True)
class InitialBlock:
    u: str
    u_params: tuple[float, ...]
    v: str
    v_params: tuple[float, ...]
    u_floor: float = 0.0
    v_floor: float = 0.0


@dataclass(frozen=True)
class SteppingBlock:
    dt: float
    t_final: float
    snapshot_every: float
    cfl_target: float = 0.5
    limiter: str = "vanleer"
    ceiling_factor: float = 1e6


@dataclass(frozen=True)
class PipelineBlock:
    stages: tuple[str, ...] = ("solve",)
    k_list: tuple[int, ...] = (8, 16, 32, 64)
    T_support: Optional[float] = None
    debug_time_reverse: bool = False
    blowup_window: float = 0.1
    blowup_rate: float = 10.0


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "taxis_out"
    formats: tuple[str, ...] = ("csv", "taxf")


@dataclass(frozen=True)
class RunConfig:
    grid: GridBlock
    model: ModelBlock
    initial: InitialBlock
    stepping: SteppingBlock
    pipeline: PipelineBlock = PipelineBlock()
    output: OutputBlock = OutputBlock()

    def model_spec(self, k: Optional[int] = None) -> ModelSpec:
        m = self.model
        return ModelSpec(chi=Sensitivity(m.chi, m.chi_params), a=m.a, b=m.b, n=m.n, l=m.l, M0=m.M,
                         k=m.k if k is None else k, plateau_width=m.plateau_width)

    def grid_obj(self) -> Grid:
        return Grid(self.grid.extents, self.grid.cells)

    def profiles(self) -> tuple[Profile, Profile]:
        i = self.initial
        return Profile(i.u, i.u_params, i.u_floor), Profile(i.v, i.v_params, i.v_floor)

    def control(self) -> StepControl:
        s = self.stepping
        return StepControl(dt=s.dt, cfl_target=s.cfl_target, limiter=s.limiter)

    def schedule(self) -> list[float]:
        return snapshot_schedule(self.stepping.t_final, self.stepping.snapshot_every)


SECTIONS = {"grid": GridBlock, "model": ModelBlock, "initial": InitialBlock, "stepping": SteppingBlock,
            "pipeline": PipelineBlock, "output": OutputBlock}
REQUIRED_SECTIONS = ("grid", "model", "initial", "stepping")

# value kinds per key: float, int, str, bool, floats, ints, strs, and optional variants
KEY_TYPES = {
    "grid": {"extents": "floats", "cells": "ints", "dim": "int?"},
    "model": {"chi": "str", "chi_params": "floats", "a": "float", "b": "float", "n": "int", "l": "int",
              "M": "float?", "k": "int?", "plateau_width": "float"},
    "initial": {"u": "str", "u_params": "floats", "v": "str", "v_params": "floats", "u_floor": "float",
                "v_floor": "float"},
    "stepping": {"dt": "float", "t_final": "float", "snapshot_every": "float", "cfl_target": "float",
                 "limiter": "str", "ceiling_factor": "float"},
    "pipeline": {"stages": "strs", "k_list": "ints", "T_support": "float?", "debug_time_reverse": "bool",
                 "blowup_window": "float", "blowup_rate": "float"},
    "output": {"directory": "str", "formats": "strs"},
}


def _convert(raw: str, kind: str):
    base = kind.rstrip("?")
    if kind.endswith("?") and raw.lower() in ("", "none", "auto"):
        return None
    if base == "float":
        return float(raw)
    if base == "int":
        val = float(raw)
        if val != int(val):
            raise ValueError(f"{raw!r} is not an integer")
        return int(val)
    if base == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"{raw!r} is not a boolean")
    if base == "str":
        return raw
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if base == "floats":
        return tuple(float(x) for x in items)
    if base == "ints":
        return tuple(_convert(x, "int") for x in items)
    if base == "strs":
        return tuple(items)
    raise AssertionError(kind)


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a config; raises :class:`ConfigError` listing every problem.

    Omitted ``model.M`` resolves to ``m_star + 1`` and omitted ``model.k`` to
    ``4 max(n, l)``.
    """
    errors: list[str] = []
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    unreadable: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not eq or "." not in key:
            errors.append(f"line {lineno}: expected 'section.key = value'")
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            errors.append(f"line {lineno}: unknown section {section!r}")
            continue
        if name not in KEY_TYPES[section]:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if name in values[section]:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            values[section][name] = _convert(raw, KEY_TYPES[section][name])
        except ValueError as exc:
            unreadable.add(key)
            errors.append(f"line {lineno}: {key}: type mismatch, expected {KEY_TYPES[section][name].rstrip('?')} ({exc})")
    for section in REQUIRED_SECTIONS:
        if not values[section] and section != "model":
            errors.append(f"missing required section {section!r}")
    blocks = {}
    for section, cls in SECTIONS.items():
        missing = [n for n in _required_keys(cls) if n not in values[section]]
        if missing and (values[section] or section in REQUIRED_SECTIONS):
            errors.extend(f"missing required key {section}.{n}" for n in missing
                          if f"{section}.{n}" not in unreadable)
            continue
        try:
            blocks[section] = cls(**values[section])
        except TypeError as exc:
            errors.append(f"section {section}: {exc}")
    if errors:
        raise ConfigError(errors)
    errors.extend(_validate(blocks))
    if errors:
        raise ConfigError(errors)
    cfg = RunConfig(**blocks)
    return _fill_defaults(cfg)


def _required_keys(cls) -> list[str]:
    return [f.name for f in fields(cls) if f.default is MISSING and f.default_factory is MISSING]


def _validate(blocks: dict) -> list[str]:
    errors = []
    g: GridBlock = blocks["grid"]
    if g.dim is not None and g.dim not in (1, 2):
        errors.append(f"grid.dim = {g.dim} must be 1 or 2")
    dim = g.dim or len(g.cells)
    if len(g.extents) != dim or len(g.cells) != dim:
        errors.append(f"grid.extents and grid.cells need {dim} entries each")
    if any(c < 2 for c in g.cells):
        errors.append("grid.cells must be at least 2 per axis")
    if any(not e > 0 for e in g.extents):
        errors.append("grid.extents must be positive")
    m: ModelBlock = blocks["model"]
    errors.extend(f"model: {msg}" for msg in validate_model_values(m.a, m.b, m.n, m.l, m.M, m.k, m.plateau_width))
    try:
        Sensitivity(m.chi, m.chi_params)
    except ValueError as exc:
        errors.append(f"model.chi: {exc}")
    i: InitialBlock = blocks["initial"]
    for name, kind, params, floor in (("u", i.u, i.u_params, i.u_floor), ("v", i.v, i.v_params, i.v_floor)):
        if kind not in PROFILE_KINDS:
            errors.append(f"initial.{name} = {kind!r}: expected one of {PROFILE_KINDS}")
            continue
        need = 1 if kind == "constant" else 2 + dim
        if len(params) != need:
            errors.append(f"initial.{name}_params: {kind} profile takes {need} values, got {len(params)}")
        if floor < 0:
            errors.append(f"initial.{name}_floor must be nonnegative")
        if kind == "gaussian" and len(params) > 1 and not params[1] > 0:
            errors.append(f"initial.{name}_params: gaussian width must be positive")
    s: SteppingBlock = blocks["stepping"]
    if not s.dt > 0:
        errors.append("stepping.dt must be positive")
    if not s.t_final > 0:
        errors.append("stepping.t_final must be positive")
    if not 0 < s.snapshot_every <= s.t_final:
        errors.append("stepping.snapshot_every must lie in (0, t_final]")
    if not 0 < s.cfl_target <= 1:
        errors.append("stepping.cfl_target must lie in (0, 1]")
    if s.limiter not in ("vanleer", "none"):
        errors.append("stepping.limiter must be vanleer or none")
    if not s.ceiling_factor > 1:
        errors.append("stepping.ceiling_factor must exceed 1")
    p: PipelineBlock = blocks.get("pipeline", PipelineBlock())
    bad = [st for st in p.stages if st not in STAGES]
    if bad:
        errors.append(f"pipeline.stages: unknown stage(s) {bad}; expected a subset of {STAGES}")
    if not p.stages:
        errors.append("pipeline.stages must name at least one stage")
    if any(k < 1 for k in p.k_list) or any(b <= a for a, b in zip(p.k_list, p.k_list[1:])):
        errors.append("pipeline.k_list must be strictly increasing positive integers")
    if ("defect" in p.stages or "k-sweep" in p.stages) and len(p.k_list) < 3:
        errors.append("pipeline.k_list needs at least three values for the defect estimate")
    if p.T_support is not None and not 0 < p.T_support <= s.t_final:
        errors.append("pipeline.T_support must lie in (0, t_final]")
    if "certify" in p.stages:
        k = m.k if m.k is not None else 4 * max(m.n, m.l)
        if k <= max(m.n, m.l):
            errors.append(f"model.k = {k} must exceed max(n, l) for certificates")
    o: OutputBlock = blocks.get("output", OutputBlock())
    bad = [f for f in o.formats if f not in ("csv", "taxf")]
    if bad:
        errors.append(f"output.formats: unknown format(s) {bad}")
    if not o.directory:
        errors.append("output.directory must be non-empty")
    return errors


def _fill_defaults(cfg: RunConfig) -> RunConfig:
    m = cfg.model
    k = m.k if m.k is not None else 4 * max(m.n, m.l)
    model = replace(m, k=k)
    if m.M is None:
        spec = ModelSpec(chi=Sensitivity(m.chi, m.chi_params), a=m.a, b=m.b, n=m.n, l=m.l, M0=0.0, k=k,
                         plateau_width=m.plateau_width)
        model = replace(model, M=m_star(spec) + 1.0)
    return replace(cfg, model=model)


def _format_value(val) -> str:
    if val is None:
        return "auto"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, tuple):
        return ", ".join(_format_value(v) for v in val)
    return str(val)


def serialize_config(cfg: RunConfig) -> str:
    """Every key of every block, in a form :func:`parse_config` reads back identically."""
    lines = []
    for section in SECTIONS:
        block = getattr(cfg, section)
        for f in fields(block):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(block, f.name))}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# execution


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    files: dict[str, str] = field(default_factory=dict)    # relative path -> sha256
    stages: dict[str, str] = field(default_factory=dict)   # stage -> ok / failed: ... / skipped
    wall_clock: dict[str, float] = field(default_factory=dict)
    failed_clauses: int = 0
    notes: list[str] = field(default_factory=list)
    root: Optional[Path] = None

    @property
    def exit_code(self) -> int:
        bad_stage = any(s.startswith("failed") for s in self.stages.values())
        return 1 if (self.failed_clauses or bad_stage) else 0

    def to_text(self) -> str:
        lines = [f"config_hash = {self.config_hash}", f"tool_version = {self.tool_version}",
                 f"exit_code = {self.exit_code}", f"failed_clauses = {self.failed_clauses}"]
        for name, status in self.stages.items():
            lines.append(f"stage.{name} = {status}")
            if name in self.wall_clock:
                lines.append(f"wall_clock.{name} = {self.wall_clock[name]:.3f}")
        for path, digest in sorted(self.files.items()):
            lines.append(f"file {digest} {path}")
        for note in self.notes:
            lines.extend(f"note {line}" for line in note.splitlines())
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        """The manifest without the per-file checksums."""
        keep = [ln for ln in self.to_text().splitlines() if not ln.startswith("file ")]
        return "\n".join(keep + [f"{len(self.files)} files listed in manifest.txt"]) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_manifest(path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    m = RunManifest(config_hash="", tool_version="", root=path.parent)
    for line in path.read_text().splitlines():
        if line.startswith("file "):
            _, digest, rel = line.split(" ", 2)
            m.files[rel] = digest
        elif line.startswith("stage."):
            k, _, v = line.partition(" = ")
            m.stages[k[6:]] = v
        elif line.startswith("config_hash = "):
            m.config_hash = line.split(" = ", 1)[1]
        elif line.startswith("tool_version = "):
            m.tool_version = line.split(" = ", 1)[1]
        elif line.startswith("failed_clauses = "):
            m.failed_clauses = int(line.split(" = ", 1)[1])
    return m


def _solve(cfg: RunConfig, k: Optional[int] = None) -> Trajectory:
    grid = cfg.grid_obj()
    u_prof, v_prof = cfg.profiles()
    return run(init_data(grid, u_prof, v_prof), cfg.model_spec(k), cfg.control(), cfg.schedule(),
               ceiling_factor=cfg.stepping.ceiling_factor)


def _save(traj: Trajectory, directory: Path, cfg: RunConfig) -> list[Path]:
    files = save_trajectory(traj, directory)
    if "taxf" not in cfg.output.formats:
        for p in [f for f in files if f.suffix == ".taxf"]:
            p.unlink()
        files = [f for f in files if f.suffix != ".taxf"]
    cfg_copy = directory / "config.txt"
    cfg_copy.write_text(serialize_config(cfg))
    return files + [cfg_copy]


def execute(cfg: RunConfig, out_dir: Optional[Path] = None) -> RunManifest:
    """Run the configured stages in the order solve, certify, k-sweep, defect.

    Stage failures are recorded rather than raised.  The manifest, plot data
    and all stage outputs go to the output directory.
    """
    root = Path(out_dir or cfg.output.directory)
    root.mkdir(parents=True, exist_ok=True)
    text = serialize_config(cfg)
    manifest = RunManifest(config_hash=hashlib.sha256(text.encode()).hexdigest(), tool_version=__version__, root=root)
    (root / "config.txt").write_text(text)
    written: list[Path] = [root / "config.txt"]
    stages = cfg.pipeline.stages
    traj: Optional[Trajectory] = None
    sweep: list[Trajectory] = []
    reports: list[CertificateReport] = []

    def stage(name: str, fn):
        if name not in stages and not (name == "k-sweep" and "defect" in stages) \
                and not (name == "solve" and "certify" in stages):
            manifest.stages[name] = "skipped"
            return
        t0 = time.perf_counter()
        try:
            fn()
            manifest.stages[name] = "ok"
        except Exception as exc:  # recorded in the manifest; the exit code reports it
            logger.error("stage %s failed: %s", name, exc, exc_info=logger.isEnabledFor(logging.DEBUG))
            manifest.stages[name] = f"failed: {type(exc).__name__}: {exc}"
        manifest.wall_clock[name] = time.perf_counter() - t0

    def do_solve():
        nonlocal traj
        traj = _solve(cfg)
        written.extend(_save(traj, root / "run", cfg))
        b = detect_blowup(traj, window=cfg.pipeline.blowup_window, rate=cfg.pipeline.blowup_rate)
        manifest.notes.append("run blow-up report\n" + b.summary())

    def do_certify():
        if traj is None:
            raise RuntimeError("no trajectory to certify")
        target = time_reversed(traj) if cfg.pipeline.debug_time_reverse else traj
        reports.extend(certify_trajectory(target, T_support=cfg.pipeline.T_support))
        write_reports(root / "certificates.csv", reports)
        (root / "certificates.txt").write_text(summarize(reports) + "\n")
        written.extend([root / "certificates.csv", root / "certificates.txt"])

    def do_sweep():
        def one(k: int) -> Trajectory:
            return _solve(cfg, k)

        with ThreadPoolExecutor(max_workers=min(worker_count(), len(cfg.pipeline.k_list))) as pool:
            sweep.extend(pool.map(one, cfg.pipeline.k_list))
        for k, tr in zip(cfg.pipeline.k_list, sweep):
            written.extend(_save(tr, root / f"k{k}", cfg))
            b = detect_blowup(tr, window=cfg.pipeline.blowup_window, rate=cfg.pipeline.blowup_rate)
            manifest.notes.append(f"k={k} blow-up report\n" + b.summary())

    def do_defect():
        if len(sweep) < 3:
            raise RuntimeError("the defect stage needs a completed k-sweep")
        est = estimate_defect(sweep)
        written.extend(est.write(root))
        check = mass_identity_check(sweep[-1], est)
        reports.append(check)
        write_reports(root / "certificates_defect.csv", [check])
        written.append(root / "certificates_defect.csv")

    stage("solve", do_solve)
    stage("certify", do_certify)
    stage("k-sweep", do_sweep)
    stage("defect", do_defect)
    manifest.failed_clauses = sum(r.verdict == FAIL for r in reports)
    for p in written:
        if p.exists():
            manifest.files[str(p.relative_to(root))] = _sha256(p)
    plot = export_plotdata(manifest)
    manifest.files[str(plot.relative_to(root))] = _sha256(plot)
    (root / "manifest.txt").write_text(manifest.to_text())
    return manifest


PLOT_COLUMNS = ("run_id", "t", "metric", "value")


def export_plotdata(manifest: RunManifest, path: Optional[Path] = None) -> Path:
    """Tidy long-format CSV of every series file listed in the manifest.

    Values are copied as text, so they are bit-identical to the source series.
    A manifest without series yields a header-only file.
    """
    root = Path(manifest.root or ".")
    series = sorted(p for p in manifest.files if Path(p).name == "series.csv")
    out = Path(path) if path is not None else root / "plotdata.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for rel in series:
            src = root / rel
            if not src.exists():
                raise FileNotFoundError(f"series file {src} is missing")
            run_id = str(Path(rel).parent)
            with src.open() as fh_in:
                reader = csv.reader(fh_in)
                header = next(reader, None)
                if header is None:
                    continue
                for row in reader:
                    if not row:
                        continue
                    t = row[0]
                    for metric, value in zip(header[1:], row[1:]):
                        w.writerow((run_id, t, metric, value))
    return out


# ---------------------------------------------------------------------------
# command line


def _cmd_run(args) -> int:
    cfg = parse_config(Path(args.config).read_text())
    if args.out:
        cfg = replace(cfg, output=replace(cfg.output, directory=args.out))
    manifest = execute(cfg)
    print(manifest.summary(), end="")
    return manifest.exit_code


def _cmd_certify(args) -> int:
    traj = load_trajectory(args.run_dir)
    overrides = {k: v for k, v in (("a", args.a), ("b", args.b), ("n", args.n), ("l", args.l), ("M0", args.M))
                 if v is not None}
    spec = traj.spec.with_(**overrides) if overrides else traj.spec
    if args.time_reverse:
        traj = time_reversed(traj)
    reports = certify_trajectory(traj, spec=spec, T_support=args.T_support)
    out = Path(args.run_dir) / "certificates.csv"
    write_reports(out, reports)
    print(summarize(reports))
    return 1 if any(r.verdict == FAIL for r in reports) else 0


def _cmd_mstar(args) -> int:
    cfg = parse_config(Path(args.config).read_text())
    spec = cfg.model_spec()
    print(repr(m_star(spec.with_(M0=0.0))))
    return 0


def _cmd_sweep(args) -> int:
    cfg = parse_config(Path(args.config).read_text())
    pipeline = cfg.pipeline
    if args.k:
        pipeline = replace(pipeline, k_list=tuple(int(x) for x in args.k.split(",")))
    pipeline = replace(pipeline, stages=("k-sweep", "defect"))
    cfg = replace(cfg, pipeline=pipeline)
    if args.out:
        cfg = replace(cfg, output=replace(cfg.output, directory=args.out))
    _validate_or_raise(cfg)
    manifest = execute(cfg)
    print(manifest.summary(), end="")
    return manifest.exit_code


def _validate_or_raise(cfg: RunConfig) -> None:
    errors = _validate({s: getattr(cfg, s) for s in SECTIONS})
    if errors:
        raise ConfigError(errors)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taxis", description="Regularised Keller-Segel runs and certificates")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="execute the pipeline of a config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("certify", help="re-certify a saved trajectory directory")
    p.add_argument("run_dir")
    for name in ("a", "b", "M"):
        p.add_argument(f"--{name}", type=float)
    for name in ("n", "l"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--T-support", dest="T_support", type=float)
    p.add_argument("--time-reverse", action="store_true", help="certify the time-reversed trajectory")
    p.set_defaults(func=_cmd_certify)
    p = sub.add_parser("mstar", help="print m_star for the configured model")
    p.add_argument("config")
    p.set_defaults(func=_cmd_mstar)
    p = sub.add_parser("sweep", help="k-sequence runs and defect estimate")
    p.add_argument("config")
    p.add_argument("--k", help="comma-separated k values, e.g. 8,16,32,64")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
