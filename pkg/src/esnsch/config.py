"""Run configuration: a small INI-style format with line-numbered errors.

Layout::

    # comments start with '#' or ';'
    surface = static_sphere        # shorthand keys may precede any section
    level = 3
    dt = 1e-3
    t_end = 1e-2

    [potential]
    variant = RegularizedLog
    delta = 1e-4

Shorthand keys at the top: surface, level, dt, t_end, seed.  Every other key
lives in its section; unknown sections or keys are errors.  ``format_config``
emits the fully-defaulted normalized form, which parses back to an equal
``RunConfig``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

from .errors import ConfigValidationError, ParseError
from .geometry import AreaPreservingEllipsoid, DilatingSphere, StaticLevelSet, StaticSphere
from .mesh import mesh_for_surface, read_off
from .potentials import PotentialSpec, Variant, ViscositySpec
from .solver import (ForceSpec, InitialPhase, InitialVelocity, PressurePair, SchemeConfig,
                     Splitting)

SURFACE_KINDS = ("static_sphere", "static_ellipsoid", "area_preserving_ellipsoid", "torus",
                 "dilating_sphere")


@dataclass(frozen=True)
class SurfaceSpec:
    kind: str = "static_sphere"
    radius: float = 1.0
    axes: tuple = (1.2, 1.2, 0.8)
    amplitude: float = 0.2
    c0: float = 1.0
    period: float = 1.0
    major: float = 1.0
    minor: float = 0.4
    r0: float = 1.0
    r1: float = 2.0

    def build(self):
        if self.kind == "static_sphere":
            return StaticSphere(self.radius)
        if self.kind == "static_ellipsoid":
            return StaticLevelSet.ellipsoid(*self.axes)
        if self.kind == "area_preserving_ellipsoid":
            return AreaPreservingEllipsoid(self.amplitude, self.c0, self.period)
        if self.kind == "torus":
            return StaticLevelSet.torus(self.major, self.minor)
        return DilatingSphere(self.r0, self.r1, self.period)


@dataclass(frozen=True)
class MeshSpec:
    level: int = 3
    off_path: str = ""

    def build(self, surface):
        if self.off_path:
            return read_off(self.off_path)
        return mesh_for_surface(surface, self.level, 0.0)


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "esnsch_out"
    snapshot_stride: int = 10
    csv: str = "diagnostics.csv"


@dataclass(frozen=True)
class RunConfig:
    surface: SurfaceSpec = field(default_factory=SurfaceSpec)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    scheme: SchemeConfig = field(default_factory=lambda: SchemeConfig(dt=1e-3, t_end=1e-2))
    phi0: InitialPhase = field(default_factory=InitialPhase)
    u0: InitialVelocity = field(default_factory=InitialVelocity)
    output: OutputSpec = field(default_factory=OutputSpec)
    seed: int = 0

    def build_surface(self):
        return self.surface.build()

    def build_mesh(self, surface=None):
        surface = self.build_surface() if surface is None else surface
        return self.mesh.build(surface)


# schema: section -> key -> (parser, default)

def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(f"{s!r} is not an integer")
    return int(v)


def _str(s: str) -> str:
    return s


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _triple(s: str) -> tuple:
    parts = [p for p in s.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise ValueError("expected three numbers")
    return tuple(float(p) for p in parts)


def _choice(options) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"{s!r} is not one of {', '.join(options)}")
        return s
    return parse


_DEF_SURF = SurfaceSpec()
_DEF_SCHEME = SchemeConfig(dt=1e-3, t_end=1e-2)
_DEF_POT = PotentialSpec()
_DEF_VISC = ViscositySpec()

SCHEMA: dict[str, dict[str, tuple]] = {
    "surface": {
        "kind": (_choice(SURFACE_KINDS), _DEF_SURF.kind),
        "radius": (_float, _DEF_SURF.radius),
        "axes": (_triple, _DEF_SURF.axes),
        "amplitude": (_float, _DEF_SURF.amplitude),
        "c0": (_float, _DEF_SURF.c0),
        "period": (_float, _DEF_SURF.period),
        "major": (_float, _DEF_SURF.major),
        "minor": (_float, _DEF_SURF.minor),
        "r0": (_float, _DEF_SURF.r0),
        "r1": (_float, _DEF_SURF.r1),
    },
    "mesh": {
        "level": (_int, 3),
        "off_path": (_str, ""),
    },
    "scheme": {
        "dt": (_float, _DEF_SCHEME.dt),
        "t_end": (_float, _DEF_SCHEME.t_end),
        "splitting": (_choice([s.value for s in Splitting]), _DEF_SCHEME.splitting.value),
        "picard_iters": (_int, _DEF_SCHEME.picard_iters),
        "pressure_pair": (_choice([p.value for p in PressurePair]), _DEF_SCHEME.pressure_pair.value),
        "stab_param": (_float, _DEF_SCHEME.stab_param),
        "lin_tol": (_float, _DEF_SCHEME.lin_tol),
        "nonlin_tol": (_float, _DEF_SCHEME.nonlin_tol),
        "substeps_mesh": (_int, _DEF_SCHEME.substeps_mesh),
        "max_newton": (_int, _DEF_SCHEME.max_newton),
        "phase_bound": (_bool, _DEF_SCHEME.phase_bound),
    },
    "potential": {
        "variant": (_choice([v.value for v in Variant]), _DEF_POT.variant.value),
        "epsilon": (_float, _DEF_POT.epsilon),
        "theta": (_float, _DEF_POT.theta),
        "delta": (_float, _DEF_POT.delta),
    },
    "viscosity": {
        "eta1": (_float, _DEF_VISC.eta1),
        "eta2": (_float, _DEF_VISC.eta2),
    },
    "force": {
        "kind": (_choice(["none", "swirl"]), "none"),
        "amplitude": (_float, 0.0),
    },
    "initial": {
        "phi": (_choice(["constant", "harmonic", "random"]), "constant"),
        "phi_mean": (_float, 0.0),
        "phi_amplitude": (_float, 0.0),
        "phi_degree": (_int, 1),
        "u": (_choice(["zero", "rotation"]), "zero"),
        "u_amplitude": (_float, 0.0),
    },
    "output": {
        "directory": (_str, "esnsch_out"),
        "snapshot_stride": (_int, 10),
        "csv": (_str, "diagnostics.csv"),
    },
    "run": {
        "seed": (_int, 0),
    },
}

SHORTHAND = {"surface": ("surface", "kind"), "level": ("mesh", "level"), "dt": ("scheme", "dt"),
             "t_end": ("scheme", "t_end"), "seed": ("run", "seed")}


def _strip_comment(line: str) -> str:
    for i, ch in enumerate(line):
        if ch in "#;" and (i == 0 or line[i - 1].isspace()):
            return line[:i]
    return line


def parse_config(text: str, base_dir: str | Path | None = None) -> RunConfig:
    """Parse and validate configuration text."""
    values: dict[str, dict[str, tuple]] = {s: {} for s in SCHEMA}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("unterminated section header", lineno)
            section = line[1:-1].strip().lower()
            if section not in SCHEMA:
                raise ParseError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        key, val = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if section is None:
            if key not in SHORTHAND:
                raise ParseError(f"unknown key {key!r} outside any section", lineno)
            sec, name = SHORTHAND[key]
        else:
            sec, name = section, key
            if name not in SCHEMA[sec]:
                raise ParseError(f"unknown key {key!r} in [{sec}]", lineno)
        if name in values[sec]:
            raise ParseError(f"duplicate key {sec}.{name}", lineno)
        parser = SCHEMA[sec][name][0]
        try:
            parsed = parser(val)
        except ValueError as exc:
            raise ParseError(f"{sec}.{name}: {exc}", lineno) from exc
        values[sec][name] = (parsed, lineno)
    return _build(values, base_dir)


def _get(values, sec: str, name: str):
    if name in values[sec]:
        return values[sec][name][0]
    return SCHEMA[sec][name][1]


def _build(values, base_dir) -> RunConfig:
    g = lambda sec, name: _get(values, sec, name)  # noqa: E731
    surf = SurfaceSpec(**{k: g("surface", k) for k in SCHEMA["surface"]})
    _validate_surface(surf)
    level = g("mesh", "level")
    if not 0 <= level <= 7:
        raise ConfigValidationError("mesh.level", "must lie in [0, 7]")
    off = g("mesh", "off_path")
    if off:
        p = Path(off)
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        if not p.is_file():
            raise ConfigValidationError("mesh.off_path", f"cannot read {p}")
        off = str(p)
    mesh = MeshSpec(level, off)
    try:
        pot = PotentialSpec(Variant(g("potential", "variant")), g("potential", "epsilon"),
                            g("potential", "theta"), g("potential", "delta"))
    except ValueError as exc:
        raise ConfigValidationError("potential", str(exc)) from exc
    try:
        visc = ViscositySpec(g("viscosity", "eta1"), g("viscosity", "eta2"))
    except ValueError as exc:
        raise ConfigValidationError("viscosity", str(exc)) from exc
    force = ForceSpec(g("force", "kind"), g("force", "amplitude"))
    scheme = SchemeConfig(
        dt=g("scheme", "dt"), t_end=g("scheme", "t_end"), potential=pot, viscosity=visc,
        force=force, splitting=Splitting(g("scheme", "splitting")),
        picard_iters=g("scheme", "picard_iters"),
        pressure_pair=PressurePair(g("scheme", "pressure_pair")),
        stab_param=g("scheme", "stab_param"), lin_tol=g("scheme", "lin_tol"),
        nonlin_tol=g("scheme", "nonlin_tol"), substeps_mesh=g("scheme", "substeps_mesh"),
        max_newton=g("scheme", "max_newton"), phase_bound=g("scheme", "phase_bound"))
    seed = g("run", "seed")
    if not 0 <= seed < 2**64:
        raise ConfigValidationError("run.seed", "must be a 64-bit unsigned integer")
    phi0 = InitialPhase(g("initial", "phi"), g("initial", "phi_mean"), g("initial", "phi_amplitude"),
                        g("initial", "phi_degree"), seed)
    if pot.is_log:
        if not abs(phi0.mean) < 1.0:
            raise ConfigValidationError(
                "initial.phi_mean",
                f"mean {phi0.mean:g} is not admissible initial data (I0) for the logarithmic "
                "potential: it must lie strictly inside (-1, 1)")
        if abs(phi0.mean) + abs(phi0.amplitude) > 1.0 - 1e-6:
            raise ConfigValidationError(
                "initial.phi_amplitude", "|mean| + amplitude must stay below 1 - 1e-6 (I0)")
    if phi0.kind == "harmonic" and not 0 <= phi0.degree <= 3:
        raise ConfigValidationError("initial.phi_degree", "harmonic degree must lie in [0, 3]")
    u0 = InitialVelocity(g("initial", "u"), g("initial", "u_amplitude"))
    stride = g("output", "snapshot_stride")
    if stride < 0:
        raise ConfigValidationError("output.snapshot_stride", "must be non-negative")
    out = OutputSpec(g("output", "directory"), stride, g("output", "csv"))
    return RunConfig(surf, mesh, scheme, phi0, u0, out, seed)


def _validate_surface(s: SurfaceSpec) -> None:
    positive = {"radius": s.radius, "period": s.period, "major": s.major, "minor": s.minor,
                "r0": s.r0, "r1": s.r1, "c0": s.c0}
    for name, v in positive.items():
        if not v > 0:
            raise ConfigValidationError(f"surface.{name}", "must be positive")
    if any(not a > 0 for a in s.axes):
        raise ConfigValidationError("surface.axes", "must be positive")
    if not 0 <= s.amplitude < 1:
        raise ConfigValidationError("surface.amplitude", "must lie in [0, 1)")
    if s.minor >= s.major:
        raise ConfigValidationError("surface.minor", "must be smaller than surface.major")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_values(cfg: RunConfig) -> dict[str, dict[str, object]]:
    """Section -> key -> value view of a config, matching SCHEMA."""
    sc = cfg.scheme
    return {
        "surface": {f.name: getattr(cfg.surface, f.name) for f in fields(SurfaceSpec)},
        "mesh": {"level": cfg.mesh.level, "off_path": cfg.mesh.off_path},
        "scheme": {"dt": sc.dt, "t_end": sc.t_end, "splitting": sc.splitting.value,
                   "picard_iters": sc.picard_iters, "pressure_pair": sc.pressure_pair.value,
                   "stab_param": sc.stab_param, "lin_tol": sc.lin_tol,
                   "nonlin_tol": sc.nonlin_tol, "substeps_mesh": sc.substeps_mesh,
                   "max_newton": sc.max_newton, "phase_bound": sc.phase_bound},
        "potential": {"variant": sc.potential.variant.value, "epsilon": sc.potential.epsilon,
                      "theta": sc.potential.theta, "delta": sc.potential.delta},
        "viscosity": {"eta1": sc.viscosity.eta1, "eta2": sc.viscosity.eta2},
        "force": {"kind": sc.force.kind, "amplitude": sc.force.amplitude},
        "initial": {"phi": cfg.phi0.kind, "phi_mean": cfg.phi0.mean,
                    "phi_amplitude": cfg.phi0.amplitude, "phi_degree": cfg.phi0.degree,
                    "u": cfg.u0.kind, "u_amplitude": cfg.u0.amplitude},
        "output": {"directory": cfg.output.directory,
                   "snapshot_stride": cfg.output.snapshot_stride, "csv": cfg.output.csv},
        "run": {"seed": cfg.seed},
    }


def format_config(cfg: RunConfig) -> str:
    """Normalized text form with every key present."""
    lines = []
    for sec, kv in config_values(cfg).items():
        lines.append(f"[{sec}]")
        for k, v in kv.items():
            lines.append(f"{k} = {_fmt(v)}")
        lines.append("")
    return "\n".join(lines)


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigValidationError("config", f"cannot read {p}: {exc}") from exc
    return parse_config(text, base_dir=p.parent)
