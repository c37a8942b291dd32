"""Line-oriented ``key = value`` run configuration.

Every recognised key, its default and its meaning is listed in ``KEYS``.
Unknown keys are errors, as are values that violate an invariant.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import ParseError, ValidationError

MAP_KINDS = ("identity", "dilation", "rotation", "shear", "wavy_shear", "user")
IC_KINDS = ("zero", "mode", "vortex")
DATA_KINDS = ("zero", "constant", "mode")
SUITES = ("geometry", "basis", "assembly")
FAMILIES = ("sin2", "sinprod")


def _int_list(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _float_list(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _order(text):
    return "auto" if text.strip().lower() == "auto" else int(text)


def _str_list(text):
    return tuple(v for v in text.replace(",", " ").split())


# key -> (attribute, converter, help)
KEYS = {
    "map.kind": ("map_kind", str, "identity | dilation | rotation | shear | wavy_shear | user"),
    "map.r_expr": ("r_expr", str, "dilation factor r(t) > 0"),
    "map.theta_expr": ("theta_expr", str, "rotation angle theta(t)"),
    "map.alpha_expr": ("alpha_expr", str, "shear / wavy_shear amplitude alpha(t)"),
    "map.y1_expr": ("y1_expr", str, "user map: y1 as a function of x1, x2, t"),
    "map.y2_expr": ("y2_expr", str, "user map: y2 as a function of x1, x2, t"),
    "map.x1_expr": ("x1_expr", str, "user map inverse: x1 as a function of y1, y2, t"),
    "map.x2_expr": ("x2_expr", str, "user map inverse: x2 as a function of y1, y2, t"),
    "map.det_floor": ("det_floor", float, "smallest admissible det M"),
    "basis.m": ("m", int, "number of Galerkin modes"),
    "basis.family": ("family", str, "sin2 | sinprod stream-function profiles"),
    "grid.n_time": ("n_time", int, "number of time steps N"),
    "solver.T": ("T", float, "final time"),
    "solver.dt": ("dt", float, "time step; must equal T / n_time"),
    "solver.seed": ("seed", int, "Brownian seed"),
    "solver.blowup_factor": ("blowup_factor", float, "abort when |g|^2 exceeds factor x budget"),
    "quad.order": ("quad_order", _order, "Gauss points per axis, or auto"),
    "ic.kind": ("ic_kind", str, "zero | mode | vortex"),
    "ic.mode": ("ic_mode", int, "orthonormal mode for ic.kind = mode"),
    "ic.amplitude": ("ic_amplitude", float, "initial amplitude"),
    "force.kind": ("force_kind", str, "zero | constant | mode"),
    "force.amplitude": ("force_amplitude", float, "forcing amplitude"),
    "force.mode": ("force_mode", int, "raw element used by force.kind = mode"),
    "noise.kind": ("noise_kind", str, "zero | constant | mode"),
    "noise.amplitude": ("noise_amplitude", float, "noise amplitude"),
    "noise.mode": ("noise_mode", int, "raw element used by noise.kind = mode"),
    "diag.seeds": ("diag_seeds", int, "number of seeds for energy / convergence studies"),
    "diag.seed0": ("diag_seed0", int, "first seed of every diagnostic seed list"),
    "diag.n_paths": ("n_paths", int, "Monte Carlo paths for the uniform bound"),
    "diag.m_list": ("m_list", _int_list, "nested mode counts"),
    "diag.dt_list": ("dt_list", _float_list, "time steps for refinement studies"),
    "diag.delta": ("delta", float, "initial perturbation for the uniqueness gap"),
    "diag.eps_list": ("eps_list", _float_list, "epsilons for the finite-rank inequality"),
    "diag.trials": ("trials", int, "random trial fields / vectors"),
    "diag.samples": ("samples", int, "random points for geometry identities"),
    "diag.calibration_seed": ("calibration_seed", int, "seed used to fit constants"),
    "diag.suites": ("suites", _str_list, "verify suites: geometry basis assembly"),
    "output.dir": ("out_dir", str, "output directory"),
    "output.field_count": ("field_count", int, "number of field snapshots written"),
    "output.field_resolution": ("field_resolution", int, "grid points per axis in field CSVs"),
    "run.threads": ("threads", int, "worker threads for numba kernels"),
}

_DEFAULT_ALPHA = {"shear": "0.5*t", "wavy_shear": "0.25*t"}


@dataclass
class RunConfig:
    map_kind: str = "identity"
    r_expr: str = "1 + t"
    theta_expr: str = "t"
    alpha_expr: Optional[str] = None
    y1_expr: Optional[str] = None
    y2_expr: Optional[str] = None
    x1_expr: Optional[str] = None
    x2_expr: Optional[str] = None
    det_floor: float = 1e-8
    m: int = 4
    family: str = "sin2"
    n_time: Optional[int] = None
    T: float = 1.0
    dt: Optional[float] = None
    seed: int = 0
    blowup_factor: float = 1e6
    quad_order: object = "auto"
    ic_kind: str = "zero"
    ic_mode: int = 1
    ic_amplitude: float = 1.0
    force_kind: str = "zero"
    force_amplitude: float = 1.0
    force_mode: int = 1
    noise_kind: str = "zero"
    noise_amplitude: float = 1.0
    noise_mode: int = 1
    diag_seeds: int = 200
    diag_seed0: int = 1000
    n_paths: int = 200
    m_list: tuple = (4, 8, 16, 32)
    dt_list: tuple = (4e-3, 2e-3, 1e-3, 5e-4)
    delta: float = 1e-6
    eps_list: tuple = (0.1, 0.01)
    trials: int = 1000
    samples: int = 1000
    calibration_seed: int = 999
    suites: tuple = SUITES
    out_dir: str = "out"
    field_count: int = 3
    field_resolution: int = 33
    threads: int = 1
    explicit: frozenset = field(default_factory=frozenset, repr=False)

    def quad_order_for(self, m=None):
        from .quadrature import recommended_order

        if self.quad_order == "auto":
            return recommended_order(m or self.m)
        return int(self.quad_order)

    @property
    def shear_alpha(self):
        return self.alpha_expr or _DEFAULT_ALPHA.get(self.map_kind, "0.5*t")

    def seeds(self, count=None):
        return list(range(self.diag_seed0, self.diag_seed0 + (count or self.diag_seeds)))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def with_dt(self, dt):
        n = int(round(self.T / dt))
        return self.replace(dt=self.T / n, n_time=n)

    def echo(self):
        """Effective configuration as ``key = value`` lines (sorted keys)."""
        lines = []
        for key in sorted(KEYS):
            val = getattr(self, KEYS[key][0])
            if val is None:
                continue
            if isinstance(val, tuple):
                val = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in val)
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


def parse_config(text) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ParseError(f"unknown key {key!r}", lineno)
        attr, conv, _ = KEYS[key]
        if attr in values:
            raise ParseError(f"duplicate key {key!r}", lineno)
        try:
            values[attr] = conv(val)
        except ValueError as exc:
            raise ParseError(f"bad value for {key!r}: {val!r} ({exc})", lineno) from None
    cfg = RunConfig(**values, explicit=frozenset(values))
    return validate(cfg)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def validate(cfg: RunConfig) -> RunConfig:
    """Fill derived grid values and enforce invariants (raises ValidationError)."""
    def bad(msg):
        raise ValidationError(msg)

    if not cfg.T > 0:
        bad("solver.T must be positive")
    if cfg.dt is not None and not cfg.dt > 0:
        bad("solver.dt must be positive")
    if cfg.n_time is not None and cfg.n_time < 2:
        bad("grid.n_time must be at least 2")
    if cfg.dt is None and cfg.n_time is None:
        cfg.n_time = 1000
    if cfg.dt is None:
        cfg.dt = cfg.T / cfg.n_time
    if cfg.n_time is None:
        n = round(cfg.T / cfg.dt)
        if n < 2:
            bad("solver.T / solver.dt gives fewer than two steps")
        cfg.n_time = int(n)
    if not math.isclose(cfg.dt * cfg.n_time, cfg.T, rel_tol=1e-9):
        bad(f"solver.dt * grid.n_time = {cfg.dt * cfg.n_time!r} differs from solver.T = {cfg.T!r}")
    if cfg.m < 1:
        bad("basis.m must be at least 1")
    if cfg.quad_order != "auto" and cfg.quad_order < 8:
        bad("quad.order must be at least 8")
    for name, val, allowed in (("map.kind", cfg.map_kind, MAP_KINDS),
                               ("ic.kind", cfg.ic_kind, IC_KINDS),
                               ("force.kind", cfg.force_kind, DATA_KINDS),
                               ("noise.kind", cfg.noise_kind, DATA_KINDS),
                               ("basis.family", cfg.family, FAMILIES)):
        if val not in allowed:
            bad(f"{name} = {val!r} is not one of {', '.join(allowed)}")
    for s in cfg.suites:
        if s not in SUITES:
            bad(f"diag.suites entry {s!r} is not one of {', '.join(SUITES)}")
    if cfg.ic_kind == "mode" and not 1 <= cfg.ic_mode <= cfg.m:
        bad(f"ic.mode = {cfg.ic_mode} outside 1..basis.m")
    for name, v in (("force.mode", cfg.force_mode), ("noise.mode", cfg.noise_mode)):
        if v < 1:
            bad(f"{name} must be at least 1")
    if cfg.blowup_factor <= 0 or cfg.det_floor <= 0:
        bad("solver.blowup_factor and map.det_floor must be positive")
    if cfg.n_paths < 1 or cfg.diag_seeds < 1 or cfg.trials < 1 or cfg.samples < 1:
        bad("diagnostic counts must be positive")
    if any(m < 1 for m in cfg.m_list) or list(cfg.m_list) != sorted(cfg.m_list):
        bad("diag.m_list must be increasing positive integers")
    if any(not d > 0 for d in cfg.dt_list):
        bad("diag.dt_list entries must be positive")
    if cfg.threads < 1 or cfg.field_resolution < 2 or cfg.field_count < 0:
        bad("run.threads >= 1, output.field_resolution >= 2, output.field_count >= 0")
    if cfg.map_kind == "user" and None in (cfg.y1_expr, cfg.y2_expr, cfg.x1_expr, cfg.x2_expr):
        bad("map.kind = user needs map.y1_expr, map.y2_expr, map.x1_expr and map.x2_expr")
    try:
        build_map(cfg)
    except (ValueError, TypeError, SyntaxError) as exc:
        bad(f"map expressions: {exc}")
    except Exception as exc:  # sympy raises its own SympifyError
        bad(f"map expressions: {exc}")
    return cfg


def build_map(cfg: RunConfig):
    return dataclasses.replace(_build_map(cfg), det_floor=cfg.det_floor)


def _build_map(cfg: RunConfig):
    from . import geometry as g

    T = cfg.T
    kind = cfg.map_kind
    if kind == "identity":
        return g.identity_map(T)
    if kind == "dilation":
        return g.dilation_map(cfg.r_expr, T)
    if kind == "rotation":
        return g.rotation_map(cfg.theta_expr, T)
    if kind == "shear":
        return g.shear_map(cfg.shear_alpha, T)
    if kind == "wavy_shear":
        return g.wavy_shear_map(cfg.shear_alpha, T)
    return g.user_map_from_expressions((cfg.y1_expr, cfg.y2_expr),
                                       (cfg.x1_expr, cfg.x2_expr), T)
