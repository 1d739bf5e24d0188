"""Run configuration: flat ``key = value`` files plus command-line overrides.

Values are resolved in layers, later layers winning::

    bulk defaults < experiment catalog < command defaults < config file < --set

Keys carry a section prefix (``model.``, ``grid.``, ``time.``, ``solver.``,
``output.``, ``convergence.``); ``experiment``, ``initial`` and ``seed`` are
top-level.  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import ConfigError, QTensorError
from .experiments import CATALOG, CONVERGENCE_TOLERANCE, INITIAL_CONDITIONS, ExperimentSpec, snap_times
from .linsolve import SolverConfig
from .potential import BULK_DEFAULTS, ModelParams

log = logging.getLogger(__name__)

__all__ = ["RunConfig", "parse_config", "read_config_file", "COMMAND_DEFAULTS", "KNOWN_KEYS"]

_MODEL_KEYS = ("a", "b", "c", "A0", "M", "L1", "L2", "L3", "dim")
_TIME_KEYS = ("time.dt", "time.steps", "time.T")

KNOWN_KEYS = {
    "experiment": str,
    "initial": str,
    "seed": int,
    **{f"model.{k}": (int if k == "dim" else float) for k in _MODEL_KEYS},
    "grid.n": int,
    "grid.side": float,
    "time.dt": float,
    "time.steps": int,
    "time.T": float,
    "solver.tolerance": float,
    "solver.max_iterations": int,
    "solver.preconditioner": str,
    "output.dir": str,
    "output.snapshots": "floats",
    "output.deterministic": bool,
    "convergence.scale": str,
    "convergence.ladder": "ints",
    "convergence.reference_n": int,
    "convergence.reference_steps": int,
}

# shorthand accepted on input; the 2D experiments fold all elastic terms into L1
_ALIASES = {"model.L": "model.L1"}

_SCALES = {
    "convergence-space": {
        "desk": {"convergence.ladder": "10,20,40", "convergence.reference_n": "160", "convergence.reference_steps": "1600"},
        "full": {"convergence.ladder": "10,20,40,80", "convergence.reference_n": "400", "convergence.reference_steps": "4000"},
    },
    "convergence-time": {
        "desk": {"grid.n": "50", "convergence.ladder": "40,80,160,320", "convergence.reference_steps": "1280"},
        "full": {"grid.n": "100", "convergence.ladder": "40,80,160,320,640,1280", "convergence.reference_steps": "8000"},
    },
}

COMMAND_DEFAULTS = {
    "run": {},
    "convergence-space": {"experiment": "example1", "solver.tolerance": repr(CONVERGENCE_TOLERANCE)},
    "convergence-time": {"experiment": "example1", "solver.tolerance": repr(CONVERGENCE_TOLERANCE)},
    "verify": {},
}


@dataclass(frozen=True)
class _Value:
    raw: str
    origin: str  # "default", "catalog", "command", or the source line

    @property
    def user_given(self) -> bool:
        return self.origin not in ("default", "catalog", "command")


@dataclass
class RunConfig:
    spec: ExperimentSpec
    solver: SolverConfig
    out_dir: Optional[Path]
    snapshots: Tuple[float, ...]
    deterministic: bool = True
    seed: int = 0
    ladder: Tuple[int, ...] = ()
    reference_n: Optional[int] = None
    reference_steps: Optional[int] = None
    resolved: Dict[str, str] = field(default_factory=dict)
    origins: Dict[str, str] = field(default_factory=dict)

    def header_lines(self) -> List[str]:
        """``key = value`` for every resolved setting, sorted by key."""
        return [f"{k} = {self.resolved[k]}" for k in sorted(self.resolved)]


def _convert(key: str, raw: str, line: str):
    kind = KNOWN_KEYS[key]
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(s) for s in raw.split(",") if s.strip())
        if kind == "ints":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        if kind is int:
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if kind is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        return raw.strip()
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for {key}", line=line) from None


def _split(text: str, line: str) -> Tuple[str, str]:
    key, sep, value = text.partition("=")
    key, value = key.strip(), value.strip()
    if not sep or not key:
        raise ConfigError("expected 'key = value'", line=line)
    key = _ALIASES.get(key, key)
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown key {key!r}", line=line)
    _convert(key, value, line)
    return key, value


def read_config_file(path) -> List[Tuple[str, str, str]]:
    """``(key, raw value, origin)`` triples in file order."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        origin = f"{path}:{lineno}: {stripped}"
        key, value = _split(stripped, origin)
        out.append((key, value, origin))
    return out


def _catalog_layer(name: str) -> Dict[str, str]:
    spec = CATALOG[name]
    p = spec.params
    layer = {f"model.{k}": repr(getattr(p, k)) for k in _MODEL_KEYS}
    layer.update(
        {
            "initial": spec.initial_condition,
            "grid.n": str(spec.n_cells),
            "grid.side": repr(spec.side),
            "time.steps": str(spec.steps),
            "time.T": repr(spec.T),
        }
    )
    if spec.snapshot_times:
        layer["output.snapshots"] = ",".join(repr(t) for t in spec.snapshot_times)
    return layer


def _resolve_time(values: Dict[str, _Value]) -> Tuple[float, int, float]:
    given = {k: values[k] for k in _TIME_KEYS if k in values}
    user = {k: v for k, v in given.items() if v.user_given}
    conv = {k: _convert(k, v.raw, v.origin) for k, v in given.items()}
    if len(user) == 3:
        dt, steps, T = conv["time.dt"], conv["time.steps"], conv["time.T"]
        if not math.isclose(steps * dt, T, rel_tol=1e-9):
            raise ConfigError(f"T = {T} does not equal steps * dt = {steps} * {dt}", line=user["time.T"].origin)
        return T / steps, steps, T
    # fill in from the user's keys first, then the lower layers
    pick = [k for k in _TIME_KEYS if k in user] + [k for k in ("time.T", "time.steps", "time.dt") if k in given and k not in user]
    chosen = pick[:2]
    if len(chosen) < 2:
        raise ConfigError("two of time.dt, time.steps, time.T are required")
    dt = conv.get("time.dt") if "time.dt" in chosen else None
    steps = conv.get("time.steps") if "time.steps" in chosen else None
    T = conv.get("time.T") if "time.T" in chosen else None
    for name, v in (("time.dt", dt), ("time.T", T)):
        if v is not None and v <= 0:
            raise ConfigError(f"{name} must be positive, got {v}", line=given[name].origin)
    if steps is not None and steps < 1:
        raise ConfigError(f"time.steps must be >= 1, got {steps}", line=given["time.steps"].origin)
    if dt is None:
        dt = T / steps
    elif steps is None:
        ratio = T / dt
        steps = int(round(ratio))
        if steps < 1 or not math.isclose(ratio, steps, rel_tol=1e-9):
            raise ConfigError(f"T = {T} is not an integer multiple of dt = {dt}", line=given["time.dt"].origin)
        dt = T / steps
    else:
        T = steps * dt
    return dt, steps, T


def parse_config(
    path=None,
    overrides: Sequence[str] = (),
    command: str = "run",
    out_dir=None,
    deterministic: Optional[bool] = None,
    seed: Optional[int] = None,
) -> RunConfig:
    """Resolve a :class:`RunConfig` from an optional file and ``key=value`` overrides."""
    user: List[Tuple[str, str, str]] = []
    if path is not None:
        user += read_config_file(path)
    for item in overrides:
        origin = f"--set {item}"
        key, value = _split(item, origin)
        user.append((key, value, origin))

    values: Dict[str, _Value] = {f"model.{k}": _Value(repr(float(v)), "default") for k, v in BULK_DEFAULTS.items()}
    cmd_defaults = dict(COMMAND_DEFAULTS.get(command, {}))

    experiment = cmd_defaults.get("experiment")
    for key, value, origin in user:
        if key == "experiment":
            experiment, exp_origin = value, origin
    if experiment is not None:
        if experiment not in CATALOG:
            bad = exp_origin if any(k == "experiment" for k, _, _ in user) else None
            raise ConfigError(f"unknown experiment {experiment!r}; known: {sorted(CATALOG)}", line=bad)
        values.update({k: _Value(v, "catalog") for k, v in _catalog_layer(experiment).items()})
        values["experiment"] = _Value(experiment, "catalog")

    scale = "desk"
    for key, value, origin in user:
        if key == "convergence.scale":
            scale = value
            if scale not in ("desk", "full"):
                raise ConfigError("convergence.scale must be 'desk' or 'full'", line=origin)
    cmd_defaults.update(_SCALES.get(command, {}).get(scale, {}))
    values.update({k: _Value(v, "command") for k, v in cmd_defaults.items()})

    for key, value, origin in user:
        if key in values and values[key].user_given:
            log.info("%s: %s overrides %s", key, origin, values[key].origin)
        values[key] = _Value(value, origin)

    def get(key, default=None):
        v = values.get(key)
        return default if v is None else _convert(key, v.raw, v.origin)

    def origin_of(key):
        v = values.get(key)
        return None if v is None else v.origin

    if "grid.n" not in values:
        raise ConfigError("missing grid size: set grid.n (cells per axis) or choose an experiment")
    n = get("grid.n")
    side = get("grid.side", 1.0)
    if n < 2:
        raise ConfigError(f"grid.n must be >= 2 (non-positive interior count), got {n}", line=origin_of("grid.n"))
    if side <= 0:
        raise ConfigError(f"grid.side must be positive, got {side}", line=origin_of("grid.side"))
    dt, steps, T = _resolve_time(values)

    initial = get("initial")
    if initial is None:
        raise ConfigError("missing initial condition: set 'initial' or choose an experiment")
    if initial not in INITIAL_CONDITIONS:
        raise ConfigError(f"unknown initial condition {initial!r}; known: {sorted(INITIAL_CONDITIONS)}", line=origin_of("initial"))

    model = {k: get(f"model.{k}") for k in _MODEL_KEYS if f"model.{k}" in values}
    try:
        params = ModelParams(dt=dt, **model)
        snaps_req = get("output.snapshots", ())
        if not values.get("output.snapshots", _Value("", "default")).user_given:
            # catalog schedules follow the catalog horizon; drop what a shorter run cannot reach
            kept = tuple(t for t in snaps_req if t <= T * (1 + 1e-12))
            if kept != tuple(snaps_req):
                log.info("dropping default snapshot times beyond T = %r", T)
            snaps_req = kept
        spec = ExperimentSpec(
            name=experiment or "custom",
            initial_condition=initial,
            side=side,
            n_cells=n,
            steps=steps,
            T=T,
            params=params,
            snapshot_times=tuple(snaps_req),
        )
        snaps = tuple(sorted(snap_times(snaps_req, dt, T).values()))
        solver = SolverConfig(
            rel_tolerance=get("solver.tolerance", SolverConfig.rel_tolerance),
            max_iterations=get("solver.max_iterations"),
            preconditioner=get("solver.preconditioner", SolverConfig.preconditioner),
        )
    except ConfigError:
        raise
    except QTensorError as exc:
        culprit = next((o for k, _, o in reversed(user) if k.split(".")[-1] in str(exc).split()[0:1]), None)
        raise ConfigError(str(exc), line=culprit) from None

    for k in ("a", "b", "c", "A0", "M", "L1", "L2", "L3", "dim"):
        key = f"model.{k}"
        o = origin_of(key)
        if o is None or o == "default":
            log.info("%s = %r (defaulted)", key, getattr(params, k))
        else:
            log.info("%s = %r (%s)", key, getattr(params, k), o)
    log.info("model.dt = %r (derived from time settings)", params.dt)

    if deterministic is None:
        deterministic = get("output.deterministic", False)
    if seed is None:
        seed = get("seed", 0)
    if out_dir is None:
        out_dir = get("output.dir")
    ladder = tuple(get("convergence.ladder", ()))

    resolved = {k: v.raw for k, v in values.items()}
    resolved.update(
        {
            "time.dt": repr(dt),
            "time.steps": str(steps),
            "time.T": repr(T),
            "output.snapshots": ",".join(repr(t) for t in snaps),
            "output.deterministic": str(bool(deterministic)).lower(),
            "seed": str(seed),
            "solver.tolerance": repr(solver.rel_tolerance),
            "solver.preconditioner": solver.preconditioner,
        }
    )
    for k in _MODEL_KEYS:
        resolved[f"model.{k}"] = repr(getattr(params, k))
    resolved.pop("output.dir", None)

    return RunConfig(
        spec=spec,
        solver=solver,
        out_dir=Path(out_dir) if out_dir is not None else None,
        snapshots=snaps,
        deterministic=bool(deterministic),
        seed=int(seed),
        ladder=ladder,
        reference_n=get("convergence.reference_n"),
        reference_steps=get("convergence.reference_steps"),
        resolved=resolved,
        origins={k: v.origin for k, v in values.items()},
    )
