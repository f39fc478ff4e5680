"""Run configuration: TOML (or JSON) files validated against ``schemas/config.schema.json``."""

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from kflows.geometry import SpaceSpec, to_complex


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def load_schema(name):
    text = resources.files("kflows").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_output(doc, name):
    jsonschema.validate(doc, load_schema(name))


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    t_max: float = 50.0
    max_steps: int = 500_000


@dataclass(frozen=True)
class OutputConfig:
    path: str = None
    stride: int = 1
    format: str = "csv"


@dataclass(frozen=True)
class RunConfig:
    space: SpaceSpec
    q: float = 0.0
    hamiltonian: str = None
    flow: str = "hamilton"
    z0: np.ndarray = None
    zdot0: np.ndarray = None
    unit_speed: bool = False
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)
    reconstruct: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def with_tolerances(self, rtol=None, atol=None):
        integ = IntegratorConfig(
            rtol if rtol is not None else self.integrator.rtol,
            atol if atol is not None else self.integrator.atol,
            self.integrator.t_max,
            self.integrator.max_steps,
        )
        return _replace(self, integrator=integ)


def _replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


def read_document(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    if path.suffix.lower() == ".json":
        try:
            return json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        return tomli.loads(data.decode())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc


def _chart_vector(values, n, name):
    if values is None:
        return None
    if len(values) != 2 * n:
        raise ConfigError(f"initial.{name} needs {2 * n} reals (real chart), got {len(values)}")
    return to_complex(np.asarray(values, dtype=float))


def from_document(doc):
    """Validate a parsed document and build a :class:`RunConfig`."""
    try:
        jsonschema.validate(doc, load_schema("config"))
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    sp = doc["space"]
    try:
        space = SpaceSpec(sp["n"], sp["k"], sp.get("epsilon"))
    except ValueError as exc:
        raise ConfigError(f"config error at space: {exc}") from None
    fld = doc.get("field", {})
    if "q" in fld and "hamiltonian" in fld:
        raise ConfigError("config error at field: give either q or hamiltonian, not both")
    init = doc.get("initial", {})
    z0 = _chart_vector(init.get("z"), space.n, "z")
    zdot0 = _chart_vector(init.get("zdot"), space.n, "zdot")
    if z0 is not None and not space.admissible(z0):
        raise ConfigError(f"config error at initial.z: point is outside the chart (1 + S = {1 + space.S(z0):.6g})")
    if init.get("unit_speed") and zdot0 is None:
        raise ConfigError("config error at initial: unit_speed needs zdot")
    integ = IntegratorConfig(**doc.get("integrator", {}))
    out = OutputConfig(**doc.get("output", {}))
    return RunConfig(
        space=space,
        q=float(fld.get("q", 0.0)),
        hamiltonian=fld.get("hamiltonian"),
        flow=fld.get("flow", "hamilton"),
        z0=z0,
        zdot0=zdot0,
        unit_speed=bool(init.get("unit_speed", False)),
        integrator=integ,
        output=out,
        sweep=dict(doc.get("sweep", {})),
        check=dict(doc.get("check", {})),
        reconstruct=dict(doc.get("reconstruct", {})),
        compare=dict(doc.get("compare", {})),
        raw=doc,
    )


def load(path):
    return from_document(read_document(path))
