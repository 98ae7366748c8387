"""Experiment configuration: a flat TOML file, validated before any compute."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

FIELD_KINDS = ("generator", "raster", "spe10")
GENERATORS = ("uniform", "inclusions", "channels", "layered")


@dataclass
class ExperimentConfig:
    T: int
    n: int
    field_kind: str = "generator"
    generator: str = "uniform"
    contrast: float = 1.0
    seed: int = 0
    raster_path: str | None = None
    raster_rows: int | None = None
    raster_cols: int | None = None
    spe10_layer: int = 0
    spe10_rows: int = 220
    spe10_cols: int = 60
    boxes: list = field(default_factory=list)
    J: int = 3
    layers_offline: int = 2
    layers_online: int = 2
    theta: float = 1.0
    tol: float = 1e-12
    max_iterations: int = 4
    max_dof: int | None = None
    kappa_tilde_nodes: str = "all"
    indicator_nodes: str = "interior"
    lumped_mass: bool = False
    compute_reference: bool = True
    basis_cache: str | None = None
    out_dir: str = "out"
    workers: int = 1

    def validate(self):
        if self.T < 1 or self.n < 1:
            raise ConfigError(f"mesh requires T >= 1 and n >= 1, got T={self.T}, n={self.n}")
        if self.field_kind not in FIELD_KINDS:
            raise ConfigError(f"field.kind must be one of {FIELD_KINDS}")
        if self.field_kind == "generator":
            if self.generator not in GENERATORS:
                raise ConfigError(f"field.generator must be one of {GENERATORS}")
            if self.contrast < 1:
                raise ConfigError("field.contrast must be >= 1")
        if self.field_kind in ("raster", "spe10") and not self.raster_path:
            raise ConfigError("field.path is required for raster and spe10 fields")
        if self.field_kind == "raster" and (self.raster_rows is None
                                            or self.raster_cols is None):
            raise ConfigError("field.rows and field.cols are required for rasters")
        if not (1 <= self.J <= self.n ** 2):
            raise ConfigError(f"space.J must be in [1, n^2] = [1, {self.n ** 2}]")
        if self.layers_offline < 1 or self.layers_online < 1:
            raise ConfigError("oversampling layer counts must be >= 1")
        if not (0.0 < self.theta <= 1.0):
            raise ConfigError("online.theta must be in (0, 1]")
        if self.max_iterations < 0:
            raise ConfigError("online.max_iterations must be >= 0")
        if self.kappa_tilde_nodes not in ("all", "interior"):
            raise ConfigError("pou.kappa_tilde_nodes must be 'all' or 'interior'")
        if self.indicator_nodes not in ("all", "interior"):
            raise ConfigError("pou.indicator_nodes must be 'all' or 'interior'")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")
        for box in self.boxes:
            if len(box) != 5:
                raise ConfigError(f"source box {box!r} must be [x0, y0, x1, y1, value]")
        return self


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return config_from_dict(data, path)


def config_from_dict(data, path="<dict>"):
    mesh = data.get("mesh", {})
    fld = data.get("field", {})
    src = data.get("source", {})
    space = data.get("space", {})
    online = data.get("online", {})
    pou = data.get("pou", {})
    run = data.get("run", {})
    try:
        cfg = ExperimentConfig(
            T=int(mesh["T"]), n=int(mesh["n"]),
            field_kind=str(fld.get("kind", "generator")),
            generator=str(fld.get("generator", "uniform")),
            contrast=float(fld.get("contrast", 1.0)),
            seed=int(fld.get("seed", 0)),
            raster_path=fld.get("path"),
            raster_rows=int(fld["rows"]) if "rows" in fld else None,
            raster_cols=int(fld["cols"]) if "cols" in fld else None,
            spe10_layer=int(fld.get("layer", 0)),
            spe10_rows=int(fld.get("rows", 220) or 220),
            spe10_cols=int(fld.get("cols", 60) or 60),
            boxes=[list(map(float, b)) for b in src.get("boxes", [])],
            J=int(space.get("J", 3)),
            layers_offline=int(space.get("layers_offline", 2)),
            layers_online=int(space.get("layers_online", 2)),
            theta=float(online.get("theta", 1.0)),
            tol=float(online.get("tol", 1e-12)),
            max_iterations=int(online.get("max_iterations", 4)),
            max_dof=int(online["max_dof"]) if "max_dof" in online else None,
            kappa_tilde_nodes=str(pou.get("kappa_tilde_nodes", "all")),
            indicator_nodes=str(pou.get("indicator_nodes", "interior")),
            lumped_mass=bool(run.get("lumped_mass", False)),
            compute_reference=bool(run.get("compute_reference", True)),
            basis_cache=run.get("basis_cache"),
            out_dir=str(run.get("out_dir", "out")),
            workers=int(run.get("workers", 1)),
        )
    except KeyError as e:
        raise ConfigError(f"{path}: missing required key {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None
    return cfg.validate()


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_config(cfg, path):
    """Regenerate the resolved configuration as TOML (round-trips through
    load_config)."""
    lines = ["[mesh]", f"T = {cfg.T}", f"n = {cfg.n}", "", "[field]",
             f'kind = {_toml_value(cfg.field_kind)}']
    if cfg.field_kind == "generator":
        lines += [f"generator = {_toml_value(cfg.generator)}",
                  f"contrast = {_toml_value(cfg.contrast)}",
                  f"seed = {cfg.seed}"]
    else:
        lines += [f"path = {_toml_value(cfg.raster_path)}"]
        if cfg.field_kind == "raster":
            if cfg.raster_rows:
                lines += [f"rows = {cfg.raster_rows}", f"cols = {cfg.raster_cols}"]
        else:
            lines += [f"layer = {cfg.spe10_layer}",
                      f"rows = {cfg.spe10_rows}", f"cols = {cfg.spe10_cols}"]
    lines += ["", "[source]",
              "boxes = [" + ", ".join(
                  "[" + ", ".join(repr(x) for x in box) + "]"
                  for box in cfg.boxes) + "]"]
    lines += ["", "[space]", f"J = {cfg.J}",
              f"layers_offline = {cfg.layers_offline}",
              f"layers_online = {cfg.layers_online}"]
    lines += ["", "[online]", f"theta = {_toml_value(cfg.theta)}",
              f"tol = {_toml_value(cfg.tol)}",
              f"max_iterations = {cfg.max_iterations}"]
    if cfg.max_dof is not None:
        lines += [f"max_dof = {cfg.max_dof}"]
    lines += ["", "[pou]",
              f"kappa_tilde_nodes = {_toml_value(cfg.kappa_tilde_nodes)}",
              f"indicator_nodes = {_toml_value(cfg.indicator_nodes)}"]
    lines += ["", "[run]",
              f"lumped_mass = {_toml_value(cfg.lumped_mass)}",
              f"compute_reference = {_toml_value(cfg.compute_reference)}",
              f"out_dir = {_toml_value(cfg.out_dir)}",
              f"workers = {cfg.workers}"]
    if cfg.basis_cache:
        lines += [f"basis_cache = {_toml_value(cfg.basis_cache)}"]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
