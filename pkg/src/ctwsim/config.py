"""INI-style simulation configuration.

Keys carry their units in the documentation below; lengths are in mm,
times in s and temperatures in degC throughout.

.. code-block:: ini

    [mesh]      nx, ny, nz, Lx, Ly, Lz
    [time]      dt, t_end, t_heat, t_load
    [material]  table (path or "bundled"), plasticity, thermoelastic_heating,
                plastic_dissipation
    [pool]      a, b, x0, y0 (default Ly/2), v_weld (mm/s), theta_liq
                (default: table liquidus)
    [traces]    source (synthetic | file | none), path, strain_rate (1/s),
                max_strain, gauge (default Ly), n_x, n_z, dt_src,
                thermal_amplitude, thermal_length
    [solver]    linear (schwarz | direct), px, py, pz, overlap, levels, coarse,
                restart, rtol, atol, max_iter, recycling, newton_tol,
                newton_max_iter, divergence_factor, line_search
    [output]    dir, qoi_every, snapshot_every, checkpoint_times,
                roi_preset, roi_width, roi_height, roi_offset, gw,
                cross_section_x
    [run]       threads
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .material import bundled_table_path
from .melt_pool import WELD_SPEED_MM_S
from .postproc import ROI_PRESETS
from .schwarz import COARSE_VARIANTS

DEFAULTS = {
    "mesh": {"nx": "400", "ny": "18", "nz": "4", "Lx": "100.0", "Ly": "4.44", "Lz": "1.0"},
    "time": {"dt": "0.001", "t_end": "2.4", "t_heat": "0.1", "t_load": "1.9"},
    "material": {
        "table": "bundled",
        "plasticity": "true",
        "thermoelastic_heating": "true",
        "plastic_dissipation": "false",
    },
    "pool": {
        "a": "1.5",
        "b": "0.45",
        "x0": "5.0",
        "y0": "",
        "v_weld": repr(WELD_SPEED_MM_S),
        "theta_liq": "",
    },
    "traces": {
        "source": "synthetic",
        "path": "",
        "strain_rate": "0.06",
        "max_strain": "0.025",
        "gauge": "",
        "n_x": "21",
        "n_z": "2",
        "dt_src": "0.01",
        "thermal_amplitude": "0.0",
        "thermal_length": "5.0",
    },
    "solver": {
        "linear": "schwarz",
        "px": "8",
        "py": "1",
        "pz": "1",
        "overlap": "1",
        "levels": "2",
        "coarse": "gdsw-rgdsw",
        "restart": "100",
        "rtol": "1e-6",
        "atol": "1e-10",
        "max_iter": "2000",
        "recycling": "true",
        "newton_tol": "1e-3",
        "newton_max_iter": "25",
        "divergence_factor": "1e8",
        "line_search": "false",
    },
    "output": {
        "dir": "ctwsim_out",
        "qoi_every": "1",
        "snapshot_every": "0",
        "checkpoint_times": "",
        "roi_preset": "physical",
        "roi_width": "",
        "roi_height": "",
        "roi_offset": "3.75",
        "gw": "",
        "cross_section_x": "35.0",
    },
    "run": {"threads": "1"},
}

# sections whose keys must match for a checkpoint to be reusable
HASHED_SECTIONS = ("mesh", "material", "pool")


class ConfigError(ValueError):
    pass


@dataclass
class SimulationConfig:
    raw: dict  # section -> key -> string
    path: Path | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, section: str, key: str) -> str:
        try:
            return self.raw[section][key]
        except KeyError:
            raise ConfigError(f"missing key [{section}] {key}") from None

    def _typed(self, section, key, conv, what):
        v = self.get(section, key)
        try:
            return conv(v)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {v!r} is not a valid {what}") from None

    def int(self, section, key) -> int:
        return self._typed(section, key, int, "integer")

    def float(self, section, key) -> float:
        return self._typed(section, key, float, "number")

    def opt_float(self, section, key):
        v = self.get(section, key).strip()
        return None if v == "" else self.float(section, key)

    def bool(self, section, key) -> bool:
        v = self.get(section, key).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} = {v!r} is not a boolean")

    def floats(self, section, key) -> list[float]:
        v = self.get(section, key).strip()
        if not v:
            return []
        try:
            return [float(s) for s in v.replace(";", ",").split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {v!r} is not a list of numbers") from None

    def resolve(self, p: str) -> Path:
        path = Path(p).expanduser()
        return path if path.is_absolute() else self.base_dir / path

    def table_path(self) -> Path:
        t = self.get("material", "table").strip()
        return bundled_table_path() if t in ("", "bundled") else self.resolve(t)

    def output_dir(self) -> Path:
        return self.resolve(self.get("output", "dir"))

    def set(self, section: str, key: str, value: str) -> None:
        if section not in self.raw:
            raise ConfigError(f"unknown section [{section}]")
        if key not in self.raw[section]:
            raise ConfigError(f"unknown key [{section}] {key}")
        self.raw[section][key] = value

    def to_ini(self) -> str:
        lines = []
        for sec, kv in self.raw.items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in kv.items()]
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        """Digest of the mesh, material and pool keys plus the table file bytes."""
        h = hashlib.sha256()
        for sec in HASHED_SECTIONS:
            for k in sorted(self.raw[sec]):
                h.update(f"{sec}.{k}={self.raw[sec][k].strip()}\n".encode())
        try:
            h.update(self.table_path().read_bytes())
        except OSError as exc:
            raise ConfigError(f"cannot read material table: {exc}") from exc
        return h.hexdigest()

    def validate(self) -> None:
        for k in ("nx", "ny", "nz"):
            if self.int("mesh", k) < 1:
                raise ConfigError(f"[mesh] {k} must be >= 1")
        for k in ("Lx", "Ly", "Lz"):
            if self.float("mesh", k) <= 0:
                raise ConfigError(f"[mesh] {k} must be positive")
        dt, t_end = self.float("time", "dt"), self.float("time", "t_end")
        t_heat, t_load = self.float("time", "t_heat"), self.float("time", "t_load")
        if dt <= 0:
            raise ConfigError("[time] dt must be positive")
        if not 0 < t_heat <= t_end:
            raise ConfigError("[time] requires 0 < t_heat <= t_end")
        src = self.get("traces", "source").strip()
        if src not in ("synthetic", "file", "none"):
            raise ConfigError("[traces] source must be synthetic, file or none")
        if src == "synthetic" and not t_heat < t_load < t_end:
            raise ConfigError("[time] synthetic traces require t_heat < t_load < t_end")
        if src == "file" and not self.resolve(self.get("traces", "path")).is_file():
            raise ConfigError(f"[traces] path {self.get('traces', 'path')!r} does not exist")
        if not self.table_path().is_file():
            raise ConfigError(f"[material] table {str(self.table_path())!r} does not exist")
        if self.get("solver", "linear") not in ("schwarz", "direct"):
            raise ConfigError("[solver] linear must be schwarz or direct")
        if self.int("solver", "overlap") < 1:
            raise ConfigError("[solver] overlap must be >= 1")
        if self.int("solver", "levels") not in (1, 2):
            raise ConfigError("[solver] levels must be 1 or 2")
        if self.get("solver", "coarse") not in COARSE_VARIANTS:
            raise ConfigError(f"[solver] coarse must be one of {', '.join(COARSE_VARIANTS)}")
        for k in ("px", "py", "pz"):
            if self.int("solver", k) < 1:
                raise ConfigError(f"[solver] {k} must be >= 1")
        if self.get("output", "roi_preset") not in ROI_PRESETS:
            raise ConfigError(f"[output] roi_preset must be one of {sorted(ROI_PRESETS)}")
        if len(self.floats("output", "gw")) != 4:
            raise ConfigError("[output] gw (green window dx, dy, w, h in mm) is required")
        if self.int("run", "threads") < 1:
            raise ConfigError("[run] threads must be >= 1")


def parse_config(text: str, path: Path | None = None) -> SimulationConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc
    raw = {sec: dict(kv) for sec, kv in DEFAULTS.items()}
    for sec in cp.sections():
        if sec not in raw:
            raise ConfigError(f"unknown section [{sec}]")
        for k, v in cp.items(sec):
            if k not in raw[sec]:
                raise ConfigError(f"unknown key [{sec}] {k}")
            raw[sec][k] = v
    base = path.parent if path is not None else Path.cwd()
    return SimulationConfig(raw, path, base)


def load_config(path, overrides=()) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text, path)
    apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: SimulationConfig, overrides) -> None:
    """Apply ``section.key=value`` strings."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        cfg.set(sec, key, value.strip())
