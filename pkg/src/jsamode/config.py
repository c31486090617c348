"""Typed pipeline configuration read from INI files.

Grammar: ``[section]`` headers, ``key = value`` lines, ``#`` or ``;`` comments.
Every key belongs to a known section and is type-checked; unknown sections
or keys are errors carrying the line number. ``[run] preset = NAME`` starts
from a named preset, otherwise the keys flagged *required* must be given.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
import re
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional


class ConfigError(ValueError):
    pass


def _f(default, doc, required=False, choices=None):
    return field(default=default, metadata={"doc": doc, "required": required, "choices": choices})


@dataclass
class SourceSection:
    pump_bandwidth: float = _f(2.2627417e-3, "pump amplitude std (rad/fs)")
    phasematch_bandwidth: float = _f(1.6e-3, "phase-matching amplitude std (rad/fs)")
    phasematch_angle_deg: float = _f(-45.0, "phase-matching ridge angle (deg)")
    phasematch_shape: str = _f("gaussian", "phase-matching profile", choices=("gaussian", "sinc"))
    pump_gdd: float = _f(0.0, "pump group-delay dispersion (fs^2)")
    signal_wavelength: float = _f(1550.0, "signal center (nm)")
    herald_wavelength: float = _f(1550.0, "herald center (nm)")


@dataclass
class GridSection:
    n_bins: int = _f(128, "bins per frequency axis")
    span: float = _f(9.3e-3, "full grid span (rad/fs)")


@dataclass
class ReferenceSection:
    width: float = _f(3.0e-3, "Gaussian reference amplitude std (rad/fs)")
    mean_photons: float = _f(0.0125, "reference photons per pulse")
    gdd: float = _f(0.0, "reference group-delay dispersion (fs^2)")
    spectrum_file: str = _f("", "reference mode CSV used by reconstruct (empty: <out>/reference.csv)")


@dataclass
class MeasurementSection:
    mode: str = _f("heralded", "measurement scheme", True, ("heralded", "seeded", "unheralded"))
    statistics: str = _f("single_photon", "signal photon statistics", True,
                         ("single_photon", "coherent", "thermal"))
    mean_photons: float = _f(1.0, "signal photons per pulse (coherent/thermal)")
    tau: float = _f(1.0e4, "reference delay (fs)", True)
    seed_frequency_thz: float = _f(192.0, "seed frequency for seeded mode (THz)")
    events: int = _f(360000, "sampled events per histogram")
    background: float = _f(0.0, "flat expected background per bin")


@dataclass
class DetectorSection:
    dispersion: float = _f(-997.0, "DCF dispersion (ps/nm)")
    jitter_fwhm: float = _f(40.0, "timing jitter FWHM (ps)")
    efficiency: float = _f(1.0, "detection efficiency")
    rep_period: float = _f(12.5, "laser repetition period (ns)")
    blur: bool = _f(True, "apply detector spectral blur to sampled histograms")


@dataclass
class TagsSection:
    enabled: bool = _f(False, "write synthetic time-tag streams")
    rate: float = _f(100.0, "detected coincidence rate (1/s)")
    duration: float = _f(3600.0, "acquisition time (s)")
    singles_c: float = _f(0.0, "uncorrelated singles on output c (1/s)")
    singles_d: float = _f(0.0, "uncorrelated singles on output d (1/s)")
    singles_h: float = _f(0.0, "uncorrelated singles on the herald (1/s)")
    window: float = _f(0.0, "coincidence half-window (ps); 0 picks half the pulse period minus 100 ps")


@dataclass
class ReconstructionSection:
    filter_shape: str = _f("tukey", "Fourier window", choices=("tukey", "gaussian"))
    filter_width: float = _f(0.0, "window half-width or sigma (fs); 0 picks the default for tau")
    taper: float = _f(0.4, "Tukey taper fraction")
    threshold: float = _f(0.05, "reference division threshold (fraction of peak)")
    delay: str = _f("estimate", "delay source", choices=("estimate", "config"))
    min_slice_fraction: float = _f(1e-3, "skip herald slices below this fraction of the largest")


@dataclass
class RunSection:
    preset: str = _f("", "preset to start from")
    seed: int = _f(1, "master random seed")
    threads: int = _f(1, "worker threads")


SECTIONS = {
    "run": RunSection,
    "source": SourceSection,
    "grid": GridSection,
    "reference": ReferenceSection,
    "measurement": MeasurementSection,
    "detector": DetectorSection,
    "tags": TagsSection,
    "reconstruction": ReconstructionSection,
}


@dataclass
class PipelineConfig:
    run: RunSection = field(default_factory=RunSection)
    source: SourceSection = field(default_factory=SourceSection)
    grid: GridSection = field(default_factory=GridSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    measurement: MeasurementSection = field(default_factory=MeasurementSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    tags: TagsSection = field(default_factory=TagsSection)
    reconstruction: ReconstructionSection = field(default_factory=ReconstructionSection)

    def to_ini(self, comments: bool = False) -> str:
        out = []
        for name in SECTIONS:
            sec = getattr(self, name)
            out.append(f"[{name}]")
            for fl in fields(sec):
                if comments:
                    meta = fl.metadata
                    note = meta["doc"]
                    if meta.get("choices"):
                        note += f"; one of {', '.join(meta['choices'])}"
                    if meta.get("required"):
                        note += "; required without a preset"
                    out.append(f"# {note}")
                out.append(f"{fl.name} = {_fmt(getattr(sec, fl.name))}")
            out.append("")
        return "\n".join(out)

    def hash(self) -> str:
        """Hash of the resolved configuration; the preset label and thread count are excluded."""
        c = dataclasses.replace(self, run=RunSection(preset="", seed=self.run.seed, threads=1))
        return hashlib.sha256(c.to_ini().encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw: str, typ, name: str):
    raw = raw.strip()
    if typ is bool or typ == "bool":
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int or typ == "int":
        return int(raw)
    if typ is float or typ == "float":
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError(f"expected a finite number, got {raw!r}")
        return v
    return raw


_C = 299792.458  # nm·THz


def wavelength_for_thz(f_thz: float) -> float:
    return _C / f_thz


def _preset_values() -> Dict[str, Dict[str, Dict[str, object]]]:
    seeded_herald = wavelength_for_thz(192.0)
    return {
        "unchirped-heralded": {
            "tags": {"enabled": True},
        },
        "chirped-heralded": {
            "source": {"pump_gdd": 2.0e5},
            "tags": {"enabled": True},
        },
        "seeded-coherent": {
            "source": {"herald_wavelength": seeded_herald},
            "reference": {"mean_photons": 1.0},
            "measurement": {"mode": "seeded", "statistics": "coherent", "mean_photons": 1.0,
                            "events": 100000},
        },
        "unseeded-thermal": {
            "reference": {"mean_photons": 1.0},
            "measurement": {"mode": "unheralded", "statistics": "thermal", "mean_photons": 1.0,
                            "events": 100000},
        },
    }


PRESETS = tuple(_preset_values())


def preset(name: str) -> PipelineConfig:
    vals = _preset_values()
    if name not in vals:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    cfg = PipelineConfig()
    cfg.run.preset = name
    for sec, kv in vals[name].items():
        for k, v in kv.items():
            setattr(getattr(cfg, sec), k, v)
    return cfg


def _line_of(text: str, section: str, key: Optional[str] = None) -> int:
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return i
            continue
        if key is not None and cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return 0


def parse_config(text: str, source: str = "<config>", base: Optional[str] = None) -> PipelineConfig:
    """Parse INI text into a validated :class:`PipelineConfig`.

    ``base`` names a preset to start from (overridden by ``[run] preset``).
    """
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#", ";"), default_section="\0")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e
    errors: List[str] = []
    for sec in cp.sections():
        if sec not in SECTIONS:
            errors.append(f"{source}:{_line_of(text, sec)}: unknown section [{sec}]")
    if errors:
        raise ConfigError("\n".join(errors))

    name = cp.get("run", "preset", fallback="").strip() or (base or "")
    cfg = preset(name) if name else PipelineConfig()
    given = set()
    for sec in cp.sections():
        obj = getattr(cfg, sec)
        known = {fl.name: fl for fl in fields(obj)}
        for key, raw in cp.items(sec):
            line = _line_of(text, sec, key)
            if key not in known:
                errors.append(f"{source}:{line}: unknown key '{key}' in [{sec}]")
                continue
            fl = known[key]
            try:
                val = _parse_value(raw, fl.type, key)
            except ValueError as e:
                errors.append(f"{source}:{line}: [{sec}] {key}: {e}")
                continue
            choices = fl.metadata.get("choices")
            if choices and val not in choices:
                errors.append(f"{source}:{line}: [{sec}] {key}: {val!r} not in {choices}")
                continue
            setattr(obj, key, val)
            given.add((sec, key))
    if not name:
        for sec, cls in SECTIONS.items():
            for fl in fields(cls):
                if fl.metadata.get("required") and (sec, fl.name) not in given:
                    errors.append(f"{source}: missing required key '{fl.name}' in [{sec}]")
    if errors:
        raise ConfigError("\n".join(errors))
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    s, g, m = cfg.source, cfg.grid, cfg.measurement
    checks = [
        (s.pump_bandwidth > 0, "[source] pump_bandwidth must be positive"),
        (s.phasematch_bandwidth > 0, "[source] phasematch_bandwidth must be positive"),
        (s.signal_wavelength > 0 and s.herald_wavelength > 0, "[source] wavelengths must be positive"),
        (g.n_bins >= 8, "[grid] n_bins must be at least 8"),
        (g.span > 0, "[grid] span must be positive"),
        (cfg.reference.width > 0, "[reference] width must be positive"),
        (cfg.reference.mean_photons > 0, "[reference] mean_photons must be positive"),
        (m.mean_photons > 0, "[measurement] mean_photons must be positive"),
        (m.events > 0, "[measurement] events must be positive"),
        (m.background >= 0, "[measurement] background must be non-negative"),
        (m.seed_frequency_thz > 0, "[measurement] seed_frequency_thz must be positive"),
        (0 < cfg.detector.efficiency <= 1, "[detector] efficiency must lie in (0, 1]"),
        (cfg.detector.rep_period > 0, "[detector] rep_period must be positive"),
        (cfg.detector.jitter_fwhm >= 0, "[detector] jitter_fwhm must be non-negative"),
        (cfg.tags.rate >= 0 and cfg.tags.duration > 0, "[tags] rate/duration invalid"),
        (0 < cfg.reconstruction.threshold < 1, "[reconstruction] threshold must lie in (0, 1)"),
        (cfg.run.threads >= 1, "[run] threads must be at least 1"),
        (not (m.mode == "heralded" and m.statistics != "single_photon"),
         "[measurement] heralded mode requires single_photon statistics"),
        (not (m.mode == "seeded" and m.statistics != "coherent"),
         "[measurement] seeded mode requires coherent statistics"),
        (not (cfg.tags.enabled and m.mode != "heralded"),
         "[tags] synthetic tag streams are only produced for heralded mode"),
    ]
    errs = [msg for ok, msg in checks if not ok]
    if errs:
        raise ConfigError("\n".join(errs))


def load_config(path: Optional[str] = None, preset_name: Optional[str] = None) -> PipelineConfig:
    if path is None:
        if preset_name is None:
            raise ConfigError("no configuration: pass --config or --preset")
        cfg = preset(preset_name)
        validate(cfg)
        return cfg
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, source=str(path), base=preset_name)
