"""Command-line pipeline: simulate, ingest, reconstruct, analyze, pipeline.

Exit codes: 0 ok, 1 configuration or precondition error, 2 corrupt data,
3 numerical failure (no sideband, underdetermined stitching, unwrap failure).
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import analysis, formats, forward, reconstruction, tags
from .config import PRESETS, ConfigError, PipelineConfig, load_config, preset
from .core import FrequencyGrid, Interferogram, Jsa, SpectralMode, gaussian_mode, thz_to_angular

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class StitchingError(ArithmeticError):
    pass


class HashMismatchError(ValueError):
    pass


# ---------------------------------------------------------------- config -> objects

@dataclass
class Setup:
    cfg: PipelineConfig
    out: Path
    threads: int
    force: bool

    @property
    def hash(self) -> str:
        return self.cfg.hash()

    def model(self) -> forward.SourceModel:
        s = self.cfg.source
        return forward.SourceModel(s.pump_bandwidth, s.phasematch_bandwidth,
                                   math.radians(s.phasematch_angle_deg), s.pump_gdd,
                                   s.signal_wavelength, s.herald_wavelength, s.phasematch_shape)

    def grids(self):
        return forward.source_grids(self.model(), self.cfg.grid.n_bins, self.cfg.grid.span)

    def reference(self, grid: FrequencyGrid) -> SpectralMode:
        r = self.cfg.reference
        return gaussian_mode(grid, r.width, gdd=r.gdd).scaled(math.sqrt(r.mean_photons))

    def detector(self) -> forward.DetectorModel:
        d = self.cfg.detector
        return forward.DetectorModel(d.dispersion, d.jitter_fwhm, d.efficiency, d.rep_period)

    def seeds(self) -> List[int]:
        return [int(x) for x in np.random.SeedSequence(self.cfg.run.seed).generate_state(8)]

    def seed_detuning(self, herald: FrequencyGrid) -> float:
        return thz_to_angular(self.cfg.measurement.seed_frequency_thz) - herald.center


class Outputs:
    """Writes files into the output directory and records them in the manifest."""

    def __init__(self, setup: Setup, step: str):
        self.setup = setup
        self.step = step
        self.files: Dict[str, bytes] = {}

    def bytes(self, name: str, data: bytes) -> Path:
        p = self.setup.out / name
        p.write_bytes(data)
        self.files[name] = data
        return p

    def text(self, name: str, text: str) -> Path:
        return self.bytes(name, text.encode())

    def close(self) -> None:
        path = self.setup.out / "manifest.json"
        man = {"config_hash": self.setup.hash, "files": {}}
        if path.exists():
            try:
                old = json.loads(path.read_text())
                if old.get("config_hash") == self.setup.hash:
                    man["files"] = old.get("files", {})
            except json.JSONDecodeError:
                pass
        for name, data in self.files.items():
            man["files"][name] = {"sha256": hashlib.sha256(data).hexdigest(),
                                  "bytes": len(data), "step": self.step}
        man["files"] = dict(sorted(man["files"].items()))
        path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def _report(h: str, body: str) -> str:
    return f"# config_hash={h}\n" + body


# ---------------------------------------------------------------- simulate

def cmd_simulate(st: Setup) -> int:
    cfg, m = st.cfg, st.cfg.measurement
    out = Outputs(st, "simulate")
    h = st.hash
    g1, g2 = st.grids()
    jsa = forward.build_jsa(st.model(), g1, g2)
    det = st.detector()
    seeds = st.seeds()
    ref1 = st.reference(g1)
    out.bytes("truth.jsab", formats.encode_jsab(g1, g2, jsa.f, h))
    out.text("reference.csv", formats.mode_to_csv(ref1, h))
    lines = [f"mode: {m.mode}", f"statistics: {m.statistics}"]

    def sample(expected: Interferogram, seed: int) -> Interferogram:
        blurred = forward.apply_detector_blur(expected, det) if cfg.detector.blur else expected
        return forward.sample_counts(blurred, m.events, seed, det.efficiency)

    if m.mode == "heralded":
        ref2 = st.reference(g2)
        out.text("reference_b.csv", formats.mode_to_csv(ref2, h))
        for tag, j, ref, sd in (("a", jsa, ref1, 0), ("b", jsa.transpose(), ref2, 1)):
            e = forward.expected_heralded_histogram(j, ref, m.tau, background=m.background)
            out.bytes(f"expected_{tag}.jsah", formats.encode_jsah(e, h))
            s = sample(e, seeds[sd])
            out.bytes(f"sampled_{tag}.jsah", formats.encode_jsah(s, h))
            if cfg.tags.enabled:
                t = cfg.tags
                rates = forward.TagRates(t.rate, (t.singles_c, t.singles_d, t.singles_h))
                stream, book = forward.synthesize_tag_stream(e, det, t.duration, rates, seeds[2 + sd])
                out.bytes(f"tags_{tag}.ttg", tags.serialize_stream(stream, h))
                lines.append(f"tags_{tag}: records={len(stream)} coincidences={book['coincidences']} "
                             f"singles={book['singles']}")
    else:
        if m.mode == "seeded":
            w = st.seed_detuning(g2)
            j = int(g2.index_of(w))
            if not 0 <= j < g2.n_bins:
                raise ConfigError("[measurement] seed_frequency_thz lies outside the herald grid")
            signal = jsa.column(j).normalize()
            stats = forward.Coherent(m.mean_photons)
            out.text("truth_mode.csv", formats.mode_to_csv(signal, h))
            lines.append(f"seed_detuning_rad_per_fs: {w!r}")
        else:
            signal = forward.Mixture.from_density(g1, jsa.marginal1())
            stats = (forward.Thermal(m.mean_photons) if m.statistics == "thermal"
                     else forward.Coherent(m.mean_photons))
            out.text("truth_mode.csv", formats.mode_to_csv(signal.modes[int(np.argmax(signal.weights))], h))
        e = forward.expected_interferogram(signal, ref1, m.tau, stats, m.background)
        out.bytes("expected.jsab", formats.encode_jsab(g1, g1, e.counts, h))
        s = sample(e, seeds[0])
        out.bytes("sampled.jsab", formats.encode_jsab(g1, g1, s.counts, h))
    out.text("simulate_report.txt", _report(h, "\n".join(lines) + "\n"))
    out.close()
    return EXIT_OK


# ---------------------------------------------------------------- ingest

def cmd_ingest(st: Setup, inputs: Optional[List[str]] = None) -> int:
    out = Outputs(st, "ingest")
    h = st.hash
    g1, g2 = st.grids()
    det = st.detector()
    paths = [Path(p) for p in inputs] if inputs else sorted(st.out.glob("tags_*.ttg"))
    if not paths:
        raise ConfigError(f"no tag files given and none found in {st.out}")
    window = st.cfg.tags.window or None
    lines = []
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"tag file not found: {p}")
        swapped = p.stem.endswith("_b")
        grids = [g2, g2, g1] if swapped else [g1, g1, g2]
        try:
            hist, rep, _ = tags.ingest_file(p, det, grids, window)
        except formats.FormatError as e:
            raise formats.FormatError(f"{p}: {e}") from None
        name = p.stem.replace("tags", "ingested", 1) if p.stem.startswith("tags") else p.stem + "_ingested"
        out.bytes(f"{name}.jsah", formats.encode_jsah(hist, h))
        lines.append(f"[{p.name}]\n{rep.text()}")
        print(f"{p.name}: {rep.events} events, {rep.binned} binned, "
              f"{rep.dropped_out_of_range} dropped out of range, "
              f"{rep.outside_window} tags outside the window", file=sys.stderr)
    out.text("ingest_report.txt", _report(h, "".join(lines)))
    out.close()
    return EXIT_OK


# ---------------------------------------------------------------- reconstruct

def _read_hist(path: Path) -> Interferogram:
    if not path.exists():
        raise FileNotFoundError(f"histogram file not found: {path}")
    g, _ = formats.read_interferogram(path)
    return g


def _default_inputs(st: Setup) -> List[Path]:
    if st.cfg.measurement.mode == "heralded":
        for stem in ("ingested", "sampled"):
            a = st.out / f"{stem}_a.jsah"
            if a.exists():
                b = st.out / f"{stem}_b.jsah"
                return [a, b] if b.exists() else [a]
        return [st.out / "sampled_a.jsah"]
    return [st.out / "sampled.jsab"]


def _filter(st: Setup, tau: float) -> reconstruction.FilterSpec:
    r = st.cfg.reconstruction
    if r.filter_width <= 0:
        spec = reconstruction.default_filter(tau, r.filter_shape)
        if r.filter_shape == "tukey":
            spec = reconstruction.FilterSpec(spec.center, spec.widths, "tukey", r.taper)
        return spec
    return reconstruction.FilterSpec((-abs(tau), abs(tau)), (r.filter_width, r.filter_width),
                                     r.filter_shape, r.taper)


def _delay(st: Setup, g: Interferogram):
    if st.cfg.reconstruction.delay == "config":
        tau = st.cfg.measurement.tau
        return (-tau, tau), tau
    return reconstruction.locate_sideband(g)


def cmd_reconstruct(st: Setup, inputs: Optional[List[str]] = None) -> int:
    out = Outputs(st, "reconstruct")
    h = st.hash
    rc = st.cfg.reconstruction
    paths = [Path(p) for p in inputs] if inputs else _default_inputs(st)
    ref_file = Path(st.cfg.reference.spectrum_file) if st.cfg.reference.spectrum_file else \
        st.out / "reference.csv"
    ref_a = formats.read_mode(ref_file)
    hists = [_read_hist(p) for p in paths]
    g = hists[0]
    sideband, tau = _delay(st, g)
    spec = _filter(st, tau)
    status = EXIT_OK
    if g.is_heralded:
        h_b = hists[1] if len(hists) > 1 else None
        ref_b = None
        if h_b is not None:
            ref_b_file = ref_file if st.cfg.reference.spectrum_file else st.out / "reference_b.csv"
            ref_b = formats.read_mode(ref_b_file)
        jsa, rep = reconstruction.reconstruct_heralded(
            g, ref_a, h_b, ref_b, tau, spec, rc.threshold,
            min_slice_fraction=rc.min_slice_fraction, workers=st.threads)
        rep.sideband = sideband
        if rep.stitch.underdetermined:
            status = EXIT_NUMERIC
            print(f"phase stitching underdetermined: {rep.stitch.components} disconnected "
                  "components", file=sys.stderr)
        body = rep.text()
    elif st.cfg.measurement.mode == "seeded":
        g1, g2 = st.grids()
        w = st.seed_detuning(g2)
        jsa, rep, modes = reconstruction.reconstruct_seeded({w: g}, ref_a, g2, tau, spec, rc.threshold)
        rep.sideband = sideband
        out.text("mode_0.csv", formats.mode_to_csv(modes[w], h))
        body = rep.text()
    else:
        est, rep = reconstruction.reconstruct_mode(g, ref_a, tau, spec, rc.threshold)
        rep.sideband = sideband
        dec = est.decomposition
        n_keep = min(5, len(dec.modes))
        for k in range(n_keep):
            out.text(f"mode_{k}.csv", formats.mode_to_csv(dec.modes[k], h))
        weights = " ".join(f"{p:.6g}" for p in dec.weights[:n_keep])
        body = rep.text() + f"mode_weights: {weights}\n"
        jsa = None
    body = "inputs: " + " ".join(p.name for p in paths) + "\n" + body
    if jsa is not None:
        out.bytes("jsa.jsab", formats.encode_jsab(jsa.grid1, jsa.grid2, jsa.f, h))
        out.text("jsa.csv", formats.matrix_to_csv(jsa.grid1, jsa.grid2, jsa.f, "jsa", h))
    out.text("reconstruction_report.txt", _report(h, body))
    out.close()
    if status == EXIT_NUMERIC:
        raise StitchingError("phase stitching underdetermined")
    return status


# ---------------------------------------------------------------- analyze

def _check_hash(st: Setup, name: str, file_hash: Optional[str], expected: Optional[str]) -> None:
    if expected is None or st.force:
        return
    if file_hash != expected:
        raise HashMismatchError(f"{name} was produced with config hash {file_hash}, "
                                f"expected {expected}; pass --force to analyze anyway")


def _time_csv(t1: np.ndarray, t2: np.ndarray, mag: np.ndarray, h: str) -> str:
    buf = io.StringIO()
    buf.write(f"# jsamode-fourier config_hash={h}\n")
    buf.write(f"# t1_fs: start={t1[0]!r} step={t1[1] - t1[0]!r} n={t1.size}\n")
    buf.write(f"# t2_fs: start={t2[0]!r} step={t2[1] - t2[0]!r} n={t2.size}\n")
    np.savetxt(buf, mag, delimiter=",", fmt="%.10g")
    return buf.getvalue()


def cmd_analyze(st: Setup, jsa_path: Optional[str] = None, interferogram: Optional[str] = None,
                expected_hash: Optional[str] = None) -> int:
    out = Outputs(st, "analyze")
    h = st.hash
    p = Path(jsa_path) if jsa_path else st.out / "jsa.jsab"
    if not p.exists():
        raise FileNotFoundError(f"JSA file not found: {p}")
    jsa, jh = formats.read_jsa(p)
    _check_hash(st, p.name, jh, expected_hash)
    g = None
    if interferogram:
        gp = Path(interferogram)
        if not gp.exists():
            raise FileNotFoundError(f"interferogram file not found: {gp}")
        g, gh = formats.read_interferogram(gp)
        _check_hash(st, gp.name, gh, expected_hash if expected_hash else jh)
    rep = analysis.analyze(jsa, g)
    out.text("analysis_report.txt", _report(h, f"input: {p.name}\n" + rep.text()))
    out.text("schmidt_coefficients.csv", rep.coefficients_csv(h))
    out.text("plot_amplitude.csv", formats.matrix_to_csv(jsa.grid1, jsa.grid2, np.abs(jsa.f), "amplitude", h))
    out.text("plot_phase.csv", formats.matrix_to_csv(jsa.grid1, jsa.grid2, np.angle(jsa.f), "phase", h))
    if g is not None:
        t1, t2, mag = analysis.fourier_magnitude(g.marginal().counts, g.grid1, g.grid2)
    else:
        t1, t2, mag = analysis.fourier_magnitude(jsa.f, jsa.grid1, jsa.grid2)
    out.text("plot_fourier.csv", _time_csv(t1, t2, mag, h))
    out.close()
    return EXIT_OK


# ---------------------------------------------------------------- pipeline

def cmd_pipeline(st: Setup) -> int:
    cmd_simulate(st)
    if st.cfg.tags.enabled:
        cmd_ingest(st)
    code = cmd_reconstruct(st)
    if st.cfg.measurement.mode != "unheralded":
        cmd_analyze(st, expected_hash=st.hash)
    return code


# ---------------------------------------------------------------- argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--preset", choices=PRESETS, help="start from a named preset")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--threads", type=int, help="worker thread cap")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--force", action="store_true", help="accept inputs with a different config hash")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jsamode", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "forward-model histograms and tag streams"),
                        ("pipeline", "simulate, ingest, reconstruct and analyze")):
        _common(sub.add_parser(name, help=help_))
    p = sub.add_parser("ingest", help="time-tag files to histograms")
    _common(p)
    p.add_argument("inputs", nargs="*", help="TTG1 files (default: <out>/tags_*.ttg)")
    p = sub.add_parser("reconstruct", help="histograms to complex JSA or modes")
    _common(p)
    p.add_argument("inputs", nargs="*", help="histogram files (default: from <out>)")
    p = sub.add_parser("analyze", help="Schmidt, chirp and visibility report for a JSA")
    _common(p)
    p.add_argument("jsa", nargs="?", help="JSAB file (default: <out>/jsa.jsab)")
    p.add_argument("--interferogram", help="histogram for fringe visibility and Fourier plot")
    p = sub.add_parser("config", help="configuration utilities")
    p.add_argument("action", choices=("print-defaults", "show"))
    p.add_argument("--config")
    p.add_argument("--preset", choices=PRESETS)
    return ap


def _setup(args) -> Setup:
    cfg = load_config(args.config, args.preset)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg.run.threads = args.threads
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return Setup(cfg, out, cfg.run.threads, args.force)


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        if args.action == "print-defaults":
            cfg = preset(args.preset) if args.preset else PipelineConfig()
            sys.stdout.write(cfg.to_ini(comments=True))
        else:
            cfg = load_config(args.config, args.preset)
            sys.stdout.write(f"# config_hash={cfg.hash()}\n" + cfg.to_ini())
        return EXIT_OK
    st = _setup(args)
    if args.command == "simulate":
        return cmd_simulate(st)
    if args.command == "ingest":
        return cmd_ingest(st, args.inputs)
    if args.command == "reconstruct":
        return cmd_reconstruct(st, args.inputs)
    if args.command == "analyze":
        expected = st.hash if (args.config or args.preset) else None
        return cmd_analyze(st, args.jsa, args.interferogram, expected)
    return cmd_pipeline(st)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        return run(argv)
    except formats.FormatError as e:
        print(f"error: corrupt data: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FileNotFoundError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
