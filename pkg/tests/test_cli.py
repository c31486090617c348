import json

import numpy as np
import pytest

from jsamode import formats
from jsamode.analysis import overlap
from jsamode.cli import main
from jsamode.config import ConfigError, PipelineConfig, load_config, parse_config, preset

SMALL = """\
[run]
preset = unchirped-heralded
seed = 7

[source]
pump_gdd = 150000

[grid]
n_bins = 64

[measurement]
events = 40000

[tags]
enabled = true
duration = 1200
singles_h = 50
"""

THERMAL = """\
[run]
preset = unseeded-thermal

[grid]
n_bins = 64

[measurement]
events = 40000
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


# ---------------------------------------------------------------- config

def test_print_defaults_round_trips(capsys):
    assert main(["config", "print-defaults"]) == 0
    text = capsys.readouterr().out
    cfg = parse_config(text)
    assert cfg.to_ini() == PipelineConfig().to_ini()
    assert "# reference delay (fs)" in text


@pytest.mark.parametrize("name", ["unchirped-heralded", "chirped-heralded", "seeded-coherent",
                                  "unseeded-thermal"])
def test_presets_round_trip_through_ini(name):
    cfg = preset(name)
    again = parse_config(cfg.to_ini())
    assert again.hash() == cfg.hash()


def test_hash_ignores_label_and_threads():
    a = preset("chirped-heralded")
    b = parse_config(a.to_ini().replace("preset = chirped-heralded", "preset = ")
                     .replace("threads = 1", "threads = 8"))
    assert a.hash() == b.hash()
    b.source.pump_gdd = 1.0
    assert a.hash() != b.hash()


def test_unknown_key_reports_line(tmp_path, capsys):
    path = write(tmp_path, "[run]\npreset = seeded-coherent\n\n[grid]\nn_bins = 64\nbinz = 3\n")
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "cfg.ini:6" in err and "binz" in err


def test_unknown_section_and_bad_value(tmp_path):
    with pytest.raises(ConfigError, match=r":1: unknown section \[extra\]"):
        parse_config("[extra]\na = 1\n")
    with pytest.raises(ConfigError, match=r":2: .*n_bins"):
        parse_config("[grid]\nn_bins = many\n", base="unchirped-heralded")
    with pytest.raises(ConfigError, match="statistics"):
        parse_config("[measurement]\nmode = heralded\nstatistics = quantum\ntau = 1e4\n")


def test_missing_required_key_named(tmp_path, capsys):
    path = write(tmp_path, "[measurement]\nmode = heralded\nstatistics = single_photon\n")
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == 1
    assert "tau" in capsys.readouterr().err


def test_config_show_includes_hash(tmp_path, capsys):
    path = write(tmp_path, SMALL)
    assert main(["config", "show", "--config", path]) == 0
    out = capsys.readouterr().out
    assert out.startswith(f"# config_hash={load_config(path).hash()}")


# ---------------------------------------------------------------- pipeline

@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    cfg = write(d, SMALL)
    out = d / "out"
    assert main(["pipeline", "--config", cfg, "--out", str(out)]) == 0
    return cfg, out


def test_pipeline_outputs_and_manifest(small_run):
    cfg, out = small_run
    names = set(files(out))
    for n in ("truth.jsab", "sampled_a.jsah", "tags_a.ttg", "tags_b.ttg", "ingested_a.jsah",
              "ingested_b.jsah", "jsa.jsab", "jsa.csv", "reconstruction_report.txt",
              "analysis_report.txt", "schmidt_coefficients.csv", "plot_amplitude.csv",
              "plot_phase.csv", "plot_fourier.csv", "manifest.json"):
        assert n in names
    man = json.loads((out / "manifest.json").read_text())
    h = load_config(cfg).hash()
    assert man["config_hash"] == h
    assert set(man["files"]) == names - {"manifest.json", "cfg.ini"}
    # every output embeds the hash
    assert formats.read_jsa(out / "jsa.jsab")[1] == h
    assert formats.read_interferogram(out / "ingested_a.jsah")[1] == h
    assert (out / "analysis_report.txt").read_text().startswith(f"# config_hash={h}")
    assert "inputs: ingested_a.jsah ingested_b.jsah" in (out / "reconstruction_report.txt").read_text()


def test_pipeline_reconstructs_truth(small_run):
    _, out = small_run
    truth, _ = formats.read_jsa(out / "truth.jsab")
    rec, _ = formats.read_jsa(out / "jsa.jsab")
    assert overlap(truth, rec) > 0.97
    text = (out / "analysis_report.txt").read_text()
    beta = float(next(l for l in text.splitlines() if l.startswith("beta_fs2")).split()[1])
    assert beta == pytest.approx(1.5e5, rel=0.1)


def test_pipeline_equals_separate_commands(small_run, tmp_path):
    cfg, out = small_run
    sep = tmp_path / "sep"
    for cmd in ("simulate", "ingest", "reconstruct", "analyze"):
        assert main([cmd, "--config", cfg, "--out", str(sep)]) == 0
    assert files(sep) == files(out)


def test_simulate_is_deterministic_and_seed_sensitive(small_run, tmp_path):
    cfg, out = small_run
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "tags_a.ttg").read_bytes() == (out / "tags_a.ttg").read_bytes()
    assert main(["simulate", "--config", cfg, "--seed", "8", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "sampled_a.jsah").read_bytes() != (out / "sampled_a.jsah").read_bytes()


def test_thread_count_does_not_change_outputs(small_run, tmp_path):
    cfg, out = small_run
    d = tmp_path / "t"
    for cmd in ("simulate", "ingest"):
        assert main([cmd, "--config", cfg, "--out", str(d)]) == 0
    assert main(["reconstruct", "--config", cfg, "--threads", "4", "--out", str(d)]) == 0
    assert (d / "jsa.jsab").read_bytes() == (out / "jsa.jsab").read_bytes()


def test_ingest_reports_drop_statistics(small_run, tmp_path, capsys):
    cfg, out = small_run
    assert main(["ingest", "--config", cfg, "--out", str(tmp_path), str(out / "tags_a.ttg")]) == 0
    err = capsys.readouterr().err
    assert "tags_a.ttg:" in err and "dropped out of range" in err
    assert "events" in (tmp_path / "ingest_report.txt").read_text()


def test_unheralded_pipeline_writes_modes(tmp_path):
    cfg = write(tmp_path, THERMAL)
    assert main(["pipeline", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rep = (tmp_path / "o" / "reconstruction_report.txt").read_text()
    assert "mode_weights" in rep
    assert (tmp_path / "o" / "mode_0.csv").exists()


# ---------------------------------------------------------------- failures and exit codes

def test_corrupt_tag_file_exit_2_with_offset(small_run, tmp_path, capsys):
    cfg, out = small_run
    raw = bytearray((out / "tags_a.ttg").read_bytes())
    raw[24 + 16 * 5 + 8] = 9  # channel byte of record 5
    bad = tmp_path / "tags_a.ttg"
    bad.write_bytes(bytes(raw))
    assert main(["ingest", "--config", cfg, "--out", str(tmp_path / "o"), str(bad)]) == 2
    err = capsys.readouterr().err
    assert f"byte {24 + 16 * 5}" in err


def test_empty_stream_gives_empty_histogram(small_run, tmp_path):
    from jsamode.tags import TimeTagStream, serialize_stream
    cfg, _ = small_run
    p = tmp_path / "tags_a.ttg"
    p.write_bytes(serialize_stream(TimeTagStream(np.zeros(0), np.zeros(0), 12.5)))
    assert main(["ingest", "--config", cfg, "--out", str(tmp_path), str(p)]) == 0
    g, _ = formats.read_interferogram(tmp_path / "ingested_a.jsah")
    assert g.total == 0


def test_missing_reference_names_path(small_run, tmp_path, capsys):
    cfg, out = small_run
    ref = tmp_path / "nope.csv"
    text = open(cfg).read() + f"\n[reference]\nspectrum_file = {ref}\n"
    path = write(tmp_path, text, "missing.ini")
    code = main(["reconstruct", "--config", path, "--out", str(tmp_path), str(out / "sampled_a.jsah")])
    assert code == 1
    assert str(ref) in capsys.readouterr().err


def test_analyze_refuses_foreign_hash(small_run, tmp_path, capsys):
    cfg, out = small_run
    other = write(tmp_path, SMALL.replace("seed = 7", "seed = 9"), "other.ini")
    assert main(["analyze", "--config", other, "--out", str(tmp_path), str(out / "jsa.jsab")]) == 1
    assert "config hash" in capsys.readouterr().err
    assert main(["analyze", "--config", other, "--force", "--out", str(tmp_path),
                 str(out / "jsa.jsab")]) == 0


def test_malformed_jsa_exit_2(small_run, tmp_path, capsys):
    cfg, out = small_run
    bad = tmp_path / "bad.jsab"
    bad.write_bytes(b"JSAX" + (out / "jsa.jsab").read_bytes()[4:])
    assert main(["analyze", "--config", cfg, "--out", str(tmp_path), str(bad)]) == 2
    assert "magic" in capsys.readouterr().err
    v = bytearray((out / "jsa.jsab").read_bytes())
    v[4] = 9
    bad.write_bytes(bytes(v))
    assert main(["analyze", "--config", cfg, "--out", str(tmp_path), str(bad)]) == 2
    assert "version 9" in capsys.readouterr().err


def test_no_sideband_exit_3(tmp_path, capsys):
    text = THERMAL + "\n[reconstruction]\ndelay = estimate\n"
    text = text.replace("events = 40000", "events = 40000\ntau = 0")
    cfg = write(tmp_path, text)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert main(["reconstruct", "--config", cfg, "--out", str(tmp_path)]) == 3
    assert "no sideband" in capsys.readouterr().err


def test_underdetermined_stitch_exit_3(tmp_path, capsys):
    from jsamode.core import Jsa, gaussian_mode
    from jsamode.forward import expected_heralded_histogram
    cfg = write(tmp_path, SMALL)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    truth, h = formats.read_jsa(tmp_path / "truth.jsab")
    # two well separated lobes: no row/column path links them
    lobes = sum(np.outer(gaussian_mode(truth.grid1, 4e-4, c).amp, gaussian_mode(truth.grid2, 4e-4, c).amp)
                for c in (-2.2e-3, 2.2e-3))
    jsa = Jsa(truth.grid1, truth.grid2, lobes).normalize()
    for tag, j, ref in (("a", jsa, "reference.csv"), ("b", jsa.transpose(), "reference_b.csv")):
        e = expected_heralded_histogram(j, formats.read_mode(tmp_path / ref), 1e4)
        formats.write_interferogram(tmp_path / f"lobes_{tag}.jsah", e, h)
    code = main(["reconstruct", "--config", cfg, "--out", str(tmp_path),
                 str(tmp_path / "lobes_a.jsah"), str(tmp_path / "lobes_b.jsah")])
    assert code == 3
    assert "underdetermined" in capsys.readouterr().err
    text = (tmp_path / "reconstruction_report.txt").read_text()
    assert "stitching_underdetermined: True" in text and "stitching_components: 2" in text
    assert (tmp_path / "jsa.jsab").exists()
