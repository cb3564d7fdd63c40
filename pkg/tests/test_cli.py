import json

import numpy as np
import pytest

from rawild import adapter, cli, curve, raster
from rawild.numerics import make_rng
from rawild.raster import LinearRawImage


def run(*argv):
    return cli.main([*map(str, argv), "--quiet"])


@pytest.fixture
def inputs(tmp_path):
    d = tmp_path / "in"
    d.mkdir()
    rng = make_rng(0)
    for i in range(3):
        raster.write_raster(LinearRawImage(rng.random((3, 16, 20))), d / f"img{i}.rawf")
    return d


def out_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.rawf"))}


def test_sim_counts_and_rerun_identical(inputs, tmp_path):
    assert run("sim", inputs, tmp_path / "a", "--seed", 7, "--count", 2) == 0
    assert run("sim", inputs, tmp_path / "b", "--seed", 7, "--count", 2) == 0
    a, b = out_bytes(tmp_path / "a"), out_bytes(tmp_path / "b")
    assert len(a) == 6 and a == b
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(man["outputs"]) == 6 and not man["errors"]
    seeds = {o["seed"] for o in man["outputs"]}
    assert len(seeds) == 6
    prov = json.loads((tmp_path / "a" / "img0_v1.json").read_text())
    assert prov["seed"] in seeds


def test_sim_parallel_matches_serial(inputs, tmp_path):
    assert run("sim", inputs, tmp_path / "a", "--seed", 3, "--count", 2) == 0
    assert run("sim", inputs, tmp_path / "b", "--seed", 3, "--count", 2, "--jobs", 2) == 0
    assert out_bytes(tmp_path / "a") == out_bytes(tmp_path / "b")


def test_sim_all_off_copies_input(inputs, tmp_path):
    assert run("sim", inputs, tmp_path / "o", "--seed", 1, "--toggle", "all=off") == 0
    for i in range(3):
        assert (tmp_path / "o" / f"img{i}_v0.rawf").read_bytes() == (inputs / f"img{i}.rawf").read_bytes()


def test_sim_bits_lattice(inputs, tmp_path):
    assert run("sim", inputs, tmp_path / "o", "--seed", 2, "--bits", 12) == 0
    for p in (tmp_path / "o").glob("*.rawf"):
        img = raster.read_raster(p)
        k = img.data.astype(np.float64) * 4095
        assert img.meta.bit_depth == 12
        assert np.max(np.abs(k - np.round(k))) <= 1e-3


def test_sim_config_file(inputs, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('seed = 5\nbit_depths = [10]\n[stage_toggles]\nrolloff = false\n')
    assert run("sim", inputs, tmp_path / "o", "--config", cfg) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["seed"] == 5 and man["config"]["bit_depths"] == [10]
    assert man["config"]["stage_toggles"]["rolloff"] is False


def test_replay(inputs, tmp_path):
    assert run("sim", inputs, tmp_path / "a", "--seed", 9, "--count", 2) == 0
    manifest = tmp_path / "a" / "manifest.json"
    assert run("replay", manifest, tmp_path / "b") == 0
    assert out_bytes(tmp_path / "a") == out_bytes(tmp_path / "b")
    # tampering with a recorded hash must be detected
    man = json.loads(manifest.read_text())
    man["outputs"][0]["sha256"] = "0" * 64
    manifest.write_text(json.dumps(man))
    assert run("replay", manifest, tmp_path / "c") == 1


def test_usage_and_io_errors(tmp_path):
    assert cli.main(["sim"]) == 2
    assert cli.main(["hist", str(tmp_path / "x.rawf"), "--q", "0"]) in (2, 3)
    assert run("hist", tmp_path / "missing.rawf") == 3
    assert run("sim", tmp_path / "nope", tmp_path / "out") == 3
    assert run("fit-ccm", "--sens-a", "mean", "--sens-b", "mean", "--illum", "warm") == 2


def test_apply_identity_bundle(tmp_path):
    img = LinearRawImage(make_rng(1).random((3, 24, 32)))
    src = tmp_path / "x.rawf"
    raster.write_raster(img, src)
    adapter.save_bundle(adapter.AdapterParams.identity(24, 32), tmp_path / "b", image_size=(24, 32))
    assert run("apply", src, tmp_path / "y.rawf", "--params", tmp_path / "b") == 0
    out = raster.read_raster(tmp_path / "y.rawf")
    assert np.max(np.abs(out.data.astype(np.float64) - img.data)) <= 1e-6
    adapter.save_bundle(adapter.AdapterParams.identity(24, 32), tmp_path / "c", image_size=(10, 10))
    assert run("apply", src, tmp_path / "z.rawf", "--params", tmp_path / "c") == 3


def test_curve_only_bundle_matches_curve_command(tmp_path):
    rng = make_rng(2)
    img = LinearRawImage(rng.random((3, 16, 16)))
    src = tmp_path / "x.rawf"
    raster.write_raster(img, src)
    cp = curve.control_points_from_residuals(rng.normal(size=(3, 7)))
    adapter.save_bundle(adapter.AdapterParams(cp, adapter.AdapterParams.identity(16, 16).grid), tmp_path / "b")
    assert run("apply", src, tmp_path / "a.rawf", "--params", tmp_path / "b") == 0
    assert run("curve", src, tmp_path / "c.rawf", "--params", tmp_path / "b" / "curve.json") == 0
    a = raster.read_raster(tmp_path / "a.rawf").data.astype(np.float64)
    c = raster.read_raster(tmp_path / "c.rawf").data.astype(np.float64)
    assert np.max(np.abs(a - c)) <= 1e-6


def test_curve_plot(tmp_path):
    (tmp_path / "curve.json").write_text(curve.CurveParams.identity().to_json())
    out = tmp_path / "plot.csv"
    assert run("curve-plot", "--params", tmp_path / "curve.json", "--samples", 11, "--out", out) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "t,g_R,g_G,g_B" and len(rows) == 12
    vals = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    np.testing.assert_allclose(vals[:, 1:], np.repeat(vals[:, :1], 3, axis=1), atol=1e-12)


def test_hist_constant_image(tmp_path, capsys):
    src = tmp_path / "x.rawf"
    raster.write_raster(LinearRawImage(np.full((3, 8, 8), 0.25)), src)
    assert run("hist", src, "--q", 8) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert len(rows) == 3
    for r in rows:
        assert [float(v) for v in r.split(",")] == [0.25] * 8
    assert run("hist", src, "--q", 4, "--mode", "soft", "--format", "json", "--out", tmp_path / "h.json") == 0
    assert json.loads((tmp_path / "h.json").read_text())


def test_fit_ccm_mean_identity(capsys):
    assert run("fit-ccm", "--sens-a", "mean", "--sens-b", "mean", "--illum", "d65") == 0
    res = json.loads(capsys.readouterr().out)
    assert np.max(np.abs(np.array(res["ccm"]) - np.eye(3))) < 1e-10
    assert res["rank"] == 3


def test_spectra_commands(tmp_path, capsys):
    pca = tmp_path / "pca.json"
    assert run("spectra", "fit-pca", "--out", pca) == 0
    assert run("spectra", "sample", "--pca", pca, "--seed", 4, "--count", 2, "--out", tmp_path / "s.csv") == 0
    assert (tmp_path / "s.csv").read_text().count("# camera:") == 2
    assert run("spectra", "planck", "--T", 5000) == 0
    assert capsys.readouterr().out
    assert run("spectra", "planck") == 2


def test_verify_numerics_suite(tmp_path):
    report = tmp_path / "r.json"
    assert run("verify", "--suite", "numerics", "--report", report) == 0
    assert json.loads(report.read_text())


def test_ingest_npy_bayer(tmp_path):
    counts = make_rng(3).integers(64, 4096, size=(8, 12)).astype(np.uint16)
    np.save(tmp_path / "m.npy", counts)
    assert run("ingest", tmp_path / "m.npy", tmp_path / "m.rawf", "--bits", 12,
               "--black", 64, 64, 64, "--white", 4095) == 0
    img = raster.read_raster(tmp_path / "m.rawf")
    assert img.data.shape == (3, 4, 6)
    assert img.data.min() >= 0 and img.data.max() <= 1
