import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ivimfit.cli import main
from ivimfit.formats import read_map_csv, read_pgm, read_volume
from ivimfit.pipeline import METHODS

CONSTANT_TRUTH = {"s0": 1.0, "f": 0.235, "d_star": 0.0146, "d": 0.00087}


def write_config(path, **cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def read_rows(path):
    return list(csv.DictReader(path.open()))


def listing(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.fixture
def noiseless(tmp_path):
    cfg = write_config(tmp_path / "sim.json", dims=[2, 2, 1], truth=CONSTANT_TRUTH)
    assert main(["simulate", "--config", cfg, "--output", str(tmp_path / "sim")]) == 0
    return tmp_path / "sim"


@pytest.fixture
def noisy(tmp_path):
    cfg = write_config(
        tmp_path / "noisy.json",
        dims=[3, 2, 1],
        truth={"s0": 1.0, "f": {"uniform": [0.05, 0.4]}, "d_star": {"uniform": [0.005, 0.05]},
               "d": {"uniform": [0.0003, 0.0025]}},
        noise={"kind": "rician", "snr": 30},
        seed=4,
    )
    assert main(["simulate", "--config", cfg, "--output", str(tmp_path / "noisy")]) == 0
    return tmp_path / "noisy"


def test_simulate_then_fit_recovers_truth(tmp_path, noiseless):
    vol = read_volume(noiseless / "data.hdr")
    assert vol.dims == (2, 2, 1)
    out = tmp_path / "fit"
    assert main(["fit", "--input", str(noiseless / "data.hdr"), "--output", str(out)]) == 0
    for name, value in CONSTANT_TRUTH.items():
        grid = read_map_csv(out / f"{name}.csv", (2, 2, 1))
        # the body is float32, so recovery is limited by single precision
        np.testing.assert_allclose(grid, value, rtol=1e-4)
    report = json.loads((out / "report.json").read_text())
    assert report["n_fitted"] == 4 and report["stages"]["global_sh"]["total_nfev"] > 0


def test_constant_maps_give_uniform_images(tmp_path, noiseless):
    out = tmp_path / "fit"
    main(["fit", "--input", str(noiseless / "data.hdr"), "--output", str(out)])
    for name in ("s0", "f", "d_star", "d", "flags"):
        pix, comment = read_pgm((out / f"{name}.pgm").read_bytes())
        assert pix.shape == (2, 2) and np.all(pix == pix.flat[0])
        assert comment.startswith(f"# ivimfit map {name} min=")


def test_pgm_scale_in_header(tmp_path, noisy):
    out = tmp_path / "fit"
    main(["fit", "--input", str(noisy / "data.hdr"), "--output", str(out)])
    pix, comment = read_pgm((out / "f.pgm").read_bytes())
    grid = read_map_csv(out / "f.csv")
    assert f"min={float(grid.min())!r}" in comment and f"max={float(grid.max())!r}" in comment
    assert pix.min() == 0 and pix.max() == 255
    assert pix.shape == (2, 3)  # rows along y, columns along x


@pytest.mark.parametrize("method", METHODS)
def test_every_method_accepted(tmp_path, noisy, method):
    out = tmp_path / method
    assert main(["fit", "--input", str(noisy / "data.hdr"), "--output", str(out), "--method", method]) == 0
    assert json.loads((out / "report.json").read_text())["method"] == method


def test_commands_are_byte_reproducible(tmp_path, noisy):
    again = tmp_path / "again"
    cfg = tmp_path / "noisy.json"
    main(["simulate", "--config", str(cfg), "--output", str(again)])
    assert listing(noisy) == listing(again)

    runs = []
    for k, workers in enumerate(["1", "1", "2"]):
        out = tmp_path / f"fit{k}"
        main(["fit", "--input", str(noisy / "data.hdr"), "--output", str(out), "--method", "varpro_de",
              "--seed", "3", "--workers", workers])
        runs.append(listing(out))
    assert runs[0] == runs[1] == runs[2]

    evals = []
    for k in range(2):
        out = tmp_path / f"eval{k}"
        main(["evaluate", "--input", str(noisy / "data.hdr"), "--truth", str(noisy / "truth.csv"),
              "--output", str(out), "--method", "varpro_sh", "--method", "msnlls"])
        evals.append(listing(out))
    assert evals[0] == evals[1]


def test_seed_changes_noise(tmp_path, noisy):
    out = tmp_path / "other"
    main(["simulate", "--config", str(tmp_path / "noisy.json"), "--output", str(out), "--seed", "5"])
    assert (out / "data.raw").read_bytes() != (noisy / "data.raw").read_bytes()


def test_evaluate_perfect_fit(tmp_path, noiseless):
    out = tmp_path / "eval"
    assert main(["evaluate", "--input", str(noiseless / "data.hdr"), "--truth", str(noiseless / "truth.csv"),
                 "--output", str(out)]) == 0
    rows = read_rows(out / "scores.csv")
    assert len(rows) == 4
    assert all(float(r["cv_r2"]) > 1 - 1e-9 for r in rows)


def test_evaluate_groups_rows_per_method(tmp_path, noisy):
    out = tmp_path / "eval"
    main(["evaluate", "--input", str(noisy / "data.hdr"), "--truth", str(noisy / "truth.csv"),
          "--output", str(out), "--method", "varpro_sh", "--method", "varpro_de"])
    rows = read_rows(out / "scores.csv")
    assert [r["method"] for r in rows] == ["varpro_sh"] * 6 + ["varpro_de"] * 6
    summary = read_rows(out / "summary.csv")
    assert {(r["method"], r["metric"]) for r in summary} >= {("varpro_sh", "mse_s0"), ("varpro_de", "cv_r2")}
    speed = {r["method"]: r for r in read_rows(out / "speed.csv")}
    assert float(speed["ratio_de_over_sh"]["global_median_nfev"]) > 1.0


def test_evaluate_scores_existing_maps(tmp_path, noiseless):
    fit_dir = tmp_path / "fit"
    main(["fit", "--input", str(noiseless / "data.hdr"), "--output", str(fit_dir)])
    out = tmp_path / "eval"
    assert main(["evaluate", "--input", str(noiseless / "data.hdr"), "--maps", str(fit_dir),
                 "--truth", str(noiseless / "truth.csv"), "--output", str(out)]) == 0
    rows = [r for r in read_rows(out / "summary.csv") if r["method"] == "maps"]
    assert float(next(r for r in rows if r["metric"] == "mse_s0")["max"]) < 1e-8


def test_table_format_round_trip(tmp_path):
    cfg = write_config(tmp_path / "t.json", dims=[3, 1, 1], truth=CONSTANT_TRUTH, format="table")
    assert main(["simulate", "--config", cfg, "--output", str(tmp_path / "sim")]) == 0
    head = (tmp_path / "sim" / "data.csv").read_text().splitlines()[0]
    assert head == "bvalue,s_1,s_2,s_3"
    out = tmp_path / "fit"
    assert main(["fit", "--input", str(tmp_path / "sim" / "data.csv"), "--output", str(out)]) == 0
    # table input keeps double precision
    np.testing.assert_allclose(read_map_csv(out / "f.csv"), 0.235, rtol=1e-6)


def test_zero_voxel_dims(tmp_path):
    cfg = write_config(tmp_path / "z.json", dims=[0, 4, 1], truth=CONSTANT_TRUTH)
    assert main(["simulate", "--config", cfg, "--output", str(tmp_path / "sim")]) == 0
    assert (tmp_path / "sim" / "data.raw").read_bytes() == b""
    assert main(["fit", "--input", str(tmp_path / "sim" / "data.hdr"), "--output", str(tmp_path / "fit")]) == 0
    assert (tmp_path / "fit" / "s0.csv").read_text() == "x,y,z,value\n"


def test_all_masked_out(tmp_path):
    cfg = write_config(tmp_path / "m.json", dims=[2, 1, 1], truth=CONSTANT_TRUTH, mask=[0, 0])
    assert main(["simulate", "--config", cfg, "--output", str(tmp_path / "sim")]) == 0
    assert main(["fit", "--config", cfg, "--input", str(tmp_path / "sim" / "data.hdr"),
                 "--output", str(tmp_path / "fit")]) == 0
    assert json.loads((tmp_path / "fit" / "report.json").read_text())["n_fitted"] == 0
    flags = read_map_csv(tmp_path / "fit" / "flags.csv")
    assert np.all(flags == -1)


def test_unknown_config_key_is_named(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.json", dims=[1, 1, 1], truth=CONSTANT_TRUTH, fit={"optimiser": "sh"})
    assert main(["simulate", "--config", cfg, "--output", str(tmp_path / "out")]) == 2
    assert "fit.optimiser" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_invalid_truth_names_field(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.json", dims=[1, 1, 1], truth={**CONSTANT_TRUTH, "f": 1.5})
    assert main(["simulate", "--config", cfg, "--output", str(tmp_path / "out")]) == 2
    assert "truth" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_malformed_input_leaves_no_output(tmp_path, noiseless):
    raw = noiseless / "data.raw"
    raw.write_bytes(raw.read_bytes()[:-4])
    out = tmp_path / "fit"
    assert main(["fit", "--input", str(noiseless / "data.hdr"), "--output", str(out)]) == 2
    assert not out.exists()

    bad = tmp_path / "bad.csv"
    bad.write_text("bvalue,signal\n0,1\n10,abc\n")
    assert main(["fit", "--input", str(bad), "--output", str(out)]) == 2
    assert not out.exists()


def test_truth_misaligned(tmp_path, noiseless, noisy, capsys):
    out = tmp_path / "eval"
    assert main(["evaluate", "--input", str(noisy / "data.hdr"), "--truth", str(noiseless / "truth.csv"),
                 "--output", str(out)]) == 2
    assert "truth" in capsys.readouterr().err
    assert not out.exists()


def test_missing_input_file(tmp_path):
    assert main(["fit", "--input", str(tmp_path / "nope.hdr"), "--output", str(tmp_path / "o")]) != 0


def test_entry_point_exit_status(tmp_path):
    cfg = write_config(tmp_path / "bad.json", workers=1, colour="red")
    proc = subprocess.run([sys.executable, "-m", "ivimfit", "simulate", "--config", cfg, "--output", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "'colour'" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "ivimfit", "fit", "--output", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode != 0
