import csv
import json
import os

import numpy as np
import pytest

from doublecurrent.checks import run_identity_suite
from doublecurrent.cli import golden_payload, main, parse_domain, parse_points

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def _read(path):
    with open(path) as fh:
        header = fh.readline()
        rows = list(csv.DictReader(fh))
    return json.loads(header.split(":", 1)[1]), rows


@pytest.mark.parametrize("x", [0.2, 0.41421356237309515, 0.9])
def test_identity_suite_passes(x):
    checks = run_identity_suite(x)
    assert all(c.passed for c in checks), [c.to_dict() for c in checks if not c.passed]


def test_injected_fault_is_caught():
    failed = {c.name for c in run_identity_suite(corrupt=True) if not c.passed}
    assert "kasteleyn_condition" in failed


def test_verify_exit_codes(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    report = json.load(open(tmp_path / "verify.json"))
    assert report["passed"] and len(report["checks"]) > 40
    assert main(["verify", "--inject-fault", "--out", str(tmp_path / "bad")]) == 1


def test_usage_errors(tmp_path):
    out = str(tmp_path)
    assert main(["sample", "--domain", "square:8", "--n", "1", "--out", out]) == 2          # no seed
    assert main(["sample", "--domain", "hexagon:8", "--n", "1", "--seed", "1", "--out", out]) == 2
    assert main(["sample", "--domain", "square:8", "--n", "1", "--seed", "1", "--x", "0.3", "--beta", "0.3",
                 "--out", out]) == 2
    assert main(["sample", "--domain", "square:8", "--n", "0", "--seed", "1", "--out", out]) == 2
    assert main(["stats", "crossings", "--domain", "square:16", "--radii", "4,16", "--n", "2", "--seed", "1",
                 "--out", out]) == 2
    assert main(["frobnicate"]) == 2


def test_domain_and_point_parsing():
    assert parse_domain("square:8").map.n_vertices == 81
    assert parse_domain("grid:3x2").map.n_vertices == 6
    assert parse_points("0.3,0.5:0.7,0.5") == [(0.3, 0.5), (0.7, 0.5)]


def test_sample_outputs_and_determinism(tmp_path):
    args = ["sample", "--domain", "square:16", "--n", "3", "--seed", "7", "--render"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    assert sum(n.startswith("trace_") for n in names) == 3
    assert sum(n.endswith(".svg") for n in names) == 3
    assert "summary.csv" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    cfg, rows = _read(tmp_path / "a" / "summary.csv")
    assert cfg["seed"] == 7 and cfg["domain"] == "square:16"
    assert len(rows) == 3


def test_sample_environment_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("DOUBLECURRENT_OUT", str(tmp_path / "env"))
    assert main(["sample", "--domain", "grid:3x3", "--n", "2", "--seed", "1"]) == 0
    assert os.path.exists(tmp_path / "env" / "summary.csv")


def test_wired_exact_sample(tmp_path):
    assert main(["sample", "--domain", "grid:3x3", "--bc", "wired", "--n", "4", "--seed", "3",
                 "--out", str(tmp_path)]) == 0
    _, rows = _read(tmp_path / "height_0000.csv")
    h = np.array([float(r["h"]) for r in rows])
    assert np.all(h - 0.5 == np.rint(h - 0.5))


def test_worker_count_is_part_of_the_stream(tmp_path):
    for w in ("1", "2"):
        for rep in ("a", "b"):
            assert main(["sample", "--domain", "square:12", "--n", "4", "--seed", "9", "--workers", w,
                         "--out", str(tmp_path / (w + rep))]) == 0
        a = (tmp_path / (w + "a") / "trace_0003.csv").read_bytes()
        assert a == (tmp_path / (w + "b") / "trace_0003.csv").read_bytes()


def test_stats_tables(tmp_path):
    out = str(tmp_path)
    assert main(["stats", "exitmean", "--paths", "400000", "--seed", "1", "--out", out]) == 0
    assert main(["stats", "moments", "--domain", "square:12", "--points", "0.25,0.5:0.75,0.5", "--n", "4000",
                 "--seed", "2", "--out", out]) in (0, 1)
    _, rows = _read(tmp_path / "moments.csv")
    assert {"estimate", "stderr", "target", "z"} <= set(rows[0])
    assert main(["stats", "crossings", "--domain", "square:24", "--radii", "4,8", "--n", "50", "--seed", "3",
                 "--out", out]) == 0
    _, rows = _read(tmp_path / "crossings.csv")
    assert [int(r["R"]) for r in rows] == [4, 8]


def test_golden_files_are_current():
    payload = golden_payload()
    for name, body in payload.items():
        ref = json.load(open(os.path.join(GOLDEN, f"{name}.json")))
        assert abs(ref["city_partition_function"] - body["city_partition_function"]) <= 1e-12 * ref["city_partition_function"]
        for key in ("trace_law", "nesting_law"):
            assert set(ref[key]) == set(body[key])
            assert max(abs(ref[key][k] - body[key][k]) for k in ref[key]) <= 1e-12
