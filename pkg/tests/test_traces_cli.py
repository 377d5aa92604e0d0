import json
import os
import subprocess
import sys

import numpy as np
import pytest

import stratsample as ss
from stratsample.cli import main
from stratsample.traces import ChainTrace


def test_trace_csv_roundtrip_bitwise(tmp_path):
    model = ss.make_model("parabola-line")
    tr = ss.run_chain(model, 2000, thin=10, seed=3, backend="python")
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    back = ChainTrace.from_csv(path)
    assert back.observable_names == tr.observable_names
    assert back.manifold == tr.manifold
    assert back.obs.tobytes() == tr.obs.tobytes()
    assert back.m.tolist() == tr.m.tolist()


def test_cli_sample_summary_echoes_resolved_config(tmp_path):
    trace = tmp_path / "t.csv"
    summ = tmp_path / "s.json"
    rc = main(["sample", "--model", "trimer", "--kappa", "2.0",
               "--steps", "2000", "--thin", "10", "--seed", "4",
               "--lambda-lose", "0.5", "--sigma-bdy", "0.25",
               "--out-trace", str(trace), "--out-summary", str(summ)])
    assert rc == 0
    doc = json.loads(summ.read_text())
    assert doc["sampler_params"]["lambda_lose"] == 0.5
    # default lambda_gain = sigma_bdy * lambda_lose is echoed resolved
    assert doc["sampler_params"]["lambda_gain"] == pytest.approx(0.125)
    assert doc["seed"] == 4
    assert doc["model_params"]["kappa"] == 2.0
    assert sum(doc["reason_counts"].values()) == 2000


def test_cli_analyze_roundtrips_fractions_bitwise(tmp_path):
    trace = tmp_path / "t.csv"
    summ = tmp_path / "s.json"
    out = tmp_path / "a.json"
    main(["sample", "--model", "parabola-line", "--steps", "5000",
          "--thin", "10", "--seed", "1", "--out-trace", str(trace),
          "--out-summary", str(summ)])
    rc = main(["analyze", "fractions", "--trace", str(trace),
               "--out", str(out)])
    assert rc == 0
    run_frac = json.loads(summ.read_text())["record_fractions"]
    ana_frac = json.loads(out.read_text())["fractions"]
    assert run_frac == ana_frac  # bitwise through JSON floats


def test_cli_zero_steps(tmp_path):
    trace = tmp_path / "t.csv"
    rc = main(["sample", "--model", "parabola-line", "--steps", "0",
               "--out-trace", str(trace),
               "--out-summary", str(tmp_path / "s.json")])
    assert rc == 0
    back = ChainTrace.from_csv(trace)
    assert len(back) == 0


def test_cli_unknown_model_fails_cleanly(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["sample", "--model", "bogus", "--steps", "10"])


def test_cli_bad_params_removes_partial_outputs(tmp_path):
    trace = tmp_path / "t.csv"
    rc = main(["sample", "--model", "trimer", "--kappa", "-2",
               "--steps", "100", "--out-trace", str(trace),
               "--out-summary", str(tmp_path / "s.json")])
    assert rc == 1
    assert not trace.exists()


def test_cli_seed_determinism(tmp_path):
    outs = []
    for name in ("a", "b"):
        trace = tmp_path / f"{name}.csv"
        main(["sample", "--model", "trimer", "--steps", "3000", "--thin", "10",
              "--seed", "9", "--out-trace", str(trace),
              "--out-summary", str(tmp_path / f"{name}.json")])
        outs.append(trace.read_text())
    assert outs[0] == outs[1]


def test_cli_chains(tmp_path):
    summ = tmp_path / "s.json"
    rc = main(["sample", "--model", "parabola-line", "--steps", "2000",
               "--chains", "2", "--seed", "3",
               "--out-trace", str(tmp_path / "t.csv"),
               "--out-summary", str(summ)])
    assert rc == 0
    doc = json.loads(summ.read_text())
    assert len(doc["chains"]) == 2
    assert {c["seed"] for c in doc["chains"]} == {3, 4}
    assert os.path.exists(tmp_path / "t.chain0.csv")
    assert os.path.exists(tmp_path / "t.chain1.csv")


def test_cli_volume_anchor_forms(tmp_path):
    trace = tmp_path / "e.csv"
    main(["sample", "--model", "ellipsoid", "--semiaxes", "1,1",
          "--c-exp", "0.0", "--steps", "30000", "--seed", "2",
          "--out-trace", str(trace), "--out-summary", str(tmp_path / "s.json")])
    out = tmp_path / "v.json"
    rc = main(["analyze", "volume", "--trace", str(trace), "--weights", "one",
               "--anchor", "level:2:2", "--target", "level:1",
               "--out", str(out)])
    assert rc == 0
    v = json.loads(out.read_text())["volume"]["value"]
    assert 5.0 < v < 7.5  # near 2 pi
    rc = main(["analyze", "volume", "--trace", str(trace), "--weights", "one",
               "--anchor", "id:1:2"])
    assert rc == 0


def test_cli_reweight_wall(tmp_path):
    trace = tmp_path / "w.csv"
    main(["sample", "--model", "polymer-wall", "--n-spheres", "5",
          "--kappa", "1.0", "--steps", "20000", "--seed", "6",
          "--out-trace", str(trace), "--out-summary", str(tmp_path / "s.json")])
    out = tmp_path / "r.json"
    rc = main(["analyze", "reweight", "--trace", str(trace), "--kappa0", "1.0",
               "--kappa-grid", "0.5:2:3", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert len(doc["wall_statistics"]) == 3
    for est in doc["wall_statistics"].values():
        assert 0.0 <= est["frac_wall"]["value"] <= 1.0


def test_cli_entrypoint_subprocess(tmp_path):
    env = dict(os.environ, STRATSAMPLE_OUTDIR=str(tmp_path))
    res = subprocess.run(
        [sys.executable, "-m", "stratsample.cli", "sample", "--model",
         "parabola-line", "--steps", "100", "--seed", "1"],
        capture_output=True, text=True, env=env)
    assert res.returncode == 0
    assert (tmp_path / "parabola-line.trace.csv").exists()


def test_bd_cli_smoke(tmp_path):
    trace = tmp_path / "bd.csv"
    summ = tmp_path / "bd.json"
    rc = main(["bd", "--e-depth", "3.0", "--time", "0.02", "--dt", "1e-5",
               "--record-dt", "2e-3", "--burn-in", "0", "--seed", "1",
               "--backend", "python",
               "--out-trace", str(trace), "--out-summary", str(summ)])
    assert rc == 0
    doc = json.loads(summ.read_text())
    assert "bond_probabilities" in doc
    assert ChainTrace.from_csv(trace).observable_names[0] == "m"
