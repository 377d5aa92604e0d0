"""Generate desk-scale inputs once, through the stratsample CLI only."""

import json
import subprocess
import sys

import pytest


def run_cli(*args):
    res = subprocess.run(["stratsample", *map(str, args)],
                         capture_output=True, text=True)
    if res.returncode != 0:
        raise RuntimeError(f"stratsample {' '.join(map(str, args))} failed:\n"
                           f"{res.stderr}")
    return res


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("inputs")


@pytest.fixture(scope="session")
def parabola_analysis(workdir):
    trace = workdir / "par.csv"
    run_cli("sample", "--model", "parabola-line", "--steps", 100_000,
            "--thin", 10, "--seed", 1, "--out-trace", trace,
            "--out-summary", workdir / "par.json")
    out = workdir / "par.fractions.json"
    run_cli("analyze", "fractions", "--trace", trace, "--histogram", "x",
            "--hist-bins", 30, "--out", out)
    return out


@pytest.fixture(scope="session")
def trimer_analysis(workdir):
    points = []
    for i, kappa in enumerate((1.0, 4.0, 16.0)):
        trace = workdir / f"tri{i}.csv"
        run_cli("sample", "--model", "trimer", "--kappa", kappa,
                "--steps", 100_000, "--thin", 10, "--seed", 20 + i,
                "--out-trace", trace, "--out-summary", workdir / f"tri{i}.json")
        out = workdir / f"tri{i}.fractions.json"
        run_cli("analyze", "fractions", "--trace", trace,
                "--histogram", "theta", "--hist-bins", 24,
                "--hist-range", 1.0471975511965976, 5.235987755982988,
                "--out", out)
        points.append((kappa, str(out)))
    return points


@pytest.fixture(scope="session")
def polymer_analysis(workdir):
    trace = workdir / "poly.csv"
    run_cli("sample", "--model", "polymer6", "--kappa", 2.0,
            "--steps", 200_000, "--thin", 10, "--seed", 5,
            "--out-trace", trace, "--out-summary", workdir / "poly.json")
    curves = workdir / "poly.curves.json"
    run_cli("analyze", "reweight", "--trace", trace, "--kappa0", 2.0,
            "--kappa-grid", "0.5:16:8", "--out", curves)
    ymap = workdir / "poly.yield.json"
    run_cli("analyze", "reweight", "--trace", trace, "--kappa0", 2.0,
            "--kappa-aa-grid", "0.5:8:4", "--kappa-ab-grid", "0.5:32:4",
            "--kappa-bb", 0.1, "--out", ymap)
    return {"curves": curves, "yield": ymap}


@pytest.fixture(scope="session")
def bd_summary(workdir):
    out = workdir / "bd.json"
    run_cli("bd", "--e-depth", 5.3, "--time", 2.0, "--dt", "1e-6",
            "--record-dt", 0.05, "--seed", 2, "--burn-in", 0.2,
            "--out-trace", workdir / "bd.csv", "--out-summary", out)
    return out


@pytest.fixture(scope="session")
def wall_analysis(workdir):
    points = []
    for i, kappa in enumerate((0.2, 1.0, 5.0)):
        trace = workdir / f"wall{i}.csv"
        run_cli("sample", "--model", "polymer-wall", "--n-spheres", 6,
                "--kappa", kappa, "--steps", 60_000, "--thin", 10,
                "--seed", 40 + i, "--out-trace", trace,
                "--out-summary", workdir / f"wall{i}.json")
        out = workdir / f"wall{i}.reweight.json"
        run_cli("analyze", "reweight", "--trace", trace, "--kappa0", kappa,
                "--kappa-grid", "0.1:10:9", "--out", out)
        points.append((kappa, str(out)))
    return points
