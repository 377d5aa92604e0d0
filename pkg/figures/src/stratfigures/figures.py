"""Figure builders over the sampler CLI's JSON/CSV outputs.

Every builder renders statistics exactly as `stratsample analyze` emitted
them; nothing is re-estimated from raw traces here.  The only curves
computed in this layer are closed-form analytic overlays (the trimer's
triangle-probability law, flat reference lines) and presentation-level
blending of already-estimated values.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class FigureInputError(ValueError):
    """Missing file, empty input, or a column the figure needs."""


@dataclass
class FigureSpec:
    """What to draw, from which analysis files, into which image."""

    figure: str
    inputs: dict
    output: str
    options: dict = field(default_factory=dict)


def _load(path):
    if not os.path.exists(path):
        raise FigureInputError(f"input file {path!r} does not exist")
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("n_records") == 0:
        raise FigureInputError(f"{path}: analysis of an empty trace")
    return doc


def _require(doc, key, path):
    if key not in doc:
        raise FigureInputError(f"{path}: missing {key!r}; re-run the matching "
                               "`stratsample analyze` mode")
    return doc[key]


# ---------------------------------------------------------------------------


def parabola_fractions(spec: FigureSpec):
    """Per-manifold occupation table plus marginal histograms in x."""
    path = spec.inputs["fractions"]
    doc = _load(path)
    fracs = _require(doc, "fractions", path)
    errs = _require(doc, "fraction_errors", path)
    hist = _require(doc, "histogram", path)
    edges = np.asarray(hist["edges"])
    centers = 0.5 * (edges[:-1] + edges[1:])

    fig, axes = plt.subplots(1, 5, figsize=(16, 3.2))
    names = {"0": "interior", "1": "parabola", "2": "line", "3": "corners"}
    theory = _parabola_theory()
    for k in range(4):
        ax = axes[k]
        counts = np.asarray(hist["counts"].get(str(k), np.zeros(len(centers))),
                            dtype=float)
        total = counts.sum()
        width = edges[1] - edges[0]
        density = counts / (total * width) if total else counts
        ax.plot(centers, density, drawstyle="steps-mid", label="sampled")
        ax.plot(centers, _parabola_marginal(k, centers), "--", label="exact")
        ax.set_title(names[str(k)])
        ax.set_xlabel("x")
        if k == 0:
            ax.set_ylabel("marginal density")
            ax.legend(frameon=False, fontsize=8)
    ax = axes[4]
    ax.axis("off")
    rows = [[names[str(k)], f"{theory[k]:.4f}",
             f"{fracs.get(str(k), 0.0):.4f} ± {errs[str(k)]['std_error']:.4f}"]
            for k in range(4)]
    table = ax.table(cellText=rows, colLabels=["manifold", "exact", "sampled"],
                     loc="center")
    table.scale(1.0, 1.4)
    fig.suptitle("occupation of the plane-curve stratification")
    return fig


def _parabola_theory():
    r = math.sqrt(2.0)
    w = np.array([8 * r / 3, 3 * r + 0.5 * math.asinh(2 * r), 2 * r, 2.0])
    return w / w.sum()


def _parabola_marginal(k, xs):
    """Closed-form marginal density in x on manifold k, normalized."""
    r = math.sqrt(2.0)
    xs = np.asarray(xs)
    inside = np.abs(xs) < r
    if k == 0:
        f = np.where(inside, 2.0 - xs ** 2, 0.0)
        return f / (8 * r / 3)
    if k == 1:
        f = np.where(inside, np.sqrt(1 + 4 * xs ** 2), 0.0)
        return f / (3 * r + 0.5 * math.asinh(2 * r))
    if k == 2:
        return np.where(inside, 1.0 / (2 * r), 0.0)
    # corners: two atoms at +-sqrt(2); drawn as nothing (the table carries it)
    return np.zeros_like(xs)


def trimer_law(spec: FigureSpec):
    """Triangle probability versus stickiness, plus the flat angle check."""
    points = spec.inputs["fractions_by_kappa"]  # list of (kappa, path)
    if not points:
        raise FigureInputError("no (kappa, fractions.json) inputs given")
    kappas, vals, errs = [], [], []
    for kappa, path in points:
        doc = _load(path)
        fr = _require(doc, "fraction_errors", path)
        if "1" not in fr:
            raise FigureInputError(f"{path}: no triangle manifold ('1') found")
        kappas.append(float(kappa))
        vals.append(fr["1"]["value"])
        errs.append(fr["1"]["std_error"])

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    grid = np.exp(np.linspace(math.log(min(kappas) / 1.5),
                              math.log(max(kappas) * 1.5), 100))
    ax1.plot(grid, grid / (grid + math.pi / math.sqrt(3.0)), "-",
             label="analytic")
    ax1.errorbar(kappas, vals, yerr=errs, fmt="o", label="sampled")
    ax1.set_xscale("log")
    ax1.set_xlabel("sticky parameter")
    ax1.set_ylabel("P(triangle)")
    ax1.legend(frameon=False)

    angle_path = spec.inputs["angle_histogram"]
    doc = _load(angle_path)
    hist = _require(doc, "histogram", angle_path)
    if hist.get("observable") != "theta":
        raise FigureInputError(f"{angle_path}: need a theta histogram")
    edges = np.asarray(hist["edges"])
    centers = 0.5 * (edges[:-1] + edges[1:])
    counts = np.asarray(hist["counts"].get("0"), dtype=float)
    width = edges[1] - edges[0]
    density = counts / (counts.sum() * width)
    ax2.plot(centers, density, drawstyle="steps-mid", label="sampled")
    lo, hi = math.pi / 3, 5 * math.pi / 3
    ax2.plot([lo, hi], [1 / (hi - lo)] * 2, "--", label="flat")
    ax2.set_xlabel("opening angle")
    ax2.set_ylabel("density")
    ax2.legend(frameon=False)
    fig.suptitle("sticky trimer")
    return fig


def polymer_bonds(spec: FigureSpec):
    """Bond-count probabilities versus stickiness, with BD markers."""
    path = spec.inputs["reweight"]
    doc = _load(path)
    curves = _require(doc, "bond_probabilities", path)
    kappas = sorted(float(k) for k in curves)
    if len(kappas) < 2:
        raise FigureInputError(f"{path}: need a kappa grid, got {len(kappas)}")
    ms = sorted({int(m) for k in curves for m in curves[k]})

    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for m in ms:
        ys = [curves[f"{k:.6g}"][str(m)]["value"] for k in kappas]
        ax.plot(kappas, ys, label=f"{m} bonds")
    bd_path = spec.inputs.get("bd_summary")
    if bd_path:
        bdoc = _load(bd_path)
        pm = _require(bdoc, "bond_probabilities", bd_path)
        kappa_bd = bdoc["sampler_params"]["kappa"] if "sampler_params" in bdoc \
            else bdoc["params"]["kappa"]
        for m in ms:
            est = pm.get(str(m))
            if est:
                ax.errorbar([kappa_bd], [est[0]], yerr=[est[1]], fmt="k*",
                            ms=8 if m == ms[0] else 6)
    ax.set_xscale("log")
    ax.set_xlabel("sticky parameter")
    ax.set_ylabel("P(m bonds)")
    ax.legend(frameon=False, fontsize=7, ncol=2)
    fig.suptitle("six-sphere polymer bond statistics")
    return fig


def octahedron_yield(spec: FigureSpec):
    """Heatmaps of conditional octahedron yield and rigid-cluster probability."""
    path = spec.inputs["reweight"]
    doc = _load(path)
    ymap = _require(doc, "yield_map", path)
    grid = ymap["grid"]
    if not grid or not grid[0]:
        raise FigureInputError(f"{path}: empty yield map")
    aa = [row[0]["kappa_aa"] for row in grid]
    ab = [cell["kappa_ab"] for cell in grid[0]]
    oct_yield = np.array([[cell["octahedron"] for cell in row] for row in grid])
    p_rigid = np.array([[cell["p_rigid"]["value"] for cell in row]
                        for row in grid])

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, z, title in ((axes[0], oct_yield, "P(octahedron | rigid)"),
                         (axes[1], p_rigid, "P(rigid)")):
        im = ax.imshow(z, origin="lower", aspect="auto", vmin=0.0, vmax=1.0,
                       extent=[math.log10(ab[0]), math.log10(ab[-1]),
                               math.log10(aa[0]), math.log10(aa[-1])])
        ax.set_xlabel("log10 kappa_AB")
        ax.set_ylabel("log10 kappa_AA")
        ax.set_title(title + f" (kappa_BB={ymap['kappa_bb']:g})")
        fig.colorbar(im, ax=ax)
    return fig


def wall_adsorption(spec: FigureSpec):
    """Fraction on the wall and end-to-end distance versus stickiness.

    Inputs are one reweight JSON per sampled anchor; the marker shows each
    anchor's own estimate and the curves blend neighbouring anchors'
    reweighted estimates linearly in log kappa (pure presentation of what
    `analyze` emitted).
    """
    anchors = spec.inputs["wall_by_kappa"]  # list of (kappa0, path)
    if not anchors:
        raise FigureInputError("no (kappa0, reweight.json) inputs")
    anchors = sorted(anchors, key=lambda t: float(t[0]))
    k0s = [float(k) for k, _ in anchors]
    docs = [_load(path) for _, path in anchors]
    stats = [_require(doc, "wall_statistics", path)
             for doc, (_, path) in zip(docs, anchors)]

    targets = sorted({float(k) for s in stats for k in s})

    def blended(name):
        out = []
        for kt in targets:
            lk = math.log(kt)
            if lk <= math.log(k0s[0]):
                i = j = 0
                t = 0.0
            elif lk >= math.log(k0s[-1]):
                i = j = len(k0s) - 1
                t = 0.0
            else:
                j = int(np.searchsorted(np.log(k0s), lk))
                i = j - 1
                t = ((lk - math.log(k0s[i]))
                     / (math.log(k0s[j]) - math.log(k0s[i])))

            def val(idx):
                curve = stats[idx]
                key = min(curve, key=lambda s: abs(float(s) - kt))
                return curve[key][name]["value"]

            out.append((1 - t) * val(i) + t * val(j))
        return out

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for ax, name, label in ((ax1, "frac_wall", "fraction on wall"),
                            (ax2, "r_end", "end-to-end distance")):
        ax.plot(targets, blended(name), "-")
        marks = [stats[i][min(stats[i], key=lambda s: abs(float(s) - k0s[i]))]
                 [name]["value"] for i in range(len(k0s))]
        ax.plot(k0s, marks, "o")
        ax.set_xscale("log")
        ax.set_xlabel("wall sticky parameter")
        ax.set_ylabel(label)
    fig.suptitle("polymer adsorbing to a wall")
    return fig


BUILDERS = {
    "parabola-fractions": parabola_fractions,
    "trimer-law": trimer_law,
    "polymer-bonds": polymer_bonds,
    "octahedron-yield": octahedron_yield,
    "wall-adsorption": wall_adsorption,
}

# Structural expectations for the golden check: axes count and the least
# number of plotted series the figure must carry.
STRUCTURE = {
    "parabola-fractions": {"n_axes": 5, "min_series": {0: 2, 1: 2, 2: 2}},
    "trimer-law": {"n_axes": 2, "min_series": {0: 2, 1: 2}},
    "polymer-bonds": {"n_axes": 1, "min_series": {0: 8}},
    "octahedron-yield": {"n_axes": 4, "min_series": {}},  # 2 maps + colorbars
    "wall-adsorption": {"n_axes": 2, "min_series": {0: 2, 1: 2}},
}


def build_figure(spec: FigureSpec):
    """Build (but do not save) the matplotlib figure for a spec."""
    if spec.figure not in BUILDERS:
        raise FigureInputError(f"unknown figure {spec.figure!r}; "
                               f"available: {sorted(BUILDERS)}")
    return BUILDERS[spec.figure](spec)


def make_figure(spec: FigureSpec) -> str:
    """Render a figure to its output path; no partial file on failure."""
    fig = build_figure(spec)
    try:
        fig.savefig(spec.output, dpi=130, bbox_inches="tight")
    except Exception:
        if os.path.exists(spec.output):
            os.remove(spec.output)
        raise
    finally:
        plt.close(fig)
    return spec.output


def check_structure(fig, figure_id) -> list:
    """Golden structural check: axes and series counts; [] when healthy."""
    problems = []
    want = STRUCTURE[figure_id]
    if len(fig.axes) != want["n_axes"]:
        problems.append(f"expected {want['n_axes']} axes, found {len(fig.axes)}")
    for idx, n in want["min_series"].items():
        if idx >= len(fig.axes):
            continue
        ax = fig.axes[idx]
        series = len(ax.lines) + len(ax.containers) + len(ax.images)
        if series < n:
            problems.append(f"axes {idx}: {series} series, expected >= {n}")
    return problems
