"""Post-processing of chain traces: fractions, reweighting, errors, volumes.

All error bars are binned standard errors: the series is cut into
contiguous blocks, the estimate is formed per block, and the spread of the
block values estimates the error of the full-series value.  That is the
right tool for correlated chain output.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np

from .models import POLYMER6_TYPES, polymer6_backbone, polymer6_pairs

DEFAULT_BINS = 8


@dataclass
class WeightedEstimate:
    value: float
    std_error: float
    n_bins: int

    def __iter__(self):
        yield self.value
        yield self.std_error


class EmptyTraceError(ValueError):
    pass


def _bin_slices(n, n_bins):
    if n < n_bins:
        raise ValueError(f"series of length {n} cannot be cut into {n_bins} bins")
    edges = np.linspace(0, n, n_bins + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def binned_error(series, n_bins=DEFAULT_BINS) -> WeightedEstimate:
    """Mean of block means, with the spread of block means as its error."""
    series = np.asarray(series, dtype=float)
    means = np.array([series[s].mean() for s in _bin_slices(series.size, n_bins)])
    err = means.std(ddof=1) / math.sqrt(n_bins) if n_bins > 1 else 0.0
    return WeightedEstimate(float(means.mean()), float(err), n_bins)


def manifold_fractions(trace) -> dict:
    """Fraction of records on each manifold id."""
    if len(trace) == 0:
        raise EmptyTraceError("trace has no records")
    return trace.record_fractions()


def manifold_fraction_errors(trace, n_bins=DEFAULT_BINS) -> dict:
    """Per-manifold fraction with binned standard error."""
    ids = sorted(set(trace.manifold))
    man = np.asarray(trace.manifold, dtype=object)
    out = {}
    for i in ids:
        ind = (man == i).astype(float)
        est = binned_error(ind, n_bins)
        out[str(i)] = WeightedEstimate(float(ind.mean()), est.std_error, n_bins)
    return out


def reweight(trace, weight_fn, observables=None, n_bins=DEFAULT_BINS) -> dict:
    """Weighted means of trace observables under a per-manifold weight.

    weight_fn maps a record's manifold id (the labels) to a scalar weight.
    With unit weights this reproduces the unweighted estimates exactly.
    For weights built from trace columns (bond-type counts, wall contacts)
    use reweight_series with a precomputed weight array.
    """
    if len(trace) == 0:
        raise EmptyTraceError("trace has no records")
    w = np.asarray([weight_fn(mid) for mid in trace.manifold], dtype=float)
    return reweight_series(trace, w, observables, n_bins)


def reweight_series(trace, weights, observables=None, n_bins=DEFAULT_BINS) -> dict:
    """Weighted means with binned errors, given precomputed weights."""
    w = np.asarray(weights, dtype=float)
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    tot = w.sum()
    if tot <= 0.0:
        raise ValueError("all weights vanish; nothing to estimate")
    if w.max() > 0.1 * tot:
        warnings.warn(
            "one sample carries more than 10% of the total weight; the "
            "reweighted estimate is unreliable this far from the sampled "
            "parameters", RuntimeWarning, stacklevel=2)
    names = observables if observables is not None else trace.observable_names
    out = {}
    for name in names:
        x = trace.observable(name)
        value = float((w @ x) / tot)
        slices = _bin_slices(x.size, n_bins)
        vals = []
        for s in slices:
            ws = w[s].sum()
            if ws > 0:
                vals.append(float(w[s] @ x[s] / ws))
        vals = np.array(vals)
        err = (vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        out[name] = WeightedEstimate(value, float(err), n_bins)
    return out


def weighted_probability(trace, indicator, weights, n_bins=DEFAULT_BINS):
    """Weighted probability of a boolean record property."""
    ind = np.asarray(indicator, dtype=float)
    w = np.asarray(weights, dtype=float)
    tot = w.sum()
    if tot <= 0.0:
        raise ValueError("all weights vanish")
    value = float(w @ ind / tot)
    vals = []
    for s in _bin_slices(ind.size, n_bins):
        ws = w[s].sum()
        if ws > 0:
            vals.append(float(w[s] @ ind[s] / ws))
    vals = np.array(vals)
    err = (vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return WeightedEstimate(value, float(err), n_bins)


def volume_estimate(trace, c_weight_fn, target_id, anchor_id, anchor_volume,
                    n_bins=10) -> WeightedEstimate:
    """Volume of one manifold from visit counts against a known anchor.

    Vol(target) = (#records on target / #records on anchor)
                  * (c_anchor / c_target) * anchor_volume.
    The error comes from per-block ratio estimates; blocks that never
    visit the anchor are dropped from the error estimate.
    """
    if len(trace) == 0:
        raise EmptyTraceError("trace has no records")
    man = np.asarray(trace.manifold, dtype=object)
    on_t = (man == str(target_id)).astype(float)
    on_a = (man == str(anchor_id)).astype(float)
    n_anchor = on_a.sum()
    if n_anchor == 0:
        raise ValueError(f"anchor manifold {anchor_id!r} was never visited")
    scale = anchor_volume * c_weight_fn(anchor_id) / c_weight_fn(target_id)
    value = float(on_t.sum() / n_anchor * scale)
    vals = []
    for s in _bin_slices(man.size, n_bins):
        na = on_a[s].sum()
        if na > 0:
            vals.append(float(on_t[s].sum() / na * scale))
    vals = np.array(vals)
    err = (vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return WeightedEstimate(value, float(err), n_bins)


# ---------------------------------------------------------------------------
# Sticky-parameter reweighting for the polymer models

def polymer6_weights(trace, kappa0, kappa=None, kappa_aa=None, kappa_ab=None,
                     kappa_bb=None) -> np.ndarray:
    """Per-record weights that move a polymer6 run from kappa0 elsewhere.

    Each breakable bond of type AA/AB/BB multiplies the weight by the
    ratio of its new sticky parameter to the sampled one.
    """
    if kappa is not None:
        kappa_aa = kappa_ab = kappa_bb = kappa
    naa = trace.observable("n_aa")
    nab = trace.observable("n_ab")
    nbb = trace.observable("n_bb")
    logw = (naa * math.log(kappa_aa / kappa0)
            + nab * math.log(kappa_ab / kappa0)
            + nbb * math.log(kappa_bb / kappa0))
    logw -= logw.max()  # only ratios matter; keep exp() in range
    return np.exp(logw)


def bond_count_probabilities(trace, weights=None, n_bins=DEFAULT_BINS,
                             m_range=range(5, 13)) -> dict:
    """p_m: weighted probability of each total bond count."""
    m = trace.observable("m")
    w = np.ones(m.size) if weights is None else np.asarray(weights, dtype=float)
    return {int(k): weighted_probability(trace, m == k, w, n_bins)
            for k in m_range}


def wall_weights(trace, kappa0, kappa) -> np.ndarray:
    """Reweight a polymer-wall run to a different wall sticky parameter."""
    n_wall = trace.observable("n_wall")
    logw = n_wall * math.log(kappa / kappa0)
    logw -= logw.max()
    return np.exp(logw)


def interp_log_kappa(anchors, target_kappa):
    """Indices and weight for linear interpolation in log kappa.

    Returns (i, j, t): combine anchor estimates as (1-t)*est_i + t*est_j.
    Outside the anchor range the nearest anchor is used alone.
    """
    ks = np.asarray(anchors, dtype=float)
    order = np.argsort(ks)
    ks = ks[order]
    lk = math.log(target_kappa)
    for pos, k in enumerate(ks):
        if lk == math.log(k):
            return int(order[pos]), int(order[pos]), 0.0
    if lk <= math.log(ks[0]):
        return int(order[0]), int(order[0]), 0.0
    if lk >= math.log(ks[-1]):
        return int(order[-1]), int(order[-1]), 0.0
    hi = int(np.searchsorted(np.log(ks), lk))
    lo = hi - 1
    t = (lk - math.log(ks[lo])) / (math.log(ks[hi]) - math.log(ks[lo]))
    return int(order[lo]), int(order[hi]), float(t)


def reweighted_kappa_curve(traces, anchor_kappas, targets, statistic) -> list:
    """Evaluate a reweighted statistic across target kappas.

    statistic(trace, kappa0, kappa) -> WeightedEstimate; estimates at a
    target between two anchors are interpolated linearly in log kappa.
    """
    out = []
    for kt in targets:
        i, j, t = interp_log_kappa(anchor_kappas, kt)
        a = statistic(traces[i], anchor_kappas[i], kt)
        if j == i or t == 0.0:
            out.append(a)
            continue
        b = statistic(traces[j], anchor_kappas[j], kt)
        value = (1 - t) * a.value + t * b.value
        err = math.hypot((1 - t) * a.std_error, t * b.std_error)
        out.append(WeightedEstimate(value, err, a.n_bins))
    return out


# ---------------------------------------------------------------------------
# Cluster identification for polymer6 (12-bond rigid states)

def _adjacency_from_mask(mask: int) -> np.ndarray:
    pairs = polymer6_pairs()
    backbone = set(polymer6_backbone())
    off = [p for p in pairs if p not in backbone]
    A = np.zeros((6, 6), dtype=np.int8)
    for i, j in backbone:
        A[i, j] = A[j, i] = 1
    for bit, (i, j) in enumerate(off):
        if mask >> bit & 1:
            A[i, j] = A[j, i] = 1
    return A


def _canonical_form(A: np.ndarray) -> tuple:
    """Lexicographically smallest adjacency under vertex relabelling."""
    best = None
    idx = np.arange(A.shape[0])
    for perm in permutations(idx):
        p = list(perm)
        key = tuple(A[np.ix_(p, p)].flatten())
        if best is None or key < best:
            best = key
    return best


def _reference_clusters():
    """Canonical adjacency of the octahedron and the polytetrahedron."""
    oct_edges = [(0, 1), (0, 2), (0, 3), (0, 4), (5, 1), (5, 2), (5, 3), (5, 4),
                 (1, 2), (2, 3), (3, 4), (4, 1)]
    # Three face-sharing tetrahedra: {0123}, then 4 on face {123}, 5 on {234}.
    poly_edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3),
                  (1, 4), (2, 4), (3, 4), (2, 5), (3, 5), (4, 5)]
    refs = {}
    for name, edges in (("octahedron", oct_edges), ("polytetrahedron", poly_edges)):
        A = np.zeros((6, 6), dtype=np.int8)
        for i, j in edges:
            A[i, j] = A[j, i] = 1
        refs[name] = _canonical_form(A)
    return refs


_REFS = None


@lru_cache(maxsize=None)
def classify_cluster(bond_mask: int) -> str:
    """Name the 12-bond cluster behind a bond mask.

    The two rigid six-sphere clusters already differ by degree sequence
    (the octahedron is 4-regular); canonical-form isomorphism confirms it.
    """
    global _REFS
    A = _adjacency_from_mask(int(bond_mask))
    if A.sum() != 24:
        return "other"
    degrees = tuple(sorted(A.sum(axis=0)))
    if degrees == (4, 4, 4, 4, 4, 4):
        guess = "octahedron"
    else:
        guess = "polytetrahedron"
    if _REFS is None:
        _REFS = _reference_clusters()
    return guess if _canonical_form(A) == _REFS[guess] else "other"


def cluster_yields(trace, weights=None, n_bins=DEFAULT_BINS) -> dict:
    """Rigid-cluster statistics of a polymer6 trace.

    Returns the weighted probability of any 12-bond cluster, and the
    conditional octahedron/polytetrahedron split among those states.
    """
    m = trace.observable("m")
    masks = trace.observable("bond_mask").astype(np.int64)
    w = np.ones(m.size) if weights is None else np.asarray(weights, dtype=float)
    rigid = m == 12
    kinds = np.array([classify_cluster(mk) if r else "none"
                      for mk, r in zip(masks, rigid)], dtype=object)
    out = {"p_rigid": weighted_probability(trace, rigid, w, n_bins)}
    w_rigid = w[rigid]
    tot = w_rigid.sum()
    for name in ("octahedron", "polytetrahedron"):
        sel = (kinds == name)
        out[name] = float(w[sel].sum() / tot) if tot > 0 else math.nan
    return out
