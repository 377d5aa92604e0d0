"""Bridge between Model objects and the compiled chain kernel.

The compiled core understands structured constraint systems only (pair
squared distances and diagonal quadratics); this module flattens a Model
into the plain arrays the kernel consumes and assembles its raw output
back into a ChainTrace.
"""

from __future__ import annotations

import time

import numpy as np

from .constraints import (
    EQ,
    FIX,
    DiagonalQuadratic,
    PairDistance2,
    StructuredConstraintSystem,
    label_string,
)
from .traces import REASONS, ChainTrace

KIND_PAIR = 0
KIND_DIAGQ = 1

WEIGHT_CONST = 0
WEIGHT_STICKY = 1

OBS_KINDS = {"none": 0, "xy": 1, "trimer": 2, "bonds": 3, "wall": 4, "level": 5}
OBS_WIDTH = {"none": 0, "xy": 2, "trimer": 1, "bonds": 5, "wall": 3, "level": 1}

_MOVES = ("same", "gain", "lose")


def supported(model) -> bool:
    if model.kernel is None:
        return False
    if not isinstance(model.system, StructuredConstraintSystem):
        return False
    if not all(isinstance(t, (PairDistance2, DiagonalQuadratic))
               for t in model.system.terms):
        return False
    if model.kernel["weight"][0] == "const" and not model.spec.explicit:
        return False
    return True


def _csr(neigh_lists, index_of):
    """Pack per-manifold neighbour lists into CSR arrays."""
    ptr = [0]
    tgt, fn, two = [], [], []
    for entries in neigh_lists:
        for labels, k, ts in entries:
            tgt.append(index_of[labels.tobytes()])
            fn.append(k)
            two.append(ts)
        ptr.append(len(tgt))
    return (np.asarray(ptr, dtype=np.int32), np.asarray(tgt, dtype=np.int32),
            np.asarray(fn, dtype=np.int32), np.asarray(two, dtype=np.uint8))


def build(model) -> dict:
    """Flatten a model into the kernel's array bundle (cached on the model)."""
    cache = model.kernel.get("_arrays")
    if cache is not None:
        return cache
    system, spec = model.system, model.spec
    n, nf = system.n_vars, system.n_fcns
    kind = np.zeros(nf, dtype=np.int32)
    pi = np.zeros(nf, dtype=np.int32)
    pj = np.zeros(nf, dtype=np.int32)
    pdim = np.zeros(nf, dtype=np.int32)
    target = np.zeros(nf)
    quad = np.zeros((nf, n))
    lin = np.zeros((nf, n))
    cst = np.zeros(nf)
    for k, t in enumerate(system.terms):
        if isinstance(t, PairDistance2):
            kind[k], pi[k], pj[k], pdim[k], target[k] = KIND_PAIR, t.i, t.j, t.dim, t.target
        else:
            kind[k] = KIND_DIAGQ
            quad[k] = t.quad
            lin[k] = t.lin
            cst[k] = t.const

    wkind, wcfg = model.kernel["weight"]
    out = {
        "n": n, "nf": nf,
        "kind": kind, "pi": pi, "pj": pj, "pdim": pdim, "target": target,
        "quad": quad, "lin": lin, "cst": cst,
    }
    if wkind == "const":
        out["weight_kind"] = WEIGHT_CONST
        out["logc"] = np.asarray(wcfg, dtype=float)
        out["logkappa"] = np.zeros(nf)
        out["gauge"] = np.zeros(nf, dtype=np.uint8)
        out["kbend"] = 0.0
        out["npart"] = 0
        out["pardim"] = 1
    else:
        out["weight_kind"] = WEIGHT_STICKY
        out["logc"] = np.zeros(1)
        out["logkappa"] = np.asarray(wcfg["log_kappa"], dtype=float)
        out["gauge"] = np.asarray(wcfg["pair_gauge"], dtype=np.uint8)
        out["kbend"] = float(wcfg["k_bend"])
        out["npart"] = int(wcfg["n_particles"])
        out["pardim"] = int(wcfg["dim"])

    if spec.explicit:
        out["explicit"] = 1
        labels = np.stack(spec.label_list).astype(np.int8)
        out["labels_list"] = labels
        index_of = {l.tobytes(): i for i, l in enumerate(spec.label_list)}
        gains = [spec.gain_neighbours(l) for l in spec.label_list]
        loses = [spec.lose_neighbours(l) for l in spec.label_list]
        out["gptr"], out["gtgt"], out["gfn"], out["gtwo"] = _csr(gains, index_of)
        out["lptr"], out["ltgt"], out["lfn"], out["ltwo"] = _csr(loses, index_of)
        out["fix"] = np.zeros(nf, dtype=np.uint8)
        out["twos"] = np.zeros(nf, dtype=np.uint8)
    else:
        out["explicit"] = 0
        out["labels_list"] = np.zeros((1, nf), dtype=np.int8)
        z32 = np.zeros(1, dtype=np.int32)
        out["gptr"] = out["lptr"] = np.zeros(2, dtype=np.int32)
        out["gtgt"] = out["gfn"] = out["ltgt"] = out["lfn"] = z32
        out["gtwo"] = out["ltwo"] = np.zeros(1, dtype=np.uint8)
        out["fix"] = np.asarray(spec.fix_flags, dtype=np.uint8)
        out["twos"] = np.asarray(spec.two_sided, dtype=np.uint8)

    okind = model.kernel["observables"]
    out["obs_kind"] = OBS_KINDS[okind]
    out["nobs"] = OBS_WIDTH[okind]
    bit_of_fn = np.full(nf, -1, dtype=np.int32)
    type_code = np.full(nf, -1, dtype=np.int32)
    if okind == "bonds":
        codes = {"AA": 0, "AB": 1, "BB": 2}
        for bit, k in enumerate(model.kernel["bond_bits"]):
            bit_of_fn[k] = bit
            type_code[k] = codes[model.kernel["bond_types"][bit]]
    out["bit_of_fn"] = bit_of_fn
    out["type_code"] = type_code
    is_wall = np.zeros(nf, dtype=np.uint8)
    if okind == "wall":
        for k, t in enumerate(system.terms):
            is_wall[k] = isinstance(t, DiagonalQuadratic)
    out["is_wall"] = is_wall

    model.kernel["_arrays"] = out
    return out


def _kernel(model):
    from . import _core

    arrs = build(model)
    ck = model.kernel.get("_compiled")
    if ck is None:
        ck = _core.ChainKernel(arrs)
        model.kernel["_compiled"] = ck
    return ck


def run_chain_compiled(model, n_steps, thin, params, seed, init_state=None) -> ChainTrace:
    """Run a chain through the compiled kernel and wrap its raw output."""
    t0 = time.perf_counter()
    ck = _kernel(model)
    state = init_state.copy() if init_state is not None else model.initial_state()
    if not state.check_feasible(model.system, 1e-8):
        raise ValueError("initial state violates its constraints")
    spec = model.spec
    man0 = spec.manifold_index(state.labels) if spec.explicit else -1
    if spec.explicit and man0 is None:
        raise ValueError("initial labels not in the stratification")
    rng = np.random.default_rng(seed)
    pt = (params.sigma, params.sigma_bdy, params.sigma_tan,
          params.lambda_lose, params.lambda_gain,
          params.newton.tol, float(params.newton.max_iter))
    (step, man_idx, rec_labels, m_rec, obs, visit_obj,
     reasons, move_reasons) = ck.run(
        np.asarray(state.x, dtype=float), np.asarray(state.labels, dtype=np.int8),
        int(man0), pt, int(n_steps), int(thin), rng)

    if spec.explicit:
        manifold = [str(int(i)) for i in man_idx]
        visit = {str(i): int(c) for i, c in enumerate(visit_obj) if c > 0}
    else:
        manifold = [label_string(rec_labels[k]) for k in range(rec_labels.shape[0])]
        if isinstance(visit_obj, dict):
            visit = {label_string(np.frombuffer(key, dtype=np.int8)): int(v)
                     for key, v in visit_obj.items()}
        else:
            # Dense counts indexed by the EQ-mask of the varying functions.
            vary = np.flatnonzero(np.asarray(spec.fix_flags) == 0)
            free_tag = np.where(np.asarray(spec.two_sided), 0, 2)  # NONE or IN
            base = np.asarray(state.labels, dtype=np.int8)
            visit = {}
            for mask, cnt in enumerate(visit_obj):
                if cnt > 0:
                    lab = base.copy()
                    for b, k in enumerate(vary):
                        lab[k] = EQ if (mask >> b) & 1 else free_tag[k]
                    visit[label_string(lab)] = int(cnt)

    reason_counts = {REASONS[i]: int(reasons[i]) for i in range(len(REASONS))}
    move_reason_counts = {}
    for mv in range(3):
        for ri, rname in enumerate(REASONS):
            cnt = int(move_reasons[mv * len(REASONS) + ri])
            if cnt:
                move_reason_counts[f"{_MOVES[mv]}:{rname}"] = cnt

    from .sampler import _params_dict

    return ChainTrace(
        model_name=model.name,
        observable_names=model.observable_names,
        step=step,
        manifold=manifold,
        m=m_rec,
        obs=obs,
        n_steps=n_steps,
        thin=thin,
        seed=seed,
        backend="compiled",
        params=_params_dict(params),
        model_params=dict(model.model_params),
        visit_counts=visit,
        reason_counts=reason_counts,
        move_reason_counts=move_reason_counts,
        wall_time=time.perf_counter() - t0,
    )
