"""The Markov-chain driver: one proposal/projection/accept step, and runs.

One step, in order: propose labels, propose a tangent step, project onto
the target manifold, reject on projection failure or a backwards Lose
step, reject on violated inequalities, Metropolis-Hastings with the
reverse accessibility provisionally assumed, and finally certify the
reverse projection before actually accepting.  Every failure mode is a
rejection with a named reason; the reasons partition the step count.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import geometry, projection, proposals
from .constraints import (
    EQ,
    IN,
    ChainState,
    DegenerateConfigurationError,
    eq_indices,
    in_indices,
)
from .proposals import GAIN, LOSE, SAME, SamplerParams
from .traces import REASONS, ChainTrace

# An accepted step must reproduce the starting point when the projection is
# re-run backwards; looser than the Newton tolerance, far tighter than any
# proposal scale.
REVERSE_MATCH_TOL = 1e-7


@dataclass
class StepOutcome:
    """What one step did and why."""

    accepted: bool
    reason: str
    movetype: str
    acceptance_prob: float = math.nan
    log_mh_ratio: float = math.nan


def acceptance_probability(f_x, f_y, fwd_density, rev_density) -> float:
    """Metropolis-Hastings acceptance min(1, ratio) from plain densities."""
    if fwd_density <= 0.0 or f_x <= 0.0:
        raise ValueError("a constructed move must have positive forward density")
    return min(1.0, (f_y * rev_density) / (f_x * fwd_density))


def _reject(state, reason, movetype, prob=math.nan, logr=math.nan):
    return state, StepOutcome(False, reason, movetype, prob, logr)


def sample_strat_step(model, state, params, rng):
    """Advance the chain by one step; returns (new state, StepOutcome)."""
    system, spec = model.system, model.spec
    x, L0 = state.x, state.labels
    if state.tangent is None:
        state.tangent = geometry.tangent_basis(system, L0, x)
    T0 = state.tangent
    d0 = T0.shape[1]

    mp = proposals.move_probabilities(system, spec, L0, x, T0, params)
    movetype, L1, changed, two = proposals.propose_labels(mp, L0, rng)

    # The only proposal known in advance to be the current point: a Same
    # move on a zero-dimensional manifold.  Accepted automatically.
    if movetype == SAME and d0 == 0:
        return state, StepOutcome(True, "accepted", movetype, 1.0)

    try:
        prop = proposals.propose_tangent_step(
            system, spec, x, L0, T0, movetype, L1, changed, two, params, rng)
    except DegenerateConfigurationError:
        return _reject(state, "newton_fail", movetype)

    # Project the displaced point onto the target manifold.
    if movetype == LOSE:
        Q0 = geometry.constraint_gradient_matrix(system, L0, x)
        Qv = np.column_stack([Q0, prop.v])
        res = projection.nes_l(system, x, Qv, state.eq, changed, prop.v,
                               params.newton)
    else:
        eq1 = eq_indices(L1)
        Q1 = system.gradient_matrix(eq1, x)
        res = projection.nes(system, x + prop.v, Q1, eq1, params.newton)
    if not res.ok:
        return _reject(state, "newton_fail", movetype)
    y = res.y
    if movetype == LOSE and res.alpha <= 0.0:
        return _reject(state, "alpha_negative", movetype)

    for i in in_indices(L1):
        if system.value(i, y) < 0.0:
            return _reject(state, "inequality_violated", movetype)

    # Forward and reverse proposal densities.  The reverse accessibility
    # indicator is provisionally 1 here; the reverse projection below is
    # what actually certifies it, and only runs for otherwise-accepted
    # moves.  A rank-deficient basis at the proposal makes the target
    # measure unevaluable, which we treat as zero acceptance.
    try:
        T_y1 = geometry.tangent_basis(system, L1, y)
        fwd = proposals.transition_log_density(
            system, spec, params, movetype, x, L0, T0, y, L1, T_y1, changed, two,
            mp_x=mp)
        if movetype == SAME:
            rev = proposals.transition_log_density(
                system, spec, params, SAME, y, L0, T_y1, x, L0, T0, None, False)
        elif movetype == GAIN:
            rev = proposals.transition_log_density(
                system, spec, params, LOSE, y, L1, T_y1, x, L0, T0, changed, two)
        else:
            T_y_hi = geometry.tangent_basis(system, L0, y)
            rev = proposals.transition_log_density(
                system, spec, params, GAIN, y, L1, T_y1, x, L0, T0, changed, two,
                T_hi=T_y_hi)
        log_ratio = (model.log_weight(y, L1) + rev
                     - model.log_weight(x, L0) - fwd)
    except DegenerateConfigurationError:
        return _reject(state, "metropolis_reject", movetype, 0.0, -math.inf)

    if not math.isfinite(fwd):
        # A constructed move has positive forward density except for
        # measure-zero draws that land exactly on a window boundary;
        # rejecting those keeps the chain well-defined.
        return _reject(state, "metropolis_reject", movetype, 0.0, -math.inf)

    acc = 1.0 if log_ratio >= 0.0 else (math.exp(log_ratio)
                                        if log_ratio > -math.inf else 0.0)
    if rng.random() >= acc:
        return _reject(state, "metropolis_reject", movetype, acc, log_ratio)

    # Reverse projection: the reverse move must be constructible and land
    # exactly back on x, otherwise detailed balance would be broken by
    # accepting a proposal whose reverse could never be generated.
    if movetype == SAME:
        v_rev, _ = proposals.reverse_step(x, y, T_y1, lose_reversed=False)
        Q_rev = system.gradient_matrix(state.eq, y)
        res_rev = projection.nes(system, y + v_rev, Q_rev, state.eq, params.newton)
    elif movetype == GAIN:
        v_rev, alpha_rev = proposals.reverse_step(x, y, T_y1, lose_reversed=True)
        if alpha_rev == 0.0:
            return _reject(state, "reverse_newton_fail", movetype, acc, log_ratio)
        eq1 = eq_indices(L1)
        Qv_rev = np.column_stack([system.gradient_matrix(eq1, y), v_rev])
        res_rev = projection.nes_l(system, y, Qv_rev, eq1, changed, v_rev,
                                   params.newton)
    else:
        v_rev, _ = proposals.reverse_step(x, y, T_y_hi, lose_reversed=False)
        Q_rev = system.gradient_matrix(state.eq, y)
        res_rev = projection.nes(system, y + v_rev, Q_rev, state.eq, params.newton)
    if not res_rev.ok:
        return _reject(state, "reverse_newton_fail", movetype, acc, log_ratio)
    if np.abs(res_rev.y - x).max() >= REVERSE_MATCH_TOL:
        return _reject(state, "reverse_mismatch", movetype, acc, log_ratio)
    if movetype == GAIN and res_rev.alpha <= 0.0:
        return _reject(state, "reverse_alpha_negative", movetype, acc, log_ratio)

    new_state = ChainState(y, L1, tangent=T_y1)
    return new_state, StepOutcome(True, "accepted", movetype, acc, log_ratio)


def iterate_chain(model, n_steps, params=None, seed=0, init_state=None):
    """Yield (state, outcome) pairs; the reference generator behind run_chain."""
    params = params or model.default_params
    rng = np.random.default_rng(seed)
    state = init_state.copy() if init_state is not None else model.initial_state()
    if not state.check_feasible(model.system, 1e-8):
        raise ValueError("initial state violates its constraints")
    for _ in range(n_steps):
        state, outcome = sample_strat_step(model, state, params, rng)
        yield state, outcome


def _params_dict(params: SamplerParams) -> dict:
    return {
        "sigma": params.sigma,
        "sigma_bdy": params.sigma_bdy,
        "sigma_tan": params.sigma_tan,
        "lambda_lose": params.lambda_lose,
        "lambda_gain": params.lambda_gain,
        "newton_tol": params.newton.tol,
        "newton_max_iter": params.newton.max_iter,
    }


def run_chain_python(model, n_steps, thin=1, params=None, seed=0,
                     init_state=None) -> ChainTrace:
    """Pure-Python chain run; see run_chain for the dispatching front end."""
    params = params or model.default_params
    if thin < 1:
        raise ValueError("thin must be >= 1")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    state = init_state.copy() if init_state is not None else model.initial_state()
    if not state.check_feasible(model.system, 1e-8):
        raise ValueError("initial state violates its constraints")

    n_obs = len(model.observable_names)
    n_rec = n_steps // thin
    step_idx = np.zeros(n_rec, dtype=np.int64)
    manifold = []
    m_rec = np.zeros(n_rec, dtype=np.int64)
    obs = np.zeros((n_rec, n_obs))
    visit, reasons, move_reasons = {}, dict.fromkeys(REASONS, 0), {}

    rec = 0
    for k in range(1, n_steps + 1):
        state, out = sample_strat_step(model, state, params, rng)
        reasons[out.reason] += 1
        key = f"{out.movetype}:{out.reason}"
        move_reasons[key] = move_reasons.get(key, 0) + 1
        mid = model.spec.manifold_id(state.labels)
        visit[mid] = visit.get(mid, 0) + 1
        if k % thin == 0:
            step_idx[rec] = k
            manifold.append(mid)
            m_rec[rec] = state.dims()[0]
            obs[rec] = model.observables(state.x, state.labels)
            rec += 1

    return ChainTrace(
        model_name=model.name,
        observable_names=model.observable_names,
        step=step_idx,
        manifold=manifold,
        m=m_rec,
        obs=obs,
        n_steps=n_steps,
        thin=thin,
        seed=seed,
        backend="python",
        params=_params_dict(params),
        model_params=dict(model.model_params),
        visit_counts=visit,
        reason_counts=reasons,
        move_reason_counts=move_reasons,
        wall_time=time.perf_counter() - t0,
    )


def run_chain(model, n_steps, thin=1, params=None, seed=0, init_state=None,
              backend="auto") -> ChainTrace:
    """Run one chain and return its trace.

    backend "auto" uses the compiled kernels when they are built and the
    model is expressible there, otherwise pure Python; "python" and
    "compiled" force the choice (the latter raises if unavailable).
    """
    from . import backend as _backend

    chosen = _backend.resolve(model, backend)
    if chosen == "compiled":
        from . import _kernelspec

        return _kernelspec.run_chain_compiled(
            model, n_steps, thin=thin, params=params or model.default_params,
            seed=seed, init_state=init_state)
    return run_chain_python(model, n_steps, thin=thin, params=params, seed=seed,
                            init_state=init_state)


def run_chains(model, n_steps, n_chains, thin=1, params=None, seed=0,
               backend="auto", max_workers=None) -> list:
    """Run independent chains concurrently (seeded seed, seed+1, ...)."""
    from concurrent.futures import ThreadPoolExecutor

    seeds = [seed + i for i in range(n_chains)]
    if n_chains == 1:
        return [run_chain(model, n_steps, thin, params, seeds[0], backend=backend)]
    with ThreadPoolExecutor(max_workers=max_workers or n_chains) as pool:
        futs = [pool.submit(run_chain, model, n_steps, thin, params, s,
                            None, backend)
                for s in seeds]
        return [f.result() for f in futs]
