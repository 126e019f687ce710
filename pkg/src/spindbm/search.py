"""Discrete local search and single-sweep Gibbs sampling.

Local search walks to a local minimum of the energy by repeatedly setting
each bipartite block to its conditional minimizer (a sign threshold on the
block's local fields) until the state stops changing. Whether the even
block (v, h2) or the odd block (h1) moves first is decided by one coin
flip per call. The same block structure drives the Gibbs sweeps used to
perturb a found mode before coupling, so that chain initialization is not
supported only on the exact modes.

Sign convention: sgn(0) = +1 everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import (DbmParams, HiddenState, JointState, is_spin,
                    local_fields_even, local_fields_odd, uniform_spins)


class SearchDivergenceError(RuntimeError):
    """Local search exceeded its iteration cap (should never happen)."""


@dataclass
class SearchResult:
    """A block-wise fixed point plus the number of outer iterations taken."""

    state: object  # JointState or HiddenState
    steps: int


def _sgn(a: np.ndarray) -> np.ndarray:
    return np.where(a >= 0.0, 1.0, -1.0)


def default_max_iterations(params: DbmParams) -> int:
    return params.shape.total + 64


def block_minimize_joint(params: DbmParams, v, h1, h2, even_first: bool):
    """One full block-minimization pass; returns the new (v, h1, h2).

    Applying this to a local-search result must leave it unchanged.
    """
    if even_first:
        a_v, a_h2 = local_fields_even(params, h1)
        v, h2 = _sgn(a_v), _sgn(a_h2)
        h1 = _sgn(local_fields_odd(params, v, h2))
    else:
        h1 = _sgn(local_fields_odd(params, v, h2))
        a_v, a_h2 = local_fields_even(params, h1)
        v, h2 = _sgn(a_v), _sgn(a_h2)
    return v, h1, h2


def block_minimize_posterior(params: DbmParams, v, h1, h2, even_first: bool):
    """One block-minimization pass over (h1, h2) with v clamped."""
    c = params.W1.T @ v + params.b_h1
    if even_first:
        h2 = _sgn(params.W2.T @ h1 + params.b_h2)
        h1 = _sgn(c + params.W2 @ h2)
    else:
        h1 = _sgn(c + params.W2 @ h2)
        h2 = _sgn(params.W2.T @ h1 + params.b_h2)
    return h1, h2


def local_search_joint(params: DbmParams, rng: np.random.Generator,
                       max_iterations: int | None = None,
                       trace: list | None = None) -> SearchResult:
    """Block-minimize the joint energy from a uniform random start.

    trace, when given, receives the JointState after every iteration.
    """
    s = params.shape
    v = uniform_spins(s.n_v, rng)
    h1 = uniform_spins(s.n_h1, rng)
    h2 = uniform_spins(s.n_h2, rng)
    even_first = rng.random() < 0.5
    cap = max_iterations if max_iterations is not None else default_max_iterations(params)
    if trace is not None:
        trace.append(JointState(v, h1, h2))
    for it in range(1, cap + 1):
        v_new, h1_new, h2_new = block_minimize_joint(params, v, h1, h2, even_first)
        if trace is not None:
            trace.append(JointState(v_new, h1_new, h2_new))
        if (np.array_equal(v_new, v) and np.array_equal(h1_new, h1)
                and np.array_equal(h2_new, h2)):
            return SearchResult(JointState(v_new, h1_new, h2_new), it)
        v, h1, h2 = v_new, h1_new, h2_new
    raise SearchDivergenceError(f"no fixed point within {cap} iterations")


def local_search_posterior(params: DbmParams, v: np.ndarray, rng: np.random.Generator,
                           max_iterations: int | None = None,
                           trace: list | None = None) -> SearchResult:
    """Block-minimize the posterior energy over (h1, h2) with v clamped."""
    s = params.shape
    c = params.W1.T @ v + params.b_h1  # v's contribution to the h1 field, fixed
    h1 = uniform_spins(s.n_h1, rng)
    h2 = uniform_spins(s.n_h2, rng)
    even_first = rng.random() < 0.5
    cap = max_iterations if max_iterations is not None else default_max_iterations(params)
    if trace is not None:
        trace.append(HiddenState(h1, h2))
    for it in range(1, cap + 1):
        if even_first:
            h2_new = _sgn(params.W2.T @ h1 + params.b_h2)
            h1_new = _sgn(c + params.W2 @ h2_new)
        else:
            h1_new = _sgn(c + params.W2 @ h2)
            h2_new = _sgn(params.W2.T @ h1_new + params.b_h2)
        if trace is not None:
            trace.append(HiddenState(h1_new, h2_new))
        if np.array_equal(h1_new, h1) and np.array_equal(h2_new, h2):
            return SearchResult(HiddenState(h1_new, h2_new), it)
        h1, h2 = h1_new, h2_new
    raise SearchDivergenceError(f"no fixed point within {cap} iterations")


def local_search_clamped(params: DbmParams, v_observed: np.ndarray, observed: np.ndarray,
                         rng: np.random.Generator,
                         max_iterations: int | None = None,
                         trace: list | None = None) -> SearchResult:
    """Like local_search_joint, but visible units flagged observed never move.

    v_observed entries outside the observed mask are ignored. An all-False
    mask degenerates to the unclamped joint search.
    """
    s = params.shape
    observed = np.asarray(observed, dtype=bool)
    if observed.shape != (s.n_v,):
        raise ValueError("mask length does not match the visible layer")
    if observed.any() and not is_spin(np.asarray(v_observed)[observed]):
        raise ValueError("observed entries must be +-1")
    v_obs = np.where(observed, np.asarray(v_observed, dtype=np.float64), 0.0)

    def clamp(v):
        return np.where(observed, v_obs, v)

    v = clamp(uniform_spins(s.n_v, rng))
    h1 = uniform_spins(s.n_h1, rng)
    h2 = uniform_spins(s.n_h2, rng)
    even_first = rng.random() < 0.5
    cap = max_iterations if max_iterations is not None else default_max_iterations(params)
    if trace is not None:
        trace.append(JointState(v, h1, h2))
    for it in range(1, cap + 1):
        if even_first:
            a_v, a_h2 = local_fields_even(params, h1)
            v_new, h2_new = clamp(_sgn(a_v)), _sgn(a_h2)
            h1_new = _sgn(local_fields_odd(params, v_new, h2_new))
        else:
            h1_new = _sgn(local_fields_odd(params, v, h2))
            a_v, a_h2 = local_fields_even(params, h1_new)
            v_new, h2_new = clamp(_sgn(a_v)), _sgn(a_h2)
        if trace is not None:
            trace.append(JointState(v_new, h1_new, h2_new))
        if (np.array_equal(v_new, v) and np.array_equal(h1_new, h1)
                and np.array_equal(h2_new, h2)):
            return SearchResult(JointState(v_new, h1_new, h2_new), it)
        v, h1, h2 = v_new, h1_new, h2_new
    raise SearchDivergenceError(f"no fixed point within {cap} iterations")


def _spin_sample(field: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample spins with P(+1) = sigmoid(2 * field), independently per unit."""
    return np.where(rng.random(len(field)) < expit(2.0 * field), 1.0, -1.0)


def gibbs_sweep_joint(params: DbmParams, x: JointState, rng: np.random.Generator) -> JointState:
    """One full Gibbs sweep over both blocks, order chosen by a coin flip."""
    if rng.random() < 0.5:
        a_v, a_h2 = local_fields_even(params, x.h1)
        v = _spin_sample(a_v, rng)
        h2 = _spin_sample(a_h2, rng)
        h1 = _spin_sample(local_fields_odd(params, v, h2), rng)
    else:
        h1 = _spin_sample(local_fields_odd(params, x.v, x.h2), rng)
        a_v, a_h2 = local_fields_even(params, h1)
        v = _spin_sample(a_v, rng)
        h2 = _spin_sample(a_h2, rng)
    return JointState(v, h1, h2)


def gibbs_sweep_posterior(params: DbmParams, v: np.ndarray, h: HiddenState,
                          rng: np.random.Generator) -> HiddenState:
    """One full Gibbs sweep over (h1, h2) with v clamped."""
    c = params.W1.T @ v + params.b_h1
    if rng.random() < 0.5:
        h2 = _spin_sample(params.W2.T @ h.h1 + params.b_h2, rng)
        h1 = _spin_sample(c + params.W2 @ h2, rng)
    else:
        h1 = _spin_sample(c + params.W2 @ h.h2, rng)
        h2 = _spin_sample(params.W2.T @ h1 + params.b_h2, rng)
    return HiddenState(h1, h2)
