"""Compiled inner loops for the stochastic-approximation recursions.

Both loops mirror the pure-numpy single-step functions in :mod:`vrql.solvers`
and are checked against them in the test suite.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def _linf(a, b):
    out = 0.0
    for x in range(a.shape[0]):
        for u in range(a.shape[1]):
            d = abs(a[x, u] - b[x, u])
            if d > out:
                out = d
    return out


@numba.njit(cache=True)
def q_learning_steps(theta, next_state, rewards, alphas, gamma, qstar, errors, track):
    """In place: ``theta <- (1 - a) theta + a (R + gamma max theta[next])`` per draw."""
    X, U = theta.shape
    v = np.empty(X)
    for k in range(next_state.shape[0]):
        for x in range(X):
            m = theta[x, 0]
            for u in range(1, U):
                if theta[x, u] > m:
                    m = theta[x, u]
            v[x] = m
        a = alphas[k]
        for x in range(X):
            for u in range(U):
                target = rewards[k, x, u] + gamma * v[next_state[k, x, u]]
                theta[x, u] = (1.0 - a) * theta[x, u] + a * target
        if track:
            errors[k] = _linf(theta, qstar)


@numba.njit(cache=True)
def vr_steps(theta, qbar, tbar, next_state, rewards, alphas, gamma, qstar, errors, track):
    """In place: variance-reduced updates re-centred at ``(qbar, tbar)``."""
    X, U = theta.shape
    v = np.empty(X)
    vbar = np.empty(X)
    for x in range(X):
        m = qbar[x, 0]
        for u in range(1, U):
            if qbar[x, u] > m:
                m = qbar[x, u]
        vbar[x] = m
    for k in range(next_state.shape[0]):
        for x in range(X):
            m = theta[x, 0]
            for u in range(1, U):
                if theta[x, u] > m:
                    m = theta[x, u]
            v[x] = m
        a = alphas[k]
        for x in range(X):
            for u in range(U):
                nxt = next_state[k, x, u]
                r = rewards[k, x, u]
                step = (r + gamma * v[nxt]) - (r + gamma * vbar[nxt]) + tbar[x, u]
                theta[x, u] = (1.0 - a) * theta[x, u] + a * step
        if track:
            errors[k] = _linf(theta, qstar)
