"""Pure numpy Euler-Maruyama kernels.

Same contract as the compiled ``_kernels`` extension; used when the extension
is unavailable and always for nonlinear (callable) noise intensities.

The state is carried as the consensus error ``d`` (``(B, N, n)``, rows sum
to zero) and the agent average ``c`` (``(B, n)``), both advanced in place.
The protocol only sees differences, so each step's increment is split into
its agent mean (added to ``c``) and the remainder (added to ``d``, which is
then re-centred).  This keeps ``d`` accurate to full relative precision
however small it gets.

For linear intensities the dynamics of ``d`` are homogeneous, so ``d`` is
stored as ``d_scaled * exp(logs)``: at every sample point a ``d_scaled``
whose norm has left ``[RESCALE_LOW, RESCALE_HIGH]`` is renormalised and the
factor moved into ``logs``.  Paths decaying like ``exp(-20 t)`` therefore
neither underflow nor stall in the subnormal range.

``dW`` is ``(B, S, M)`` Brownian increments already scaled by ``sqrt(dt)``.
Every ``stride`` steps a sample is written to ``out_d`` / ``out_c`` /
``out_logs``; a trial whose state norm exceeds ``guard`` (or is not finite)
at a sample point is marked dead in ``alive`` and its state set to NaN.
Callers pre-fill the output buffers with NaN, since dead trials are not
written again.
"""

from __future__ import annotations

import numpy as np

RESCALE_LOW = 1e-50
RESCALE_HIGH = 1e50


def _incidence(recv: np.ndarray, N: int) -> np.ndarray:
    P = np.zeros((N, recv.shape[0]))
    P[recv, np.arange(recv.shape[0])] = 1.0
    return P


def _apply(d, c, logs, inc, alive):
    m = inc.mean(axis=1)
    live = alive.astype(bool)
    dl = d[live] + inc[live]
    # re-centre every step: a roundoff residue along the consensus direction
    # has no dynamics and would otherwise set an absolute floor under |delta|
    d[live] = dl - dl.mean(axis=1, keepdims=True)
    with np.errstate(under="ignore"):
        c[live] += m[live] * np.exp(logs[live])[:, None]


def log_state_norm(d, c, logs):
    """``log |x|`` per trial for ``x = d * exp(logs) + 1 (x) c``, without overflow."""
    N = d.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ld = 0.5 * np.log(np.einsum("bij,bij->b", d, d)) + logs
        lc = 0.5 * np.log(N * np.einsum("bj,bj->b", c, c))
        return np.logaddexp(2 * ld, 2 * lc) / 2


def sample_state(d, c, logs, out_d, out_c, out_logs, alive, slot, guard, rescale):
    """Guard check, optional renormalisation and copy into sample ``slot``."""
    bad = alive.astype(bool) & ~(log_state_norm(d, c, logs) <= np.log(guard))
    if bad.any():
        alive[bad] = 0
        d[bad] = np.nan
        c[bad] = np.nan
        logs[bad] = np.nan
    live = alive.astype(bool)
    if rescale:
        nrm = np.sqrt(np.einsum("bij,bij->b", d, d))
        move = live & (nrm > 0) & ((nrm < RESCALE_LOW) | (nrm > RESCALE_HIGH))
        if move.any():
            d[move] /= nrm[move, None, None]
            logs[move] += np.log(nrm[move])
    out_d[live, slot] = d[live]
    out_c[live, slot] = c[live]
    out_logs[live, slot] = logs[live]


def advance_linear(d, c, logs, recv, send, bm, K, G, dt, dW, stride, out_d, out_c, out_logs,
                   alive, guard):
    B, N, n = d.shape
    S = dW.shape[1]
    P = _incidence(recv, N)
    Kdt = dt * K
    for s in range(S):
        v = d[:, send] - d[:, recv]                                   # (B, C, n)
        w = dW[:, s, bm]                                              # (B, C)
        contrib = v @ Kdt.T + w[:, :, None] * np.einsum("cmn,bcn->bcm", G, v)
        _apply(d, c, logs, np.einsum("nc,bcm->bnm", P, contrib), alive)
        if (s + 1) % stride == 0:
            sample_state(d, c, logs, out_d, out_c, out_logs, alive, (s + 1) // stride - 1, guard, True)


def advance_general(d, c, logs, recv, send, bm, K, funcs, dt, dW, stride, out_d, out_c, out_logs,
                    alive, guard):
    """Like :func:`advance_linear` with ``funcs[ch](v)`` mapping ``(B, n) -> (B, n)``.

    Nonlinear intensities are not scale invariant, so ``logs`` stays zero.
    """
    B, N, n = d.shape
    S = dW.shape[1]
    P = _incidence(recv, N)
    Kdt = dt * K
    for s in range(S):
        v = d[:, send] - d[:, recv]
        noise = np.stack([np.asarray(f(v[:, ch]), dtype=np.float64).reshape(B, n)
                          for ch, f in enumerate(funcs)], axis=1)
        w = dW[:, s, bm]
        contrib = v @ Kdt.T + w[:, :, None] * (noise @ K.T)
        _apply(d, c, logs, np.einsum("nc,bcm->bnm", P, contrib), alive)
        if (s + 1) % stride == 0:
            sample_state(d, c, logs, out_d, out_c, out_logs, alive, (s + 1) // stride - 1, guard, False)
