"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def propagate(phi, gamma, x0, u):
    """Affine recursion ``x[k+1] = phi @ x[k] + gamma * u[k]``.

    Returns an ``(N + 1, n)`` array whose first row is ``x0``.
    """
    phi = np.ascontiguousarray(phi, dtype=float)
    gamma = np.ascontiguousarray(gamma, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    out = np.empty((u.size + 1, phi.shape[0]))
    out[0] = x0
    for k in range(u.size):
        np.dot(phi, out[k], out=out[k + 1])
        out[k + 1] += gamma * u[k]
    return out


def propagate_batch(phis, gammas, x0s, u):
    """``propagate`` for a stack of independent systems sharing one input.

    Shapes: ``phis (P, n, n)``, ``gammas (P, n)``, ``x0s (P, n)``; returns
    ``(P, N + 1, n)``.
    """
    phis = np.ascontiguousarray(phis, dtype=float)
    gammas = np.ascontiguousarray(gammas, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    P, n = gammas.shape
    out = np.empty((P, u.size + 1, n))
    out[:, 0] = x0s
    for k in range(u.size):
        out[:, k + 1] = np.einsum("pij,pj->pi", phis, out[:, k]) + gammas * u[k]
    return out


def propagate_grid(phis, gammas, x0s, U):
    """Every input row of ``U (B, N)`` applied to every system of the stack.

    ``x0s`` is ``(P, n)`` or ``(B, P, n)``; returns ``(B, P, N + 1, n)``.
    """
    phis = np.ascontiguousarray(phis, dtype=float)
    gammas = np.ascontiguousarray(gammas, dtype=float)
    U = np.ascontiguousarray(np.atleast_2d(U), dtype=float)
    (B, N), (P, n) = U.shape, gammas.shape
    out = np.empty((B, P, N + 1, n))
    out[:, :, 0] = x0s
    for k in range(N):
        out[:, :, k + 1] = (np.einsum("pij,bpj->bpi", phis, out[:, :, k])
                            + gammas[None] * U[:, k, None, None])
    return out


def markov(phi, gamma, count):
    """Impulse-response columns ``H[l] = phi^l @ gamma`` for ``l < count``."""
    phi = np.ascontiguousarray(phi, dtype=float)
    out = np.empty((count, phi.shape[0]))
    if count:
        out[0] = gamma
    for l in range(1, count):
        np.dot(phi, out[l - 1], out=out[l])
    return out


def adjoint_batch(phis, r):
    """Backward recursion ``lam[m] = phi^T lam[m+1] + r[m+1]``, ``lam[N-1] = 0``.

    ``phis (P, n, n)``, ``r (P, N, n)``; returns ``(P, N, n)``.
    """
    phis = np.ascontiguousarray(phis, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    lam = np.zeros_like(r)
    for m in range(r.shape[1] - 2, -1, -1):
        lam[:, m] = np.einsum("pji,pj->pi", phis, lam[:, m + 1]) + r[:, m + 1]
    return lam
