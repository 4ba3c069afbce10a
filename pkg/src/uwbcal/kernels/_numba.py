"""Numba-compiled kernels. Numerically equivalent to ``_numpy`` up to summation order."""
import numpy as np
from numba import njit


@njit(cache=True)
def mlp_forward_one(x, W1, b1, W2, b2, W3, b3):
    h1 = W1.shape[0]
    h2 = W2.shape[0]
    a1 = np.empty(h1)
    for i in range(h1):
        acc = b1[i]
        for k in range(x.shape[0]):
            acc += W1[i, k] * x[k]
        a1[i] = acc if acc > 0.0 else 0.0
    out = b3[0]
    for i in range(h2):
        acc = b2[i]
        for k in range(h1):
            acc += W2[i, k] * a1[k]
        if acc > 0.0:
            out += W3[0, i] * acc
    return out


@njit(cache=True)
def mlp_forward_batch(X, W1, b1, W2, b2, W3, b3):
    a1 = np.maximum(np.dot(X, W1.T) + b1, 0.0)
    a2 = np.maximum(np.dot(a1, W2.T) + b2, 0.0)
    return np.dot(a2, W3[0]) + b3[0]


@njit(cache=True)
def mlp_loss_grad(X, y, W1, b1, W2, b2, W3, b3):
    n = X.shape[0]
    z1 = np.dot(X, W1.T) + b1
    a1 = np.maximum(z1, 0.0)
    z2 = np.dot(a1, W2.T) + b2
    a2 = np.maximum(z2, 0.0)
    out = np.dot(a2, W3[0]) + b3[0]
    r = out - y
    loss = np.dot(r, r) / n

    d_out = (2.0 / n) * r
    gW3 = np.empty((1, a2.shape[1]))
    gW3[0] = np.dot(d_out, a2)
    gb3 = np.array([d_out.sum()])
    d_z2 = np.empty_like(z2)
    for s in range(n):
        for i in range(z2.shape[1]):
            d_z2[s, i] = d_out[s] * W3[0, i] if z2[s, i] > 0.0 else 0.0
    gW2 = np.dot(d_z2.T, a1)
    gb2 = d_z2.sum(axis=0)
    d_z1 = np.dot(d_z2, W2)
    for s in range(n):
        for i in range(z1.shape[1]):
            if z1[s, i] <= 0.0:
                d_z1[s, i] = 0.0
    gW1 = np.dot(d_z1.T, X)
    gb1 = d_z1.sum(axis=0)
    return loss, gW1, gb1, gW2, gb2, gW3, gb3


@njit(cache=True)
def sgd_epoch(X, y, perm, batch_size, lr, W1, b1, W2, b2, W3, b3):
    n = perm.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        loss, gW1, gb1, gW2, gb2, gW3, gb3 = mlp_loss_grad(
            X[idx], y[idx], W1, b1, W2, b2, W3, b3
        )
        total += loss * idx.shape[0]
        W1 -= lr * gW1
        b1 -= lr * gb1
        W2 -= lr * gW2
        b2 -= lr * gb2
        W3 -= lr * gW3
        b3 -= lr * gb3
    return total / n


@njit(cache=True)
def ekf_predict(x, P, dt, q):
    x_new = x.copy()
    for k in range(3):
        x_new[k] += dt * x[k + 3]
    # P' = F P F^T with F = [[I, dt I], [0, I]]
    FP = P.copy()
    for k in range(3):
        for c in range(6):
            FP[k, c] += dt * P[k + 3, c]
    P_new = FP.copy()
    for r in range(6):
        for k in range(3):
            P_new[r, k] += dt * FP[r, k + 3]
    q_pp = q * dt**3 / 3.0
    q_pv = q * dt**2 / 2.0
    q_vv = q * dt
    for k in range(3):
        P_new[k, k] += q_pp
        P_new[k, k + 3] += q_pv
        P_new[k + 3, k] += q_pv
        P_new[k + 3, k + 3] += q_vv
    for r in range(6):
        for c in range(r + 1, 6):
            m = 0.5 * (P_new[r, c] + P_new[c, r])
            P_new[r, c] = m
            P_new[c, r] = m
    return x_new, P_new


@njit(cache=True)
def range_jacobian(p, pi, pj, tdoa):
    h = np.zeros(6)
    ri = np.sqrt((p[0] - pi[0])**2 + (p[1] - pi[1])**2 + (p[2] - pi[2])**2)
    for k in range(3):
        h[k] = (p[k] - pi[k]) / ri
    pred = ri
    if tdoa:
        rj = np.sqrt((p[0] - pj[0])**2 + (p[1] - pj[1])**2 + (p[2] - pj[2])**2)
        for k in range(3):
            h[k] -= (p[k] - pj[k]) / rj
        pred -= rj
    return pred, h


@njit(cache=True)
def ekf_update(x, P, h, y_tilde, r):
    Ph = np.dot(P, h)
    s = np.dot(h, Ph) + r
    k = Ph / s
    x_new = x + k * y_tilde
    A = np.eye(6) - np.outer(k, h)
    P_new = np.dot(np.dot(A, P), A.T) + r * np.outer(k, k)
    for i in range(6):
        for j in range(i + 1, 6):
            m = 0.5 * (P_new[i, j] + P_new[j, i])
            P_new[i, j] = m
            P_new[j, i] = m
    return x_new, P_new
