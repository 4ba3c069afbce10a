"""Pure-numpy kernels. Same signatures as the numba versions in ``_numba``."""
import numpy as np


def mlp_forward_one(x, W1, b1, W2, b2, W3, b3):
    a1 = np.maximum(W1 @ x + b1, 0.0)
    a2 = np.maximum(W2 @ a1 + b2, 0.0)
    return float((W3 @ a2 + b3)[0])


def mlp_forward_batch(X, W1, b1, W2, b2, W3, b3):
    a1 = np.maximum(X @ W1.T + b1, 0.0)
    a2 = np.maximum(a1 @ W2.T + b2, 0.0)
    return (a2 @ W3.T)[:, 0] + b3[0]


def mlp_loss_grad(X, y, W1, b1, W2, b2, W3, b3):
    n = X.shape[0]
    z1 = X @ W1.T + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ W2.T + b2
    a2 = np.maximum(z2, 0.0)
    out = (a2 @ W3.T)[:, 0] + b3[0]
    r = out - y
    loss = float(np.dot(r, r) / n)

    d_out = (2.0 / n) * r
    gW3 = (d_out @ a2)[None, :]
    gb3 = np.array([d_out.sum()])
    d_z2 = np.outer(d_out, W3[0]) * (z2 > 0.0)
    gW2 = d_z2.T @ a1
    gb2 = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ W2) * (z1 > 0.0)
    gW1 = d_z1.T @ X
    gb1 = d_z1.sum(axis=0)
    return loss, gW1, gb1, gW2, gb2, gW3, gb3


def sgd_epoch(X, y, perm, batch_size, lr, W1, b1, W2, b2, W3, b3):
    """One pass of mini-batch gradient descent, updating parameters in place.

    Returns the sample-weighted mean training loss seen during the pass.
    """
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


def ekf_predict(x, P, dt, q):
    """Constant-velocity propagation with white-acceleration process noise."""
    F = np.eye(6)
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    Q = np.zeros((6, 6))
    q_pp = q * dt**3 / 3.0
    q_pv = q * dt**2 / 2.0
    q_vv = q * dt
    for k in range(3):
        Q[k, k] = q_pp
        Q[k, k + 3] = Q[k + 3, k] = q_pv
        Q[k + 3, k + 3] = q_vv
    x_new = F @ x
    P_new = F @ P @ F.T + Q
    return x_new, 0.5 * (P_new + P_new.T)


def range_jacobian(p, pi, pj, tdoa):
    """Predicted range (or range difference) and its gradient w.r.t. the 6-state."""
    h = np.zeros(6)
    di = p - pi
    ri = np.sqrt(di @ di)
    h[:3] = di / ri
    pred = ri
    if tdoa:
        dj = p - pj
        rj = np.sqrt(dj @ dj)
        h[:3] -= dj / rj
        pred -= rj
    return pred, h


def ekf_update(x, P, h, y_tilde, r):
    """Scalar EKF update with the Joseph-form covariance."""
    Ph = P @ h
    s = h @ Ph + r
    k = Ph / s
    x_new = x + k * y_tilde
    A = np.eye(6) - np.outer(k, h)
    P_new = A @ P @ A.T + r * np.outer(k, k)
    return x_new, 0.5 * (P_new + P_new.T)
