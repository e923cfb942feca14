"""Central finite-difference oracle shared by the neural and acceptance tests."""

import numpy as np

from lccs_tuner.neural import backward, forward

FD_STEP = 1e-5


def scalar_objective(net, x, upstream):
    return float(np.sum(upstream * forward(net, x)))


def fd_param_grad(net, x, upstream, layer, index, h=FD_STEP):
    p = net.params[layer]
    old = p[index]
    p[index] = old + h
    up = scalar_objective(net, x, upstream)
    p[index] = old - h
    down = scalar_objective(net, x, upstream)
    p[index] = old
    return (up - down) / (2 * h)


def fd_input_grad(net, x, upstream, h=FD_STEP):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (scalar_objective(net, xp, upstream) - scalar_objective(net, xm, upstream)) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_case(net, x, upstream, rng, max_entries=None):
    """Worst relative error between analytic and numeric gradients.

    Every parameter entry is probed unless ``max_entries`` caps the number of
    randomly chosen entries per parameter array.
    """
    grads, dx = backward(net, x, upstream)
    worst = rel_error(dx, fd_input_grad(net, x, upstream))
    for layer, p in enumerate(net.params):
        idx = list(np.ndindex(p.shape))
        if max_entries is not None and len(idx) > max_entries:
            pick = rng.choice(len(idx), size=max_entries, replace=False)
            idx = [idx[k] for k in pick]
        analytic = np.array([grads[layer][i] for i in idx])
        numeric = np.array([fd_param_grad(net, x, upstream, layer, i) for i in idx])
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def randomize(net, rng, scale=0.5):
    """Replace all parameters with O(scale) values so no layer is near-silent."""
    net.set_params([rng.normal(0.0, scale, size=p.shape) for p in net.params])
    return net
