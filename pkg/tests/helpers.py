import numpy as np


def perturbed(flow, scale, seed):
    """Replace every parameter with N(0, scale^2) noise."""
    rng = np.random.default_rng(seed)
    return flow.with_parameters([rng.normal(scale=scale, size=np.shape(p)) for p in flow.parameters()])


def fd_log_abs_det(fn, z, h=1e-5):
    d = z.size
    J = np.zeros((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (fn(z + e) - fn(z - e)) / (2 * h)
    return float(np.log(abs(np.linalg.det(J))))


def fd_param_gradient(loss_fn, params, i, j, h=1e-6):
    """Central difference of ``loss_fn(params)`` in entry ``j`` of parameter ``i``."""
    up = [p.copy() for p in params]
    dn = [p.copy() for p in params]
    up[i].flat[j] += h
    dn[i].flat[j] -= h
    return (loss_fn(up) - loss_fn(dn)) / (2 * h)
