"""Central finite-difference gradient checks for the tensor engine."""
import numpy as np

from voxelfill.tensor import backward

H = 1e-5
FLOOR = 1e-6  # relative error is measured against max(|analytic|, |numeric|, FLOOR)


def relative_error(a, n, floor=FLOOR):
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_gradients(loss_fn, leaves, n_samples=50, seed=0, h=H):
    """Compare backward() against central differences at sampled coordinates.

    ``loss_fn`` rebuilds the graph from the current leaf data and returns a
    scalar Tensor. Returns a list of (leaf index, flat index, analytic,
    numeric, relative error).
    """
    for leaf in leaves:
        leaf.grad = None
    backward(loss_fn())
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves]
    sizes = np.array([l.data.size for l in leaves])
    rng = np.random.default_rng(seed)
    picks = rng.choice(sizes.sum(), size=min(n_samples, sizes.sum()), replace=False)
    bounds = np.cumsum(sizes)
    results = []
    for flat in picks:
        li = int(np.searchsorted(bounds, flat, side="right"))
        idx = int(flat - (bounds[li - 1] if li else 0))
        leaf = leaves[li]
        view = leaf.data.reshape(-1)
        orig = view[idx]
        view[idx] = orig + h
        up = loss_fn().item()
        view[idx] = orig - h
        down = loss_fn().item()
        view[idx] = orig
        numeric = (up - down) / (2 * h)
        a = analytic[li].reshape(-1)[idx]
        results.append((li, idx, a, numeric, relative_error(a, numeric)))
    return results


def max_error(results):
    return max(r[4] for r in results)
