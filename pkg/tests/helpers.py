"""Independent oracles shared by the test modules.

Everything here is written as plainly as possible (pure-Python loops,
no vectorized shortcuts) so the production code is checked against a
separately derived route.
"""

import math

from livmap.grid import CellId


def tau_oracle(x, y, variant="tau_b"):
    """Kendall correlation by explicit pair enumeration."""
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)
    assert n >= 2
    balance = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = (x[i] > x[j]) - (x[i] < x[j])
            dy = (y[i] > y[j]) - (y[i] < y[j])
            balance += dx * dy
    t0 = n * (n - 1) // 2
    if variant == "tau_a":
        return balance / float(t0)
    t1 = _tie_pairs(x)
    t2 = _tie_pairs(y)
    if t1 == t0 or t2 == t0:
        raise ZeroDivisionError("tau_b undefined on an all-tied input")
    return balance / math.sqrt(float((t0 - t1) * (t0 - t2)))


def _tie_pairs(values):
    groups = {}
    for v in values:
        groups[v] = groups.get(v, 0) + 1
    return sum(t * (t - 1) // 2 for t in groups.values())


def split_oracle(cells, squares, buffer_cells):
    """Label cells by direct per-cell enumeration of the Chebyshev rule."""
    labels = {}
    for cell in cells:
        label = "train"
        best = None
        for sq in squares:
            d = _chebyshev_to_square(cell, sq)
            if best is None or d < best:
                best = d
        if best == 0:
            label = "test"
        elif best is not None and best <= buffer_cells:
            label = "val"
        labels[cell] = label
    return labels


def _chebyshev_to_square(cell, sq):
    # Distance from a cell to the nearest cell of the square, coordinate-wise.
    best = None
    for sx in range(sq.origin.cx, sq.origin.cx + sq.side):
        for sy in range(sq.origin.cy, sq.origin.cy + sq.side):
            d = max(abs(cell.cx - sx), abs(cell.cy - sy))
            if best is None or d < best:
                best = d
    return best


def square_grid_cells(width, height):
    return [CellId(cx, cy) for cx in range(width) for cy in range(height)]


def random_disjoint_squares(rng, width, height, buffer_cells, max_squares=4):
    """Random square specs that stay disjoint after buffer expansion."""
    from livmap.splits import SquareSpec
    squares = []
    for _ in range(int(rng.integers(1, max_squares))):
        side = int(rng.integers(1, 4))
        for _attempt in range(20):
            ox = int(rng.integers(0, max(1, width - side + 1)))
            oy = int(rng.integers(0, max(1, height - side + 1)))
            candidate = SquareSpec(CellId(ox, oy), side)
            gap = 2 * buffer_cells + 1
            if all(_separated(candidate, other, gap) for other in squares):
                squares.append(candidate)
                break
    return squares


def _separated(a, b, gap):
    return (a.origin.cx + a.side - 1 + gap < b.origin.cx
            or b.origin.cx + b.side - 1 + gap < a.origin.cx
            or a.origin.cy + a.side - 1 + gap < b.origin.cy
            or b.origin.cy + b.side - 1 + gap < a.origin.cy)


def loss_of(params, aerial, ground, targets):
    """Scalar loss via the production forward path (used by gradient checks)."""
    from livmap.model import forward, mse_loss
    preds, _ = forward(params, aerial, ground, mode="train", update_running=False)
    return mse_loss(preds, targets)


def finite_difference_gradients(params, aerial, ground, targets, step=1e-4):
    """Central finite differences of the loss for every trainable field."""
    from livmap.model import TRAINABLE
    grads = {}
    for name in TRAINABLE:
        theta = getattr(params, name)
        grad = theta.copy().reshape(-1)
        flat = theta.reshape(-1)
        for k in range(flat.shape[0]):
            original = flat[k]
            flat[k] = original + step
            up = loss_of(params, aerial, ground, targets)
            flat[k] = original - step
            down = loss_of(params, aerial, ground, targets)
            flat[k] = original
            grad[k] = (up - down) / (2.0 * step)
        grads[name] = grad.reshape(theta.shape)
    return grads


def max_relative_error(analytic, numeric):
    """Max over entries of |a - n| / max(1, |a| + |n|).

    The unit floor keeps near-zero entries from blowing up the ratio;
    for entries of magnitude >= 1 this is a true relative error.
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        fa = a.reshape(-1)
        fn = n.reshape(-1)
        for k in range(fa.shape[0]):
            denom = max(1.0, abs(fa[k]) + abs(fn[k]))
            worst = max(worst, abs(fa[k] - fn[k]) / denom)
    return worst
