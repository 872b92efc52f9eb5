"""Independent oracles shared by the test modules."""

import numpy as np


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of
    every array in ``arrays`` (perturbed in place, then restored)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            fp = f()
            a[idx] = orig - h
            fm = f()
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_rel_err(analytic, numeric, floor=1e-7):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def dense_lgcn(user, item, edges, num_layers, mask=None):
    """Dense-matrix LGCN: mean of powers of the normalised (M+N)x(M+N) adjacency."""
    m, n = user.shape[0], item.shape[0]
    a = np.zeros((m + n, m + n))
    for e, (u, v) in enumerate(edges):
        if mask is None or mask[e]:
            a[u, m + v] = a[m + v, u] = 1.0
    deg = a.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    a_hat = inv[:, None] * a * inv[None, :]
    x = np.vstack([user, item])
    acc, cur = x.copy(), x
    for _ in range(num_layers):
        cur = a_hat @ cur
        acc = acc + cur
    acc /= num_layers + 1
    return acc[:m], acc[m:]


def brute_force_metrics(scores, known, relevant, k):
    """Loop-based P@K and N@K for one user (ties broken by smaller index)."""
    cands = [i for i in range(len(scores)) if i not in set(known)]
    cands.sort(key=lambda i: (-scores[i], i))
    top = cands[:k]
    hits = [1 if i in set(relevant) else 0 for i in top]
    prec = sum(hits) / k
    dcg = sum(h / np.log2(r + 2) for r, h in enumerate(hits))
    idcg = sum(1 / np.log2(r + 2) for r in range(min(len(relevant), k)))
    return prec, dcg / idcg
