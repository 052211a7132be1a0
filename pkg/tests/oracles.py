"""Brute-force reference implementations used only by the tests."""
import numpy as np


def components_at(n, edges, values, t):
    """Connected components of the subgraph induced by nodes with value <= t (BFS)."""
    alive = [v for v in range(n) if values[v] <= t]
    adj = {v: [] for v in alive}
    for u, v in edges:
        if values[u] <= t and values[v] <= t:
            adj[u].append(v)
            adj[v].append(u)
    seen, count = set(), 0
    for s in alive:
        if s in seen:
            continue
        count += 1
        stack = [s]
        seen.add(s)
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
    return count


def exhaustive_wasserstein(a, b, p=1):
    """Minimum over every partial matching; unmatched points go to the diagonal."""
    a = [tuple(x) for x in np.asarray(a, float).reshape(-1, 2)]
    b = [tuple(x) for x in np.asarray(b, float).reshape(-1, 2)]
    diag = lambda x: ((x[1] - x[0]) / 2.0) ** p
    pair = lambda x, y: max(abs(x[0] - y[0]), abs(x[1] - y[1])) ** p
    best = [np.inf]

    def rec(i, used, acc):
        if acc >= best[0]:
            return
        if i == len(a):
            rest = sum(diag(b[j]) for j in range(len(b)) if j not in used)
            best[0] = min(best[0], acc + rest)
            return
        rec(i + 1, used, acc + diag(a[i]))
        for j in range(len(b)):
            if j not in used:
                rec(i + 1, used | {j}, acc + pair(a[i], b[j]))

    rec(0, frozenset(), 0.0)
    return best[0] ** (1.0 / p)


def midpoint_image(points, weights, xedges, yedges, sx, sy, sub=400):
    """Midpoint-rule integral of the Gaussian mixture over every pixel box."""
    P = len(xedges) - 1
    out = np.zeros((P, P))
    norm = 1.0 / (2 * np.pi * sx * sy)
    for i in range(P):
        hx = (xedges[i + 1] - xedges[i]) / sub
        xs = xedges[i] + hx * (np.arange(sub) + 0.5)
        for j in range(P):
            hy = (yedges[j + 1] - yedges[j]) / sub
            ys = yedges[j] + hy * (np.arange(sub) + 0.5)
            total = 0.0
            for (mx, my), w in zip(points, weights):
                gx = np.exp(-((xs - mx) ** 2) / (2 * sx**2))
                gy = np.exp(-((ys - my) ** 2) / (2 * sy**2))
                total += w * norm * gx.sum() * gy.sum() * hx * hy
            out[i, j] = total
    return out
