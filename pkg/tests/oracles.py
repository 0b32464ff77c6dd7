"""Independent brute-force reference implementations shared by the tests."""
import numpy as np


def closure_labels(mask, vt, ht):
    """Brute-force oracle: connected components of the pairwise elliptical relation."""
    pts = np.argwhere(mask)
    n = len(pts)
    labels = np.zeros(mask.shape, dtype=np.int32)
    if n == 0:
        return labels, 0
    d = pts[:, None, :] - pts[None, :, :]
    adj = (d[..., 0] / vt) ** 2 + (d[..., 1] / ht) ** 2 < 1
    comp = -np.ones(n, dtype=int)
    k = 0
    for s in range(n):  # pts are row-major, so ids follow first-encountered pixel
        if comp[s] >= 0:
            continue
        k += 1
        comp[s] = k
        frontier = [s]
        while frontier:
            u = frontier.pop()
            for v in np.nonzero(adj[u] & (comp < 0))[0]:
                comp[v] = k
                frontier.append(v)
    labels[pts[:, 0], pts[:, 1]] = comp
    return labels, k


def bfs_components(mask):
    """Brute-force 8-connected components, as sets of (row, col)."""
    seen, comps = set(), []
    for p in map(tuple, np.argwhere(mask)):
        if p in seen:
            continue
        comp, stack = set([p]), [p]
        seen.add(p)
        while stack:
            r, c = stack.pop()
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    q = (r + dr, c + dc)
                    if (0 <= q[0] < mask.shape[0] and 0 <= q[1] < mask.shape[1]
                            and mask[q] and q not in seen):
                        seen.add(q)
                        comp.add(q)
                        stack.append(q)
        comps.append(comp)
    return comps


def brute_window_max(image, vw, hw):
    h, w = image.shape
    out = np.zeros_like(image)
    for i in range(h):
        for j in range(w):
            out[i, j] = max(
                image[i + di, j + dj]
                for di in range(-vw, vw)
                for dj in range(-hw, hw)
                if 0 <= i + di < h and 0 <= j + dj < w
            )
    return out
