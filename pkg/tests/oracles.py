"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (explicit Python loops, exhaustive
search) and shares no code with the package under test.
"""

from __future__ import annotations

import itertools
import math


def naive_matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            s = 0.0
            for k in range(inner):
                s += a[i][k] * b[k][j]
            out[i][j] = s
    return out


def naive_attention(Q, K, V, d_k):
    """Double-loop softmax attention on plain nested lists."""
    n_q, n_k, d_v = len(Q), len(K), len(V[0])
    out = [[0.0] * d_v for _ in range(n_q)]
    scale = math.sqrt(d_k)
    for i in range(n_q):
        logits = []
        for j in range(n_k):
            s = 0.0
            for m in range(len(Q[0])):
                s += Q[i][m] * K[j][m]
            logits.append(s / scale)
        top = max(logits)
        exps = [math.exp(l - top) for l in logits]
        z = sum(exps)
        for j in range(n_k):
            w = exps[j] / z
            for m in range(d_v):
                out[i][m] += w * V[j][m]
    return out


def _columns(mat, lo, hi):
    return [row[lo:hi] for row in mat]


def naive_multihead(x_q, x_kv, wq, wk, wv, n_heads):
    """Project with naive matmuls, run naive attention per head, concat."""
    q = naive_matmul(x_q, wq)
    k = naive_matmul(x_kv, wk)
    v = naive_matmul(x_kv, wv)
    d = len(q[0])
    d_k = d // n_heads
    outs = [
        naive_attention(
            _columns(q, h * d_k, (h + 1) * d_k),
            _columns(k, h * d_k, (h + 1) * d_k),
            _columns(v, h * d_k, (h + 1) * d_k),
            d_k,
        )
        for h in range(n_heads)
    ]
    return [
        [val for head in outs for val in head[i]] for i in range(len(x_q))
    ]


def naive_self_attention(q_state, e_t, wq, wk, wv, n_heads):
    x = [list(r) for r in q_state] + [list(r) for r in e_t]
    return naive_multihead(x, x, wq, wk, wv, n_heads)


def naive_cross_attention(a_s, e_i, wq, wk, wv, n_heads):
    return naive_multihead(
        [list(r) for r in a_s], [list(r) for r in e_i], wq, wk, wv, n_heads
    )


def optimal_two_partition(points):
    """Exhaustive minimum within-cluster sum of squares over all 2-way
    partitions; feasible for <= 20 points."""
    n = len(points)
    dim = len(points[0])
    best_cost, best_mask = math.inf, None
    for mask in range(1, 2 ** (n - 1)):  # fix point 0 in cluster 0
        groups = ([], [])
        for i in range(n):
            groups[(mask >> i) & 1].append(points[i])
        if not groups[0] or not groups[1]:
            continue
        cost = 0.0
        for grp in groups:
            centroid = [
                sum(p[d] for p in grp) / len(grp) for d in range(dim)
            ]
            for p in grp:
                cost += sum((p[d] - centroid[d]) ** 2 for d in range(dim))
        if cost < best_cost:
            best_cost, best_mask = cost, mask
    labels = [(best_mask >> i) & 1 for i in range(n)]
    return labels, best_cost


def brute_force_gate(clip_i, clip_t, emotion_score):
    """Direct restatement of the dataset gate predicates."""
    return (0.75 <= clip_i <= 0.9) and (clip_t >= 0.25) and (emotion_score > 0.3)


def brute_force_filter(clusters, min_size, sim_cap, emo_floor):
    return [
        c
        for c in clusters
        if c.size >= min_size
        and c.mean_pairwise_pixel_similarity <= sim_cap
        and c.mean_emotion_score >= emo_floor
    ]


def connected_components(n, edges):
    """Breadth-first components; returns the smallest member index per node."""
    adjacency = {i: [] for i in range(n)}
    for a, b in edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    label = [-1] * n
    for start in range(n):
        if label[start] != -1:
            continue
        frontier = [start]
        label[start] = start
        while frontier:
            node = frontier.pop()
            for nxt in adjacency[node]:
                if label[nxt] == -1:
                    label[nxt] = start
                    frontier.append(nxt)
    return label


def gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    vals = [math.exp(-((i - half) ** 2) / (2 * sigma * sigma))
            for i in range(size)]
    win = [[vals[i] * vals[j] for j in range(size)] for i in range(size)]
    total = sum(sum(row) for row in win)
    return [[v / total for v in row] for row in win]


def naive_ssim(x, y, window_size=11, sigma=1.5, max_val=255.0):
    """Per-window double-loop SSIM on 2-D grayscale arrays (nested lists)."""
    h, w = len(x), len(x[0])
    win = gaussian_window(window_size, sigma)
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    values = []
    for top in range(h - window_size + 1):
        for left in range(w - window_size + 1):
            mx = my = mxx = myy = mxy = 0.0
            for i in range(window_size):
                for j in range(window_size):
                    wt = win[i][j]
                    a = x[top + i][left + j]
                    b = y[top + i][left + j]
                    mx += wt * a
                    my += wt * b
                    mxx += wt * a * a
                    myy += wt * b * b
                    mxy += wt * a * b
            vx = mxx - mx * mx
            vy = myy - my * my
            cov = mxy - mx * my
            num = (2 * mx * my + c1) * (2 * cov + c2)
            den = (mx * mx + my * my + c1) * (vx + vy + c2)
            values.append(num / den)
    return sum(values) / len(values)
