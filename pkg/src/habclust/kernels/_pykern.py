"""Pure-numpy kernel backend.

Reference implementation of the hot kernels; the compiled backend in
_ckern.pyx mirrors these semantics exactly (same layout, same tie rules,
same empty-cluster repair), differing only in floating-point summation
order. Selected automatically when the extension is unavailable or via
HABCLUST_KERNELS=python.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from ._layout import fae_views, mlp_views, pair_indices

BACKEND_NAME = "python"


# ---------------------------------------------------------------------------
# paired-encoder autoencoder
# ---------------------------------------------------------------------------


def _fae_forward(v: dict, x: np.ndarray, pairs: np.ndarray):
    p2 = x[:, pairs]  # (B, W, 2)
    u = np.einsum("whc,bwc->bwh", v["enc_W1"], p2) + v["enc_b1"]
    h = np.tanh(u)
    s = (h * v["enc_w2"]).sum(axis=2) + v["enc_b2"]
    e = np.tanh(s)
    a = e @ v["lat_W"].T + v["lat_b"]
    z = np.tanh(a)
    g = z @ v["proj_v"].T + v["proj_c"]
    d = np.tanh(g)
    return p2, h, e, z, d


def _trunk_backward(gv: dict, v: dict, delta_d, h, e, z, d, p2):
    """Backprop from the per-pair projections down to the encoder inputs."""
    delta_g = delta_d * (1.0 - d * d)
    gv["proj_v"] += np.einsum("bw,bl->wl", delta_g, z)
    gv["proj_c"] += delta_g.sum(axis=0)
    delta_z = delta_g @ v["proj_v"]
    delta_a = delta_z * (1.0 - z * z)
    gv["lat_W"] += np.einsum("bl,bw->lw", delta_a, e)
    gv["lat_b"] += delta_a.sum(axis=0)
    delta_e = delta_a @ v["lat_W"]
    delta_s = delta_e * (1.0 - e * e)
    gv["enc_w2"] += np.einsum("bw,bwh->wh", delta_s, h)
    gv["enc_b2"] += delta_s.sum(axis=0)
    delta_h = delta_s[:, :, None] * v["enc_w2"][None, :, :]
    delta_u = delta_h * (1.0 - h * h)
    gv["enc_W1"] += np.einsum("bwh,bwc->whc", delta_u, p2)
    gv["enc_b1"] += delta_u.sum(axis=0)


def fae_value_grad(theta, x, m, h_width, lat, with_global, loss_kind):
    """Loss and flat gradient; loss_kind 0 = pairwise MSE, 1 = global MSE."""
    pairs = pair_indices(m)
    v = fae_views(theta, m, h_width, lat, with_global)
    grad = np.zeros_like(theta)
    gv = fae_views(grad, m, h_width, lat, with_global)
    b = x.shape[0]
    w = pairs.shape[0]

    p2, hh, e, z, d = _fae_forward(v, x, pairs)

    if loss_kind == 0:
        q = d[:, :, None] * v["dec_U1"] + v["dec_a1"]
        r = np.tanh(q)
        y = np.einsum("woh,bwh->bwo", v["dec_U2"], r) + v["dec_a2"]
        diff = y - p2
        loss = float(np.mean(diff * diff))
        delta_y = diff / (b * w)
        gv["dec_U2"] += np.einsum("bwo,bwh->woh", delta_y, r)
        gv["dec_a2"] += delta_y.sum(axis=0)
        delta_r = np.einsum("woh,bwo->bwh", v["dec_U2"], delta_y)
        delta_q = delta_r * (1.0 - r * r)
        gv["dec_U1"] += (delta_q * d[:, :, None]).sum(axis=0)
        gv["dec_a1"] += delta_q.sum(axis=0)
        delta_d = (delta_q * v["dec_U1"][None, :, :]).sum(axis=2)
    else:
        if not with_global:
            raise ValueError("model has no global decoding head")
        cpre = d @ v["glob_S1"].T + v["glob_b1"]
        rg = np.tanh(cpre)
        yg = rg @ v["glob_S2"].T + v["glob_b2"]
        diff = yg - x
        loss = float(np.mean(diff * diff))
        delta_yg = diff * (2.0 / (b * m))
        gv["glob_S2"] += delta_yg.T @ rg
        gv["glob_b2"] += delta_yg.sum(axis=0)
        delta_rg = delta_yg @ v["glob_S2"]
        delta_c = delta_rg * (1.0 - rg * rg)
        gv["glob_S1"] += delta_c.T @ d
        gv["glob_b1"] += delta_c.sum(axis=0)
        delta_d = delta_c @ v["glob_S1"]

    _trunk_backward(gv, v, delta_d, hh, e, z, d, p2)
    return loss, grad


def fae_encode(theta, x, m, h_width, lat, with_global):
    pairs = pair_indices(m)
    v = fae_views(theta, m, h_width, lat, with_global)
    _, _, _, z, _ = _fae_forward(v, x, pairs)
    return z


def fae_reconstruct(theta, x, m, h_width, lat, with_global):
    """Full forward pass: (latents, per-pair reconstructions, global recon).

    The global reconstruction is None for models without the global head.
    """
    pairs = pair_indices(m)
    v = fae_views(theta, m, h_width, lat, with_global)
    _, _, _, z, d = _fae_forward(v, x, pairs)
    q = d[:, :, None] * v["dec_U1"] + v["dec_a1"]
    r = np.tanh(q)
    y = np.einsum("woh,bwh->bwo", v["dec_U2"], r) + v["dec_a2"]
    if with_global:
        rg = np.tanh(d @ v["glob_S1"].T + v["glob_b1"])
        yg = rg @ v["glob_S2"].T + v["glob_b2"]
    else:
        yg = None
    return z, y, yg


# ---------------------------------------------------------------------------
# chain MLP (plain autoencoder variant)
# ---------------------------------------------------------------------------


def mlp_value_grad(theta, x, dims):
    """MSE reconstruction loss of a tanh chain (linear last layer) + gradient."""
    layers = mlp_views(theta, dims)
    grad = np.zeros_like(theta)
    glayers = mlp_views(grad, dims)
    n_layers = len(layers)
    acts = [x]
    for i, (w, bvec) in enumerate(layers):
        pre = acts[-1] @ w.T + bvec
        acts.append(pre if i == n_layers - 1 else np.tanh(pre))
    diff = acts[-1] - x
    b = x.shape[0]
    loss = float(np.mean(diff * diff))
    delta = diff * (2.0 / diff.size)
    for i in range(n_layers - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = glayers[i]
        if i != n_layers - 1:
            delta = delta * (1.0 - acts[i + 1] * acts[i + 1])
        gw += delta.T @ acts[i]
        gb += delta.sum(axis=0)
        if i > 0:
            delta = delta @ w
    return loss, grad


def mlp_encode(theta, x, dims, n_encode_layers):
    layers = mlp_views(theta, dims)
    out = x
    for w, bvec in layers[:n_encode_layers]:
        out = np.tanh(out @ w.T + bvec)
    return out


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def assign_nearest(points, centroids):
    """Nearest-centroid labels, ties resolved to the lowest centroid index."""
    d = cdist(points, centroids, "sqeuclidean")
    return d.argmin(axis=1).astype(np.int64)


def _repair_empty(points, labels, centroids, counts):
    """Move the point farthest from its centroid into each empty cluster."""
    empties = [int(j) for j in np.flatnonzero(counts == 0)]
    while empties:
        j = empties.pop(0)
        d = ((points - centroids[labels]) ** 2).sum(axis=1)
        p = int(d.argmax())
        old = int(labels[p])
        counts[old] -= 1
        centroids[j] = points[p]
        labels[p] = j
        counts[j] = 1
        if counts[old] == 0:
            empties.append(old)


def lloyd(points, centroids_init, max_iter):
    """Lloyd iterations from the given centroids until labels stabilize.

    Returns (centroids, labels, inertia, n_iter); deterministic for fixed
    inputs, no RNG involved.
    """
    centroids = centroids_init.copy()
    labels = assign_nearest(points, centroids)
    n_iter = 0
    k = centroids.shape[0]
    for _ in range(max_iter):
        n_iter += 1
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        nonzero = counts > 0
        centroids[nonzero] = sums[nonzero] / counts[nonzero, None]
        if not nonzero.all():
            _repair_empty(points, labels, centroids, counts)
        new_labels = assign_nearest(points, centroids)
        changed = bool((new_labels != labels).any())
        labels = new_labels
        if not changed:
            break
    inertia = float(((points - centroids[labels]) ** 2).sum())
    return centroids, labels, inertia, n_iter
