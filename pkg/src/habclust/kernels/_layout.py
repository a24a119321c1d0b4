"""Canonical flat parameter layout shared by both kernel backends.

All network weights live in ONE contiguous float64 vector so the Adam
driver, serialization and finite-difference checks can treat models
uniformly. Component blocks are laid out in this fixed order (W = number
of modality pairs, H = hidden width, L = latent width, M = modalities):

  enc_W1   (W, H, 2)   pair-encoder input weights
  enc_b1   (W, H)      pair-encoder hidden biases
  enc_w2   (W, H)      pair-encoder output weights (hidden -> scalar)
  enc_b2   (W,)        pair-encoder output biases
  lat_W    (L, W)      latent mixing weights
  lat_b    (L,)        latent biases
  proj_v   (W, L)      per-pair latent projections (latent -> scalar)
  proj_c   (W,)        projection biases
  dec_U1   (W, H)      pair-decoder input weights (scalar -> hidden)
  dec_a1   (W, H)      pair-decoder hidden biases
  dec_U2   (W, 2, H)   pair-decoder output weights
  dec_a2   (W, 2)      pair-decoder output biases
  glob_S1  (H, W)      global decoder input weights   } only when the
  glob_b1  (H,)        global decoder hidden biases   } model carries a
  glob_S2  (M, H)      global decoder output weights  } global decoding
  glob_b2  (M,)        global decoder output biases   } head

The chain MLP (plain autoencoder variant) uses per-layer (W_l, b_l) blocks
in layer order, W_l stored (out, in) row-major.
"""

from __future__ import annotations

import itertools

import numpy as np


def pair_indices(n_modalities: int) -> np.ndarray:
    """Modality index pairs in lexicographic order, shape (W, 2)."""
    return np.array(list(itertools.combinations(range(n_modalities), 2)), dtype=np.int64)


def n_pairs(n_modalities: int) -> int:
    return n_modalities * (n_modalities - 1) // 2


def fae_param_count(m: int, h: int, lat: int, with_global: bool) -> int:
    w = n_pairs(m)
    total = w * (h * 2 + h + h + 1)  # encoders
    total += lat * w + lat  # latent mixing
    total += w * (lat + 1)  # projections
    total += w * (h + h + 2 * h + 2)  # pair decoders
    if with_global:
        total += h * w + h + m * h + m
    return total


def fae_views(theta: np.ndarray, m: int, h: int, lat: int, with_global: bool) -> dict:
    """Named views into the flat vector; mutating a view mutates theta."""
    w = n_pairs(m)
    views = {}
    off = 0

    def take(name, shape):
        nonlocal off
        size = int(np.prod(shape))
        views[name] = theta[off : off + size].reshape(shape)
        off += size

    take("enc_W1", (w, h, 2))
    take("enc_b1", (w, h))
    take("enc_w2", (w, h))
    take("enc_b2", (w,))
    take("lat_W", (lat, w))
    take("lat_b", (lat,))
    take("proj_v", (w, lat))
    take("proj_c", (w,))
    take("dec_U1", (w, h))
    take("dec_a1", (w, h))
    take("dec_U2", (w, 2, h))
    take("dec_a2", (w, 2))
    if with_global:
        take("glob_S1", (h, w))
        take("glob_b1", (h,))
        take("glob_S2", (m, h))
        take("glob_b2", (m,))
    if off != theta.shape[0]:
        raise ValueError(f"theta length {theta.shape[0]} does not match layout size {off}")
    return views


def fae_component_shapes(m: int, h: int, lat: int, with_global: bool) -> list[tuple[str, tuple]]:
    """(name, shape) in layout order; used by init and serialization."""
    w = n_pairs(m)
    shapes = [
        ("enc_W1", (w, h, 2)),
        ("enc_b1", (w, h)),
        ("enc_w2", (w, h)),
        ("enc_b2", (w,)),
        ("lat_W", (lat, w)),
        ("lat_b", (lat,)),
        ("proj_v", (w, lat)),
        ("proj_c", (w,)),
        ("dec_U1", (w, h)),
        ("dec_a1", (w, h)),
        ("dec_U2", (w, 2, h)),
        ("dec_a2", (w, 2)),
    ]
    if with_global:
        shapes += [
            ("glob_S1", (h, w)),
            ("glob_b1", (h,)),
            ("glob_S2", (m, h)),
            ("glob_b2", (m,)),
        ]
    return shapes


def mlp_param_count(dims: list[int]) -> int:
    return sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))


def mlp_views(theta: np.ndarray, dims: list[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """[(W_l, b_l), ...] views into the flat vector, layer by layer."""
    layers, off = [], 0
    for i in range(len(dims) - 1):
        n_out, n_in = dims[i + 1], dims[i]
        w = theta[off : off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        b = theta[off : off + n_out]
        off += n_out
        layers.append((w, b))
    if off != theta.shape[0]:
        raise ValueError(f"theta length {theta.shape[0]} does not match layout size {off}")
    return layers
