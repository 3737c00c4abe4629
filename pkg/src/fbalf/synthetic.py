"""Planted low-rank rating fixtures with user and item offsets."""

from __future__ import annotations

import numpy as np

from .data import RatingDataset, from_arrays

R_MIN, R_MAX = 1.0, 5.0


def generate_synthetic(
    users: int = 50,
    items: int = 40,
    rank: int = 3,
    user_bias_spread: float = 0.5,
    item_bias_spread: float = 0.5,
    noise_sigma: float = 0.1,
    seed: int = 0,
    density: float = 0.3,
    mean: float = 3.0,
    interaction_std: float = 0.6,
    out_path=None,
    return_truth: bool = False,
):
    """Sample a sparse 1-5 star rating matrix from a planted model.

    Each observed cell is ``c_u . s_i + a_u + b_i + mean + noise``, rounded to
    the nearest half star and clamped to [1, 5].  Offsets are uniform on
    ``[-spread, spread]``; the interaction term has standard deviation about
    ``interaction_std``.  Cells are observed independently with probability ``density``.

    With ``out_path`` the ratings are also written as ``user,item,rating``
    CSV with a header row.  With ``return_truth`` the planted parameters are
    returned as a second value.
    """
    rng = np.random.default_rng(seed)
    scale = (interaction_std / np.sqrt(rank)) ** 0.5
    C = rng.normal(0.0, scale, size=(users, rank))
    S = rng.normal(0.0, scale, size=(items, rank))
    a = rng.uniform(-user_bias_spread, user_bias_spread, size=users) if user_bias_spread else np.zeros(users)
    b = rng.uniform(-item_bias_spread, item_bias_spread, size=items) if item_bias_spread else np.zeros(items)
    mask = rng.random((users, items)) < density
    u_idx, i_idx = np.nonzero(mask)
    noise = rng.normal(0.0, noise_sigma, size=len(u_idx))
    raw = np.einsum("nk,nk->n", C[u_idx], S[i_idx]) + a[u_idx] + b[i_idx] + mean + noise
    ratings = np.clip(np.round(raw * 2.0) / 2.0, R_MIN, R_MAX)

    ds = from_arrays(u_idx, i_idx, ratings, R_MIN, R_MAX)
    if ds.n_users < users or ds.n_items < items:
        ds = _full_universe(ds, users, items)
    if out_path is not None:
        write_csv(ds, out_path)
    if return_truth:
        return ds, {"C": C, "S": S, "a": a, "b": b, "mean": mean}
    return ds


def _full_universe(ds: RatingDataset, users: int, items: int) -> RatingDataset:
    from dataclasses import replace

    return replace(
        ds,
        user_ids=tuple(str(u) for u in range(users)),
        item_ids=tuple(str(i) for i in range(items)),
    )


def write_csv(ds: RatingDataset, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("user,item,rating\n")
        for u, i, r in ds.triples():
            fh.write(f"{ds.user_ids[u]},{ds.item_ids[i]},{r:g}\n")


def standard_fixture(seed: int = 0) -> RatingDataset:
    """50 users x 40 items, rank 3, offsets on [-0.5, 0.5], noise 0.1."""
    return generate_synthetic(50, 40, 3, 0.5, 0.5, 0.1, seed=seed)


def planted_offset_fixture(seed: int = 0) -> RatingDataset:
    """Sparse 50 x 40 fixture with per-user offsets on [-1, 1].

    About six ratings per user and a strong rank-3 interaction: the regime
    where a user's offset cannot be recovered cheaply through the factors.
    """
    return generate_synthetic(50, 40, 3, 1.0, 0.5, 0.1, seed=seed, density=0.15, interaction_std=1.0)
