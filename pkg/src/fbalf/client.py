"""One user's private state and the local half of a training round.

A client never sends ratings or the rated/synthetic split.  Its only
outgoing message is a :class:`GradientUpload` keyed by the union of rated
and synthetic items.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import HyperParams, clamp, item_side_gradients, predict, user_side_gradients
from .server import Snapshot
from .streams import CLIENT_INIT, FILLING, VISIT_ORDER, stream


class DivergenceError(FloatingPointError):
    def __init__(self, round: int, user: int, message: str = "non-finite parameter"):
        super().__init__(f"round {round}, user {user}: {message}")
        self.round = round
        self.user = user


@dataclass(frozen=True, eq=False)
class GradientUpload:
    """Scaled item increments, row ``j`` belonging to ``items[j]``."""

    user: int
    items: np.ndarray
    grad_s: np.ndarray
    grad_b: np.ndarray

    def keys(self) -> frozenset[int]:
        return frozenset(self.items.tolist())

    def entries(self) -> dict[int, tuple[np.ndarray, float]]:
        return {int(i): (g, float(gb)) for i, g, gb in zip(self.items, self.grad_s, self.grad_b)}

    def __len__(self) -> int:
        return len(self.items)


@dataclass(eq=False)
class ClientState:
    user: int
    items: np.ndarray
    ratings: np.ndarray
    synthetic: np.ndarray
    c: np.ndarray
    a: float
    user_mean: float
    r_min: float
    r_max: float
    order_rng: np.random.Generator = field(repr=False)

    @property
    def active(self) -> bool:
        return len(self.items) > 0

    @property
    def surface(self) -> np.ndarray:
        """Every item this client uploads for: rated first, then synthetic."""
        return np.concatenate([self.items, self.synthetic])


def filling_size(n_rated: int, rho: int, n_items: int) -> int:
    return min(rho * n_rated, n_items - n_rated)


def init_client(
    user: int,
    items,
    ratings,
    hp: HyperParams,
    n_items: int,
    r_min: float,
    r_max: float,
) -> ClientState:
    """Set up a client from its private ratings.

    Factors start at U(0, init_scale), the bias at zero.  The synthetic item
    set is drawn once here and kept for the whole run.  A client with no
    ratings is inactive: it gets no factors and never uploads.
    """
    order = np.argsort(items, kind="stable")
    items = np.asarray(items, dtype=np.int64)[order]
    ratings = np.asarray(ratings, dtype=np.float64)[order]
    order_rng = stream(hp.seed, VISIT_ORDER, user)
    if len(items) == 0:
        return ClientState(user, items, ratings, np.empty(0, np.int64), np.zeros(hp.factors),
                           0.0, 0.0, r_min, r_max, order_rng)

    c = stream(hp.seed, CLIENT_INIT, user).uniform(0.0, hp.init_scale, size=hp.factors)
    size = filling_size(len(items), hp.effective_rho, n_items)
    if size > 0:
        unrated = np.setdiff1d(np.arange(n_items), items, assume_unique=True)
        synthetic = np.sort(stream(hp.seed, FILLING, user).choice(unrated, size=size, replace=False))
    else:
        synthetic = np.empty(0, np.int64)
    return ClientState(
        user=user,
        items=items,
        ratings=ratings,
        synthetic=synthetic.astype(np.int64),
        c=c,
        a=0.0,
        user_mean=float(ratings.mean()),
        r_min=r_min,
        r_max=r_max,
        order_rng=order_rng,
    )


def _synthetic_target(state: ClientState, t: int, prediction: float, hp: HyperParams) -> float:
    if t <= hp.t_hf:
        return state.user_mean
    return clamp(prediction, state.r_min, state.r_max)


def synthetic_rating(state: ClientState, item: int, t: int, s_i, b_i: float, hp: HyperParams) -> float:
    """Filling value for a synthetic item at global round ``t``.

    The user's mean rating up to and including round ``t_hf``, afterwards the
    model's own prediction clamped to the rating scale.
    """
    if item not in set(state.synthetic.tolist()):
        raise ValueError(f"item {item} is not in the synthetic set of user {state.user}")
    return _synthetic_target(state, t, predict(state.c, state.a, s_i, b_i, hp.bias_enabled), hp)


def local_train_round(
    state: ClientState,
    snap: Snapshot,
    t: int,
    hp: HyperParams,
    trace: list | None = None,
) -> GradientUpload:
    """Run ``t_local`` SGD passes over the client's items and build its upload.

    Item parameters stay frozen at the snapshot.  ``c`` and ``a`` are updated
    after every element.  On the last pass each element's item increment is
    recorded, computed from the same state as that element's user increment.

    If ``trace`` is a list, one tuple ``(t, pass, item, observed, target,
    c, a)`` per visited element is appended, with ``c``/``a`` as they were
    when the element's prediction was made.
    """
    surface = state.surface
    S_loc, b_loc = snap.take(surface)
    n_real = len(state.items)
    ratings = state.ratings
    eta, lam, bias = hp.eta, hp.lam, hp.bias_enabled
    grad_s = np.empty((len(surface), hp.factors))
    grad_b = np.zeros(len(surface))
    c, a = state.c, state.a

    for p in range(hp.t_local):
        final = p == hp.t_local - 1
        for j in state.order_rng.permutation(len(surface)):
            s_i = S_loc[j]
            b_i = b_loc[j]
            pred = predict(c, a, s_i, b_i, bias)
            if j < n_real:
                target = ratings[j]
            else:
                target = _synthetic_target(state, t, pred, hp)
            if trace is not None:
                trace.append((t, p, int(surface[j]), j < n_real, float(target), c.copy(), a))
            delta = target - pred
            if final:
                gs, gb = item_side_gradients(delta, s_i, b_i, c, lam, eta)
                grad_s[j] = gs
                if bias:
                    grad_b[j] = gb
            gc, ga = user_side_gradients(delta, c, a, s_i, lam, eta)
            c = c - gc
            if bias:
                a = a - ga
        if not (np.isfinite(c).all() and np.isfinite(a)):
            raise DivergenceError(t, state.user)

    state.c, state.a = c, float(a)
    if not (np.isfinite(grad_s).all() and np.isfinite(grad_b).all()):
        raise DivergenceError(t, state.user, "non-finite item gradient")
    return GradientUpload(user=state.user, items=surface, grad_s=grad_s, grad_b=grad_b)
