"""Global training loop, the centralized reference trainer and ablations."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .client import ClientState, DivergenceError, init_client, local_train_round
from .data import RatingDataset, make_kfold, mark_cold
from .model import (
    PARALLEL_ROUND,
    SEQUENTIAL,
    HyperParams,
    item_side_gradients,
    predict,
    user_side_gradients,
)
from .server import ServerState, apply_upload, init_server, snapshot
from .stats import MetricPair, score
from .streams import CLIENT_INIT, SCHEDULE, SERVER_INIT, VISIT_ORDER, stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    objective: float
    mae: float
    rmse: float
    seconds: float


@dataclass(eq=False)
class TrainReport:
    records: list[RoundRecord]
    server: ServerState
    clients: list[ClientState]
    hp: HyperParams

    @property
    def final(self) -> RoundRecord:
        return self.records[-1]

    def surface_sizes(self) -> np.ndarray:
        """Number of upload keys per user (zero for inactive users)."""
        return np.array([len(c.surface) if c.active else 0 for c in self.clients])

    def user_params(self) -> tuple[np.ndarray, np.ndarray]:
        C = np.stack([c.c for c in self.clients]) if self.clients else np.empty((0, self.hp.factors))
        a = np.array([c.a for c in self.clients], dtype=np.float64)
        return C, a


def make_predictor(C, a, S, b, bias_enabled: bool = True):
    def predictor(users, items):
        dots = np.einsum("nk,nk->n", C[users], S[items])
        return a[users] + b[items] + dots if bias_enabled else dots
    return predictor


def evaluate(test: RatingDataset, C, a, S, b, hp: HyperParams, bounds) -> MetricPair:
    cold = test.cold
    return score(
        test,
        make_predictor(C, a, S, b, hp.bias_enabled),
        clamp_bounds=bounds if hp.clamp_predictions else None,
        cold=cold,
    )


def client_objective(client: ClientState, server: ServerState, t: int, hp: HyperParams) -> float:
    """Round-``t`` regularized loss of one client over its rated and synthetic items."""
    if not client.active:
        return 0.0
    surface = client.surface
    S = server.S[surface]
    b = server.b[surface] if hp.bias_enabled else np.zeros(len(surface))
    a = client.a if hp.bias_enabled else 0.0
    pred = a + b + S @ client.c
    n_real = len(client.items)
    if t <= hp.t_hf:
        fill = np.full(len(surface) - n_real, client.user_mean)
    else:
        fill = np.clip(pred[n_real:], client.r_min, client.r_max)
    target = np.concatenate([client.ratings, fill])
    err = target - pred
    penalty = (
        len(surface) * (a * a + client.c @ client.c)
        + np.sum(S * S)
        + b @ b
    )
    return float(0.5 * err @ err + 0.5 * hp.lam * penalty)


def train_objective(clients, server, t, hp) -> float:
    return float(sum(client_objective(c, server, t, hp) for c in clients))


def _bounds(train: RatingDataset, test: RatingDataset | None):
    if test is None:
        return train.r_min, train.r_max
    return min(train.r_min, test.r_min), max(train.r_max, test.r_max)


def run_training(
    train: RatingDataset,
    test: RatingDataset | None,
    hp: HyperParams,
    on_round: Callable[[RoundRecord, list, ServerState], None] | None = None,
) -> TrainReport:
    """Federated training for ``hp.rounds`` global rounds.

    In ``sequential`` mode clients go one at a time in a freshly shuffled
    order each round, each downloading the server state left by the client
    before it.  In ``parallel_round`` mode every client trains against the
    round-start state and the uploads are applied afterwards in client index
    order.  After each round the training objective and, when ``test`` is
    given, clamped test MAE/RMSE are recorded.
    """
    if test is not None and (test.n_users != train.n_users or test.n_items != train.n_items):
        raise ValueError("train and test must share the same user/item universe")
    if test is not None and test.cold is None:
        test = mark_cold(train, test)
    bounds = _bounds(train, test)
    clients = [
        init_client(u, items, ratings, hp, train.n_items, bounds[0], bounds[1])
        for u, (items, ratings) in enumerate(train.by_user())
    ]
    active = np.array([c.user for c in clients if c.active], dtype=np.int64)
    server = init_server(train.n_items, hp)
    schedule = stream(hp.seed, SCHEDULE)
    records: list[RoundRecord] = []
    best_rmse, stale = np.inf, 0

    for t in range(1, hp.rounds + 1):
        start = time.perf_counter()
        if hp.schedule == SEQUENTIAL:
            for u in schedule.permutation(active):
                client = clients[u]
                upload = local_train_round(client, snapshot(server, client.surface), t, hp)
                apply_upload(server, upload)
        else:
            snap = snapshot(server)
            uploads = [local_train_round(clients[u], snap, t, hp) for u in active]
            for upload in uploads:
                apply_upload(server, upload)
        server.round = t
        if not (np.isfinite(server.S).all() and np.isfinite(server.b).all()):
            raise DivergenceError(t, -1, "non-finite server parameter")

        objective = train_objective(clients, server, t, hp)
        if test is not None and len(test):
            C = np.stack([c.c for c in clients])
            a = np.array([c.a for c in clients])
            m = evaluate(test, C, a, server.S, server.b, hp, bounds)
            mae, rmse = m.mae, m.rmse
        else:
            mae = rmse = float("nan")
        record = RoundRecord(t, objective, mae, rmse, time.perf_counter() - start)
        records.append(record)
        log.debug("round %d objective %.6f mae %.4f rmse %.4f", t, objective, mae, rmse)
        if on_round is not None:
            on_round(record, clients, server)

        if hp.patience is not None and np.isfinite(rmse):
            if rmse < best_rmse:
                best_rmse, stale = rmse, 0
            else:
                stale += 1
                if stale >= hp.patience:
                    log.info("early stop at round %d", t)
                    break

    return TrainReport(records=records, server=server, clients=clients, hp=hp)


def centralized_oracle(
    train: RatingDataset,
    hp: HyperParams,
    on_round: Callable[[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray], None] | None = None,
):
    """Plain SGD on the biased objective with all parameters in one place.

    Users are visited in the same seeded order as sequential federated
    training, each for ``t_local`` passes over its own ratings; a user's item
    updates are held back and applied once that user is done.  Synthetic
    filling plays no part here.  Returns ``(C, a, S, b)``.
    """
    n_users, n_items, f = train.n_users, train.n_items, hp.factors
    per_user = train.by_user()
    C = np.zeros((n_users, f))
    a = np.zeros(n_users)
    S = stream(hp.seed, SERVER_INIT).uniform(0.0, hp.init_scale, size=(n_items, f))
    b = np.zeros(n_items)
    active = np.array([u for u in range(n_users) if len(per_user[u][0])], dtype=np.int64)
    orders = {}
    for u in active.tolist():
        C[u] = stream(hp.seed, CLIENT_INIT, u).uniform(0.0, hp.init_scale, size=f)
        orders[u] = stream(hp.seed, VISIT_ORDER, u)
    schedule = stream(hp.seed, SCHEDULE)
    bias = hp.bias_enabled

    for t in range(1, hp.rounds + 1):
        for u in schedule.permutation(active).tolist():
            items, ratings = per_user[u]
            pending = []
            for p in range(hp.t_local):
                last = p == hp.t_local - 1
                for j in orders[u].permutation(len(items)):
                    i = items[j]
                    pred = predict(C[u], a[u], S[i], b[i], bias)
                    delta = ratings[j] - pred
                    if last:
                        pending.append((i, *item_side_gradients(delta, S[i], b[i], C[u], hp.lam, hp.eta)))
                    gc, ga = user_side_gradients(delta, C[u], a[u], S[i], hp.lam, hp.eta)
                    C[u] = C[u] - gc
                    if bias:
                        a[u] = a[u] - ga
            for i, gs, gb in pending:
                S[i] = S[i] - gs
                if bias:
                    b[i] = b[i] - gb
        if not (np.isfinite(C).all() and np.isfinite(S).all()):
            raise DivergenceError(t, -1)
        if on_round is not None:
            on_round(t, C, a, S, b)
    return C, a, S, b


@dataclass(frozen=True)
class AblationRow:
    variant: str
    bias_enabled: bool
    rho: int
    fold: int
    mae: float
    rmse: float
    surface: np.ndarray = field(repr=False, compare=False)


def variant_name(bias_enabled: bool, rho: int) -> str:
    return f"{'bias' if bias_enabled else 'nobias'}-rho{rho}"


def ablation_suite(
    ds: RatingDataset,
    hp: HyperParams,
    rhos: Sequence[int] = (0,),
    biases: Sequence[bool] = (True, False),
    k: int = 5,
    split_seed: int = 0,
    folds: Sequence[int] | None = None,
) -> list[AblationRow]:
    """Train every (bias, rho) variant on every fold and collect test metrics."""
    plan = make_kfold(ds, k, split_seed)
    rows = []
    for fold in (range(k) if folds is None else folds):
        train, test = plan.datasets(ds, fold)
        for bias in biases:
            for rho in rhos:
                run_hp = replace(hp, bias_enabled=bias, rho=rho, filling_enabled=rho > 0)
                report = run_training(train, test, run_hp)
                rows.append(AblationRow(
                    variant=variant_name(bias, rho),
                    bias_enabled=bias,
                    rho=rho,
                    fold=fold,
                    mae=report.final.mae,
                    rmse=report.final.rmse,
                    surface=report.surface_sizes(),
                ))
    return rows


__all__ = [
    "PARALLEL_ROUND",
    "SEQUENTIAL",
    "AblationRow",
    "RoundRecord",
    "TrainReport",
    "ablation_suite",
    "centralized_oracle",
    "evaluate",
    "run_training",
    "train_objective",
]
