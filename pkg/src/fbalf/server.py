"""Parameter server holding item factors and item biases."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .model import HyperParams
from .streams import SERVER_INIT, stream

HEADER = "fbalf-server v1"


class UploadRejected(ValueError):
    def __init__(self, user: int, message: str):
        super().__init__(f"upload from user {user} rejected: {message}")
        self.user = user


@dataclass(eq=False)
class ServerState:
    S: np.ndarray
    b: np.ndarray
    round: int = 0

    @property
    def n_items(self) -> int:
        return self.S.shape[0]

    @property
    def factors(self) -> int:
        return self.S.shape[1]


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Immutable copy of ``(s_i, b_i)`` for a sorted set of item indices."""

    items: np.ndarray
    S: np.ndarray
    b: np.ndarray

    def take(self, items) -> tuple[np.ndarray, np.ndarray]:
        """Rows for ``items`` in the requested order."""
        items = np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self.items, items)
        pos = np.minimum(pos, max(len(self.items) - 1, 0))
        if len(items) and (len(self.items) == 0 or np.any(self.items[pos] != items)):
            raise KeyError("snapshot does not cover the requested items")
        return self.S[pos], self.b[pos]

    def __len__(self) -> int:
        return len(self.items)


def init_server(n_items: int, hp: HyperParams) -> ServerState:
    rng = stream(hp.seed, SERVER_INIT)
    S = rng.uniform(0.0, hp.init_scale, size=(n_items, hp.factors))
    return ServerState(S=S, b=np.zeros(n_items))


def snapshot(state: ServerState, items=None) -> Snapshot:
    """Read-only view of the current item parameters (all items by default)."""
    if items is None:
        items = np.arange(state.n_items)
    items = np.unique(np.asarray(items, dtype=np.int64))
    if len(items) and (items[0] < 0 or items[-1] >= state.n_items):
        raise IndexError("item index out of range")
    S = state.S[items]
    b = state.b[items]
    S.flags.writeable = False
    b.flags.writeable = False
    items.flags.writeable = False
    return Snapshot(items=items, S=S, b=b)


def apply_upload(state: ServerState, upload) -> ServerState:
    """Subtract one client's item increments from ``S`` and ``b`` in place.

    The upload is validated as a whole before anything is written, so a
    rejected upload leaves the state untouched.
    """
    items = upload.items
    if len(items) == 0:
        return state
    if items.min() < 0 or items.max() >= state.n_items:
        raise UploadRejected(upload.user, "item index out of range")
    if len(np.unique(items)) != len(items):
        raise UploadRejected(upload.user, "repeated item key")
    if upload.grad_s.shape != (len(items), state.factors):
        raise UploadRejected(upload.user, f"gradient shape {upload.grad_s.shape}")
    if not (np.isfinite(upload.grad_s).all() and np.isfinite(upload.grad_b).all()):
        raise UploadRejected(upload.user, "non-finite gradient")
    state.S[items] = state.S[items] - upload.grad_s
    state.b[items] = state.b[items] - upload.grad_b
    return state


def dump_server(state: ServerState, path) -> None:
    """Write a text checkpoint: a header line, then ``f`` factors and the bias per item."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{HEADER} f={state.factors} items={state.n_items} round={state.round}\n")
        for row, bias in zip(state.S, state.b):
            fh.write(" ".join(repr(float(x)) for x in row))
            fh.write(f" {float(bias)!r}\n")


_HEADER_RE = re.compile(r"^fbalf-server v1 f=(\d+) items=(\d+)(?: round=(\d+))?\s*$")


def load_server(path: str | os.PathLike) -> ServerState:
    with open(path, encoding="ascii") as fh:
        head = fh.readline()
        m = _HEADER_RE.match(head)
        if not m:
            raise ValueError(f"not an fbalf-server v1 checkpoint: {head.strip()!r}")
        f, n = int(m.group(1)), int(m.group(2))
        rnd = int(m.group(3) or 0)
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != n or any(len(r) != f + 1 for r in rows):
        raise ValueError("checkpoint body does not match its header")
    data = np.array(rows, dtype=np.float64).reshape(n, f + 1)
    return ServerState(S=np.ascontiguousarray(data[:, :f]), b=data[:, f].copy(), round=rnd)
