import numpy as np
import pytest

from fbalf.client import (
    DivergenceError,
    filling_size,
    init_client,
    local_train_round,
    synthetic_rating,
)
from fbalf.data import from_arrays
from fbalf.model import HyperParams, predict
from fbalf.server import init_server, snapshot
from fbalf.streams import CLIENT_INIT, VISIT_ORDER, stream


def make_client(n_rated=10, n_items=1000, rho=2, seed=0, user=0, **hp_kw):
    hp = HyperParams(rho=rho, seed=seed, **hp_kw)
    rng = np.random.default_rng(seed + 17)
    items = rng.choice(n_items, size=n_rated, replace=False)
    ratings = rng.integers(1, 6, size=n_rated).astype(float)
    return init_client(user, items, ratings, hp, n_items, 1.0, 5.0), hp


class TestInit:
    def test_rho_zero_no_synthetic(self):
        client, _ = make_client(rho=0)
        assert len(client.synthetic) == 0

    def test_filling_size(self):
        client, _ = make_client(n_rated=10, rho=2, n_items=1000)
        assert len(client.synthetic) == 20

    def test_filling_capped(self):
        client, _ = make_client(n_rated=400, rho=3, n_items=1000)
        unrated = set(range(1000)) - set(client.items.tolist())
        assert len(unrated) == 600
        assert set(client.synthetic.tolist()) == unrated

    @pytest.mark.parametrize("n_rated,rho,n_items", [(1, 0, 5), (3, 1, 5), (3, 2, 5), (4, 3, 5), (5, 1, 5)])
    def test_filling_size_exhaustive(self, n_rated, rho, n_items):
        client, _ = make_client(n_rated=n_rated, rho=rho, n_items=n_items)
        unrated = n_items - n_rated
        assert len(client.synthetic) == min(rho * n_rated, unrated) == filling_size(n_rated, rho, n_items)
        assert not set(client.synthetic.tolist()) & set(client.items.tolist())

    def test_initial_values(self):
        client, hp = make_client()
        assert client.a == 0.0
        assert client.c.shape == (hp.factors,)
        assert ((client.c >= 0) & (client.c < 0.05)).all()
        assert client.user_mean == pytest.approx(client.ratings.mean())

    def test_inactive(self):
        hp = HyperParams()
        client = init_client(3, [], [], hp, 10, 1, 5)
        assert not client.active
        assert len(client.surface) == 0

    def test_deterministic(self):
        a, _ = make_client(seed=4)
        b, _ = make_client(seed=4)
        assert np.array_equal(a.c, b.c) and np.array_equal(a.synthetic, b.synthetic)


class TestSyntheticRating:
    def setup_method(self):
        hp = HyperParams(rho=1, t_hf=10, factors=2)
        self.hp = hp
        self.client = init_client(0, [0, 1], [4.0, 5.0], hp, 6, 1.0, 5.0)
        self.item = int(self.client.synthetic[0])

    def test_mean_branch(self):
        assert synthetic_rating(self.client, self.item, 1, np.ones(2), 0.0, self.hp) == 4.5

    def test_boundary_is_mean(self):
        assert synthetic_rating(self.client, self.item, 10, np.ones(2), 0.0, self.hp) == 4.5

    def test_prediction_branch(self):
        s = np.array([0.3, -0.2])
        value = synthetic_rating(self.client, self.item, 11, s, 3.2, self.hp)
        assert 1.0 < value < 5.0
        assert value == predict(self.client.c, self.client.a, s, 3.2)

    def test_prediction_clamped(self):
        assert synthetic_rating(self.client, self.item, 11, np.zeros(2), 10.0, self.hp) == 5.0
        assert synthetic_rating(self.client, self.item, 11, np.zeros(2), -10.0, self.hp) == 1.0

    def test_rated_item_rejected(self):
        with pytest.raises(ValueError):
            synthetic_rating(self.client, 0, 1, np.zeros(2), 0.0, self.hp)


def scripted_round(user, items, ratings, synthetic, S, b, hp, t, r_min=1.0, r_max=5.0):
    """Reference local round written with plain floats, replaying the client's streams."""
    c = [float(x) for x in stream(hp.seed, CLIENT_INIT, user).uniform(0.0, hp.init_scale, hp.factors)]
    a = 0.0
    order = stream(hp.seed, VISIT_ORDER, user)
    surface = list(items) + list(synthetic)
    mean = sum(ratings) / len(ratings)
    uploads = {}
    for p in range(hp.t_local):
        for j in order.permutation(len(surface)):
            i = surface[j]
            s = [float(x) for x in S[i]]
            pred = a + float(b[i]) + sum(x * y for x, y in zip(c, s))
            if j < len(items):
                target = ratings[j]
            elif t <= hp.t_hf:
                target = mean
            else:
                target = min(max(pred, r_min), r_max)
            d = target - pred
            if p == hp.t_local - 1:
                uploads[i] = ([hp.eta * hp.lam * y - hp.eta * d * x for x, y in zip(c, s)],
                              hp.eta * hp.lam * float(b[i]) - hp.eta * d)
            c, a = ([x - (hp.eta * hp.lam * x - hp.eta * d * y) for x, y in zip(c, s)],
                    a - (hp.eta * hp.lam * a - hp.eta * d))
    return c, a, uploads


class TestLocalRound:
    def test_single_element_single_step(self):
        hp = HyperParams(factors=3, rho=0, t_local=1, lam=0.0, eta=0.01)
        client = init_client(0, [2], [4.0], hp, 5, 1, 5)
        server = init_server(5, hp)
        c0, a0 = client.c.copy(), client.a
        s, b = server.S[2].copy(), server.b[2]
        delta = 4.0 - (a0 + b + c0 @ s)
        upload = local_train_round(client, snapshot(server, client.surface), 1, hp)
        np.testing.assert_allclose(client.c, c0 + 0.01 * delta * s, rtol=1e-14)
        assert client.a == pytest.approx(a0 + 0.01 * delta, rel=1e-14)
        np.testing.assert_allclose(upload.grad_s[0], -0.01 * delta * c0, rtol=1e-14)
        assert upload.grad_b[0] == pytest.approx(-0.01 * delta, rel=1e-14)

    @pytest.mark.parametrize("t", [1, 3, 4])
    def test_matches_scripted_trace(self, t):
        # 5x5 toy matrix, user 2 rates items 0, 3; two synthetic items
        hp = HyperParams(factors=4, rho=1, t_local=3, t_hf=3, eta=0.05, lam=0.06, seed=11)
        R = np.array([[5, 0, 3, 0, 1], [0, 4, 0, 2, 0], [4, 0, 0, 5, 0], [0, 1, 2, 0, 0], [3, 0, 0, 0, 4]], float)
        u = 2
        items = np.nonzero(R[u])[0]
        client = init_client(u, items, R[u, items], hp, 5, 1.0, 5.0)
        server = init_server(5, hp)
        server.b[:] = [0.1, -0.2, 0.3, 0.0, 0.05]
        exp_c, exp_a, exp_up = scripted_round(
            u, items.tolist(), R[u, items].tolist(), client.synthetic.tolist(), server.S, server.b, hp, t)
        upload = local_train_round(client, snapshot(server), t, hp)
        np.testing.assert_allclose(client.c, exp_c, rtol=1e-13, atol=1e-15)
        assert client.a == pytest.approx(exp_a, rel=1e-13)
        assert set(exp_up) == upload.keys()
        for i, (gs, gb) in upload.entries().items():
            np.testing.assert_allclose(gs, exp_up[i][0], rtol=1e-12, atol=1e-15)
            assert gb == pytest.approx(exp_up[i][1], rel=1e-12, abs=1e-15)

    def test_upload_keys_on_twenty_users(self):
        rng = np.random.default_rng(3)
        mask = rng.random((20, 30)) < 0.2
        mask[np.arange(20), rng.integers(0, 30, 20)] = True
        u, i = np.nonzero(mask)
        ds = from_arrays(u, i, rng.integers(1, 6, len(u)), 1, 5)
        hp = HyperParams(factors=5, rho=2, t_local=2)
        server = init_server(ds.n_items, hp)
        for user, (items, ratings) in enumerate(ds.by_user()):
            client = init_client(user, items, ratings, hp, ds.n_items, 1, 5)
            upload = local_train_round(client, snapshot(server, client.surface), 1, hp)
            expected = set(items.tolist()) | set(client.synthetic.tolist())
            assert upload.keys() == expected
            assert len(upload) == len(expected)
            assert len(client.synthetic) == min(2 * len(items), 30 - len(items))

    def test_upload_carries_no_ratings(self):
        client, hp = make_client(n_rated=5, n_items=20, rho=1, factors=3)
        upload = local_train_round(client, snapshot(init_server(20, hp)), 1, hp)
        assert set(vars(upload)) == {"user", "items", "grad_s", "grad_b"}
        assert upload.grad_s.shape == (10, 3)

    def test_snapshot_not_modified(self):
        client, hp = make_client(n_rated=5, n_items=20, rho=1, factors=3)
        server = init_server(20, hp)
        before = server.S.copy()
        local_train_round(client, snapshot(server), 1, hp)
        assert np.array_equal(server.S, before)

    def test_bias_disabled_keeps_bias_zero(self):
        client, hp = make_client(n_rated=5, n_items=20, rho=1, factors=3, bias_enabled=False)
        upload = local_train_round(client, snapshot(init_server(20, hp)), 1, hp)
        assert client.a == 0.0
        assert not upload.grad_b.any()

    def test_divergence(self):
        hp = HyperParams(factors=2, rho=0, eta=1e3, lam=0.0, t_local=50)
        client = init_client(7, [0, 1], [5.0, 1.0], hp, 3, 1, 5)
        server = init_server(3, hp)
        server.S[:] = 1.0
        with pytest.raises(DivergenceError) as err:
            with np.errstate(all="ignore"):
                local_train_round(client, snapshot(server), 4, hp)
        assert err.value.round == 4 and err.value.user == 7

    def test_deterministic(self):
        out = []
        for _ in range(2):
            client, hp = make_client(n_rated=6, n_items=30, rho=2, factors=4)
            server = init_server(30, hp)
            ups = [local_train_round(client, snapshot(server), t, hp) for t in (1, 2, 11)]
            out.append((client.c, [u.grad_s for u in ups]))
        assert np.array_equal(out[0][0], out[1][0])
        assert all(np.array_equal(x, y) for x, y in zip(out[0][1], out[1][1]))
