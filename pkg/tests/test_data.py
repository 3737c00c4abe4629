import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbalf.data import (
    ParseError,
    filter_min_degree,
    from_arrays,
    make_kfold,
    parse_ratings,
    split_holdout,
)


def brute_force_filter(triples, min_count):
    """Re-filter a list of (user, item, rating) until nothing changes."""
    current = list(triples)
    while True:
        ucount = Counter(u for u, _, _ in current)
        icount = Counter(i for _, i, _ in current)
        kept = [t for t in current if ucount[t[0]] >= min_count and icount[t[1]] >= min_count]
        if len(kept) == len(current):
            return kept
        current = kept


def external_triples(ds):
    return [(ds.user_ids[u], ds.item_ids[i], r) for u, i, r in ds.triples()]


def random_dataset(seed, n_users=50, n_items=30, density=0.25):
    rng = np.random.default_rng(seed)
    mask = rng.random((n_users, n_items)) < density
    u, i = np.nonzero(mask)
    r = rng.integers(1, 6, size=len(u)).astype(float)
    return from_arrays(u, i, r, 1, 5)


class TestParse:
    def test_three_rows(self):
        ds = parse_ratings(b"1::10::4\n1::11::5\n2::10::3\n")
        assert (ds.n_users, ds.n_items, len(ds)) == (2, 2, 3)
        by_user = ds.by_user()
        rated = {ds.item_ids[i] for i in by_user[ds.user_ids.index("1")][0]}
        assert rated == {"10", "11"}
        assert (ds.r_min, ds.r_max) == (3.0, 5.0)

    def test_empty(self):
        ds = parse_ratings(b"")
        assert (ds.n_users, ds.n_items, len(ds)) == (0, 0, 0)
        assert ds.density == 0.0

    def test_first_appearance_order(self):
        ds = parse_ratings(b"b,y,1\na,x,2\nb,x,3\n", sep=",")
        assert ds.user_ids == ("b", "a")
        assert ds.item_ids == ("y", "x")
        assert ds.users.tolist() == [0, 1, 0]
        assert ds.items.tolist() == [0, 1, 1]

    def test_dense_indices_zero_based(self):
        ds = parse_ratings(b"7\t3\t2.5\t978300760\n9\t3\t4\t978300761\n", sep="\t")
        assert ds.users.tolist() == [0, 1]
        assert ds.items.tolist() == [0, 0]
        assert ds.ratings.tolist() == [2.5, 4.0]

    def test_header_and_column_order(self):
        src = b"item,rating,user\n10,4,1\n11,5,1\n"
        ds = parse_ratings(src, sep=",", columns=("item", "rating", "user"), header=True)
        assert ds.user_ids == ("1",)
        assert ds.item_ids == ("10", "11")

    def test_non_numeric_rating_reports_line(self):
        with pytest.raises(ParseError) as err:
            parse_ratings(b"1::10::4\n1::11::five\n")
        assert err.value.line == 2

    def test_short_row(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_ratings(b"1::10\n")

    def test_duplicates_keep_first(self):
        ds = parse_ratings(b"1::10::4\n1::10::2\n1::11::5\n")
        assert len(ds) == 2
        assert ds.ratings.tolist() == [4.0, 5.0]
        assert ds.report.duplicates == 1
        assert ds.report.rows == 3

    def test_scale_override(self):
        ds = parse_ratings(b"1::10::4\n", r_min=1, r_max=5)
        assert (ds.r_min, ds.r_max) == (1, 5)
        with pytest.raises(ValueError):
            parse_ratings(b"1::10::6\n", r_min=1, r_max=5)

    def test_stream_and_path(self, tmp_path):
        path = tmp_path / "r.dat"
        path.write_bytes(b"1::10::4\n2::10::3\n")
        assert len(parse_ratings(path)) == 2
        assert len(parse_ratings(io.BytesIO(b"1::10::4\n"))) == 1

    def test_bad_separator(self):
        with pytest.raises(ValueError):
            parse_ratings(b"", sep=";")

    def test_pair_count_invariant(self):
        ds = random_dataset(3)
        assert len(ds) == sum(len(items) for items, _ in ds.by_user())
        assert len(set(zip(ds.users.tolist(), ds.items.tolist()))) == len(ds)
        assert ds.density == pytest.approx(len(ds) / (ds.n_users * ds.n_items))


class TestFilter:
    def test_zero_threshold_is_identity(self):
        ds = random_dataset(0)
        out = filter_min_degree(ds, 0)
        assert external_triples(out) == external_triples(ds)
        assert out.user_ids == ds.user_ids and out.item_ids == ds.item_ids

    def test_cascade(self):
        # user "x" has 9 ratings; removing it leaves item "i0" with 9 ratings
        rows = [f"x,i{k},3" for k in range(9)]
        rows += [f"u{j},i{k},4" for j in range(10) for k in range(1, 12)]
        rows += [f"u{j},i0,4" for j in range(9)]
        ds = parse_ratings("\n".join(rows).encode(), sep=",")
        out = filter_min_degree(ds, 10)
        assert "x" not in out.user_ids
        assert "i0" not in out.item_ids
        assert out.n_users == 10 and out.n_items == 11
        assert out.user_degrees().min() >= 10
        assert out.item_degrees().min() >= 10

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("min_count", [3, 6, 9])
    def test_matches_brute_force(self, seed, min_count):
        ds = random_dataset(seed)
        expected = brute_force_filter(external_triples(ds), min_count)
        out = filter_min_degree(ds, min_count)
        assert external_triples(out) == expected
        if len(out):
            assert out.user_degrees().min() >= min_count
            assert out.item_degrees().min() >= min_count
        assert out.n_users == len({u for u, _, _ in expected})
        assert out.n_items == len({i for _, i, _ in expected})

    def test_can_empty(self):
        out = filter_min_degree(random_dataset(1, density=0.05), 50)
        assert len(out) == 0 and out.n_users == 0

    def test_negative(self):
        with pytest.raises(ValueError):
            filter_min_degree(random_dataset(0), -1)


class TestSplits:
    def test_holdout_counts_and_determinism(self):
        ds = random_dataset(0, 5, 4, density=0.6)
        ds = ds.subset(np.arange(10))
        train, test = split_holdout(ds, 0.8, seed=7)
        assert (len(train), len(test)) == (8, 2)
        again = split_holdout(ds, 0.8, seed=7)
        assert external_triples(again[0]) == external_triples(train)
        assert external_triples(again[1]) == external_triples(test)

    def test_holdout_train_size_rounding(self):
        # 0.8 * 1,000,209 = 800,167.2
        n = 1_000_209
        ds = from_arrays(np.zeros(n, int), np.arange(n), np.ones(n), 1, 5)
        train, test = split_holdout(ds, 0.8, seed=0)
        assert len(train) == round(0.8 * n) == 800_167
        assert len(train) + len(test) == n

    def test_holdout_seeds_differ(self):
        ds = random_dataset(0)
        assert len(ds) >= 100
        a, _ = split_holdout(ds, 0.8, seed=1)
        b, _ = split_holdout(ds, 0.8, seed=2)
        assert external_triples(a) != external_triples(b)

    def test_holdout_cold_flags(self):
        ds = from_arrays([0, 0, 1, 1, 2], [0, 1, 0, 1, 2], [1, 2, 3, 4, 5], 1, 5)
        for seed in range(10):
            train, test = split_holdout(ds, 0.6, seed)
            known_u = set(train.users.tolist())
            known_i = set(train.items.tolist())
            expected = [u not in known_u or i not in known_i
                        for u, i in zip(test.users.tolist(), test.items.tolist())]
            assert test.cold.tolist() == expected
        # user 2 / item 2 appear once, so whenever that triple is in test it is cold
        assert train.n_users == test.n_users == 3

    def test_holdout_bad_fraction(self):
        with pytest.raises(ValueError):
            split_holdout(random_dataset(0), 1.0, 0)

    def test_kfold_ten_by_five(self):
        ds = random_dataset(0).subset(np.arange(10))
        plan = make_kfold(ds, 5, seed=0)
        assert [len(test) for _, test in plan.folds] == [2] * 5

    def test_kfold_chunk_sizes_103(self):
        ds = random_dataset(0).subset(np.arange(103))
        plan = make_kfold(ds, 5, seed=3)
        # chunk rule: the first 103 % 5 = 3 chunks get one extra
        base, extra = divmod(103, 5)
        expected = [base + 1 if j < extra else base for j in range(5)]
        assert expected == [21, 21, 21, 20, 20]
        assert [len(test) for _, test in plan.folds] == expected

    def test_kfold_too_many(self):
        ds = random_dataset(0).subset(np.arange(3))
        with pytest.raises(ValueError):
            make_kfold(ds, 4, 0)
        with pytest.raises(ValueError):
            make_kfold(ds, 1, 0)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 300), k=st.integers(2, 10), seed=st.integers(0, 2**32 - 1))
    def test_kfold_partition(self, n, k, seed):
        if k > n:
            return
        ds = from_arrays(np.arange(n) % 7, np.arange(n), np.ones(n), 1, 5)
        plan = make_kfold(ds, k, seed)
        tests = [set(test.tolist()) for _, test in plan.folds]
        assert sum(len(t) for t in tests) == n
        assert set().union(*tests) == set(range(n))
        for train, test in plan.folds:
            assert not set(train.tolist()) & set(test.tolist())
            assert len(train) + len(test) == n
        again = make_kfold(ds, k, seed)
        assert all(np.array_equal(x[1], y[1]) for x, y in zip(plan.folds, again.folds))

    def test_fold_datasets_share_universe(self):
        ds = random_dataset(2)
        plan = make_kfold(ds, 5, 0)
        train, test = plan.datasets(ds, 0)
        assert train.n_users == test.n_users == ds.n_users
        assert test.cold is not None
