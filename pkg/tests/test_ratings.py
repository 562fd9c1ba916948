import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darec.ratings import (AlignedDataset, DataError, Rating, RatingMatrix, RatingTriples,
                           align_domains, ingest_csv, load_aligned, save_aligned, sparsity,
                           split, split_counts, stats)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def triples(*recs):
    return RatingTriples(tuple(Rating(u, i, float(r)) for u, i, r in recs))


class TestIngest:
    def test_single_line(self, tmp_path):
        t = ingest_csv(write(tmp_path, "a.csv", "u1,i1,5.0\n"))
        assert t.records == (Rating("u1", "i1", 5.0, None),)

    def test_duplicate_keeps_last(self, tmp_path):
        t = ingest_csv(write(tmp_path, "a.csv", "u1,i1,3\nu2,i1,2\nu1,i1,4\n"))
        assert [(r.user, r.item, r.rating) for r in t.records] == [("u2", "i1", 2.0), ("u1", "i1", 4.0)]

    def test_out_of_scale(self, tmp_path):
        with pytest.raises(DataError, match=":1:"):
            ingest_csv(write(tmp_path, "a.csv", "u1,i1,9.0\n"))

    def test_malformed_reports_line(self, tmp_path):
        with pytest.raises(DataError, match=":2:"):
            ingest_csv(write(tmp_path, "a.csv", "u1,i1,4\nu2,i2\n"))
        with pytest.raises(DataError, match=":1:"):
            ingest_csv(write(tmp_path, "b.csv", "u1,i1,abc\n"))

    def test_header_and_timestamp(self, tmp_path):
        t = ingest_csv(write(tmp_path, "a.csv", "user,item,rating,ts\nu1,i1,2.5,1700\n"), header=True)
        assert t.records == (Rating("u1", "i1", 2.5, 1700),)


class TestAlign:
    def test_intersection(self):
        ds = align_domains(triples(("a", "x", 1), ("b", "y", 2)),
                           triples(("b", "z", 3), ("c", "z", 4)), min_ratings=1)
        assert ds.source.user_ids == ("b",) == ds.target.user_ids
        assert ds.source.item_ids == ("y",)
        assert ds.target.item_ids == ("z",)

    def test_per_domain_threshold(self):
        src = triples(*[("a", f"s{j}", 3) for j in range(5)], *[("b", f"s{j}", 3) for j in range(5)])
        tgt = triples(*[("a", f"t{j}", 3) for j in range(4)], *[("b", f"t{j}", 3) for j in range(5)])
        ds = align_domains(src, tgt, min_ratings=5)
        assert ds.source.user_ids == ("b",)
        assert ds.target.nnz == 5

    def test_disjoint_users(self):
        with pytest.raises(DataError, match="share no users"):
            align_domains(triples(("a", "x", 1)), triples(("b", "y", 1)), min_ratings=1)

    def test_filter_order_flag_agrees(self):
        rng = np.random.default_rng(0)
        src = triples(*[(f"u{rng.integers(8)}", f"s{rng.integers(6)}", 3) for _ in range(40)])
        tgt = triples(*[(f"u{rng.integers(10)}", f"t{rng.integers(6)}", 4) for _ in range(40)])
        src = RatingTriples(tuple({(r.user, r.item): r for r in src.records}.values()))
        tgt = RatingTriples(tuple({(r.user, r.item): r for r in tgt.records}.values()))
        a = align_domains(src, tgt, 3)
        b = align_domains(src, tgt, 3, filter_before_intersection=True)
        assert a.source.user_ids == b.source.user_ids
        assert (a.source.csr != b.source.csr).nnz == 0

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 5), st.integers(1, 5)), max_size=40),
           st.lists(st.tuples(st.integers(0, 6), st.integers(0, 5), st.integers(1, 5)), max_size=40),
           st.integers(1, 3))
    def test_invariants_hold_for_any_input(self, s, t, k):
        src = RatingTriples(tuple({(f"u{u}", f"s{i}"): Rating(f"u{u}", f"s{i}", r) for u, i, r in s}.values()))
        tgt = RatingTriples(tuple({(f"u{u}", f"t{i}"): Rating(f"u{u}", f"t{i}", r) for u, i, r in t}.values()))
        try:
            ds = align_domains(src, tgt, k)
        except DataError:
            return
        assert ds.source.n_users == ds.target.n_users
        for m in (ds.source, ds.target):
            assert np.all(m.row_counts() >= k)
            assert np.all(np.diff(m.csr.tocsc().indptr) >= 1)


def matrix(n_users, n_items, entries):
    r, c, v = zip(*entries) if entries else ((), (), ())
    return RatingMatrix.from_entries(r, c, v, [f"u{j}" for j in range(n_users)],
                                     [f"i{j}" for j in range(n_items)])


class TestSplit:
    def dataset(self, n_src, n_tgt):
        src = matrix(10, 20, [(j % 10, j // 10, 3.0) for j in range(n_src)])
        tgt = matrix(10, 20, [(j % 10, j // 10, 4.0) for j in range(n_tgt)])
        return AlignedDataset(src, tgt)

    def test_default_proportions(self):
        sp = split(self.dataset(100, 10), 0.9, 0.1, seed=1)
        assert (len(sp.source.train), len(sp.source.val), len(sp.source.test)) == (81, 9, 10)

    def test_eighty_percent_of_ten(self):
        sp = split(self.dataset(10, 10), 0.8, 0.1, seed=1)
        assert len(sp.source.train) + len(sp.source.val) == 8
        assert len(sp.source.test) == 2

    def test_deterministic(self):
        a = split(self.dataset(100, 50), 0.9, 0.1, seed=3)
        b = split(self.dataset(100, 50), 0.9, 0.1, seed=3)
        for x, y in ((a.source, b.source), (a.target, b.target)):
            assert all(np.array_equal(getattr(x, f), getattr(y, f)) for f in ("train", "val", "test"))

    @pytest.mark.parametrize("frac", [0.0, 1.0, 1.5])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            split(self.dataset(10, 10), frac, 0.1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 200), st.floats(0.05, 0.95), st.floats(0.0, 0.5), st.integers(0, 99))
    def test_disjoint_cover(self, n, frac, val, seed):
        ds = self.dataset(n, max(1, n // 2))
        sp = split(ds, frac, val, seed)
        for part, m in ((sp.source, ds.source), (sp.target, ds.target)):
            allidx = np.concatenate([part.train, part.val, part.test])
            assert sorted(allidx.tolist()) == list(range(m.nnz))
            assert (len(part.train), len(part.val), len(part.test)) == split_counts(m.nnz, frac, val)


class TestStats:
    # raw counts with published two-decimal sparsities; the one row whose
    # printed value disagrees with its own counts is checked separately
    CONSISTENT = [
        (5154, 10398, 40294, 99.92), (5154, 21732, 158927, 99.86),
        (5713, 34286, 79019, 99.96),
        (2034, 9185, 34217, 99.82), (2034, 10062, 21312, 99.90),
        (2885, 10597, 25103, 99.92), (2885, 7375, 16448, 99.92),
    ]

    def test_office_products(self):
        assert round(100 * sparsity(5154, 10398, 40294), 2) == 99.92

    @pytest.mark.parametrize("users,items,ratings,printed", CONSISTENT)
    def test_published_rows(self, users, items, ratings, printed):
        assert round(100 * sparsity(users, items, ratings), 2) == printed

    def test_sports_source_counts(self):
        # 5713 * 16420 = 93807460 cells, 39151 / 93807460 = 4.1735487e-4
        assert sparsity(5713, 16420, 39151) == pytest.approx(1 - 4.17354870e-4, abs=1e-11)
        assert round(100 * sparsity(5713, 16420, 39151), 2) == 99.96

    def test_full_and_empty(self):
        assert stats(matrix(2, 2, [(0, 0, 1), (0, 1, 2), (1, 0, 3), (1, 1, 4)])).sparsity == 0
        assert stats(matrix(2, 2, [])).sparsity == 1

    def test_zero_dimension(self):
        with pytest.raises(DataError):
            sparsity(0, 3, 0)


class TestVectors:
    def test_single_rating(self):
        m = matrix(1, 4, [(0, 2, 4.0)])
        values, mask = m.user_vector(0)
        assert values.tolist() == [0, 0, 4, 0] and mask.tolist() == [0, 0, 1, 0]

    def test_empty_user(self):
        values, mask = matrix(2, 3, [(0, 1, 2.0)]).user_vector(1)
        assert not values.any() and not mask.any()

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            matrix(2, 3, []).user_vector(2)

    def test_round_trip_and_mask_count(self):
        rng = np.random.default_rng(4)
        dense = np.where(rng.random((6, 7)) < 0.4, rng.integers(1, 6, (6, 7)), 0).astype(float)
        r, c = np.nonzero(dense)
        m = matrix(6, 7, list(zip(r, c, dense[r, c])))
        for u in range(6):
            values, mask = m.user_vector(u)
            assert np.array_equal(values, dense[u])
            assert mask.sum() == np.count_nonzero(dense[u])
        for i in range(7):
            values, mask = m.item_vector(i)
            assert np.array_equal(values, dense[:, i]) and mask.sum() == np.count_nonzero(dense[:, i])


def test_aligned_file_round_trip(tmp_path):
    ds = AlignedDataset(matrix(3, 2, [(0, 0, 1.5), (2, 1, 5.0)]), matrix(3, 4, [(1, 3, 2.0)]))
    path = tmp_path / "d.txt"
    save_aligned(ds, path)
    text = path.read_text()
    assert text.startswith("# darec-aligned v1\nusers\t3\n")
    back = load_aligned(path)
    assert back.source.user_ids == ds.source.user_ids
    assert back.target.item_ids == ds.target.item_ids
    assert (back.source.csr != ds.source.csr).nnz == 0
    assert (back.target.csr != ds.target.csr).nnz == 0


def test_aligned_file_rejects_garbage(tmp_path):
    path = write(tmp_path, "x.txt", "hello\n")
    with pytest.raises(DataError):
        load_aligned(path)
