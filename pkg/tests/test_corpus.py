import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recafr.corpus import (
    CorpusError,
    RawInteraction,
    ReviewEmbeddingStore,
    assign_review_ids,
    clean_reviews,
    kcore_filter,
    load_embedding_file,
    load_interactions,
    load_prepared,
    split,
    write_embedding_file,
    write_id_maps,
    write_split_files,
)

from conftest import make_store, rows_from_pairs


# --- load_interactions -------------------------------------------------------


def test_load_interactions_basic(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("u1\ti1\tgreat book\nu1\ti2\n", encoding="utf-8")
    rows = load_interactions(path)
    assert rows == [
        RawInteraction("u1", "i1", "great book"),
        RawInteraction("u1", "i2", None),
    ]


def test_load_interactions_empty_item_is_parse_error(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("u1\t\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="line 1"):
        load_interactions(path)


def test_load_interactions_too_many_fields(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("u1\ti1\ta\tb\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="line 1"):
        load_interactions(path)


def test_load_interactions_empty_file(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(CorpusError, match="empty"):
        load_interactions(path)


def test_load_interactions_empty_review_field_means_absent(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("u1\ti1\t\n", encoding="utf-8")
    assert load_interactions(path)[0].review_text is None


# --- clean_reviews -----------------------------------------------------------


def test_clean_removes_letterless_review_keeps_interaction():
    rows = clean_reviews([RawInteraction("u", "i", "!!! 123")])
    assert rows == [RawInteraction("u", "i", None)]


def test_clean_keeps_reviews_with_letters():
    rows = [RawInteraction("u", "i", "ok"), RawInteraction("u", "j", None)]
    assert clean_reviews(rows) == rows


def test_clean_handles_unicode_letters():
    rows = clean_reviews([RawInteraction("u", "i", "日本語")])
    assert rows[0].review_text == "日本語"


# --- kcore_filter ------------------------------------------------------------


def test_kcore_k1_is_identity():
    rows = rows_from_pairs([("u1", "i1"), ("u2", "i1"), ("u2", "i2")])
    assert kcore_filter(rows, 1) == rows


def test_kcore_chain_collapses_to_empty():
    # u1-i1, u2-i1, u2-i2 with k=2: u1 and i2 fall first, then the rest
    rows = rows_from_pairs([("u1", "i1"), ("u2", "i1"), ("u2", "i2")])
    assert kcore_filter(rows, 2) == []


def test_kcore_complete_bipartite_unchanged():
    rows = rows_from_pairs([(f"u{a}", f"i{b}") for a in range(3) for b in range(3)])
    assert kcore_filter(rows, 3) == rows


small_rows = st.lists(
    st.tuples(st.sampled_from("abcde"), st.sampled_from("vwxyz")),
    min_size=0,
    max_size=30,
    unique=True,
).map(lambda pairs: rows_from_pairs([(f"u{a}", f"i{b}") for a, b in pairs]))


@given(rows=small_rows, k=st.integers(min_value=1, max_value=4))
def test_kcore_idempotent_and_degrees_hold(rows, k):
    once = kcore_filter(rows, k)
    assert kcore_filter(once, k) == once
    from collections import Counter

    user_deg = Counter(r.user_key for r in once)
    item_deg = Counter(r.item_key for r in once)
    assert all(c >= k for c in user_deg.values())
    assert all(c >= k for c in item_deg.values())


# --- split ---------------------------------------------------------------


def _ten_rows():
    return [RawInteraction(f"u{n}", f"i{n}", f"text {n}") for n in range(10)]


def test_split_ratios_8_1_1():
    table = split(_ten_rows(), seed=1)
    counts = {s: len(table.triples_of(s)) for s in ("train", "valid", "test")}
    assert counts == {"train": 8, "valid": 1, "test": 1}


def test_split_deterministic():
    a = split(_ten_rows(), seed=42)
    b = split(_ten_rows(), seed=42)
    assert a.triples == b.triples


def test_split_too_few_rows():
    with pytest.raises(CorpusError):
        split(_ten_rows()[:2])


def test_split_bad_ratios():
    with pytest.raises(CorpusError):
        split(_ten_rows(), ratios=(0.5, 0.2, 0.2))


def test_split_rejects_duplicate_pairs():
    rows = [RawInteraction("u", "i"), RawInteraction("u", "i"), RawInteraction("v", "j")]
    with pytest.raises(CorpusError, match="duplicate"):
        split(rows)


def test_split_min_population_steals_from_largest():
    table = split([RawInteraction(f"u{n}", f"i{n}") for n in range(3)], seed=0)
    counts = {s: len(table.triples_of(s)) for s in ("train", "valid", "test")}
    assert counts == {"train": 1, "valid": 1, "test": 1}


def test_split_ids_first_appearance_order():
    rows = [
        RawInteraction("bob", "book"),
        RawInteraction("amy", "book"),
        RawInteraction("amy", "art"),
    ]
    table = split(rows, seed=0)
    assert table.user_keys == ["bob", "amy"]
    assert table.item_keys == ["book", "art"]


@given(n=st.integers(min_value=3, max_value=60), seed=st.integers(min_value=0, max_value=2**31))
@settings(max_examples=40)
def test_split_partitions_the_input(n, seed):
    rows = [RawInteraction(f"u{x}", f"i{x}") for x in range(n)]
    table = split(rows, seed=seed)
    assert len(table.triples) == n
    # dense ids, every split non-empty, disjoint union equals input pairs
    pairs = {(t.user_id, t.item_id) for t in table.triples}
    assert pairs == {(x, x) for x in range(n)}
    counts = {s: len(table.triples_of(s)) for s in ("train", "valid", "test")}
    assert all(c >= 1 for c in counts.values())
    assert sum(counts.values()) == n


def test_review_ids_stable_under_filtering():
    rows = [
        RawInteraction("u1", "i1", "one"),
        RawInteraction("u2", "i1", "two"),
        RawInteraction("u2", "i2", "three"),
        RawInteraction("u3", "i2", "four"),
        RawInteraction("u3", "i1", None),
    ]
    pre_ids = assign_review_ids(rows)
    filtered = kcore_filter(rows, 2)
    assert filtered  # sanity: some rows survive
    table = split(filtered, seed=0, review_ids=pre_ids)
    for t in table.triples:
        if t.review_id is not None:
            key = (table.user_keys[t.user_id], table.item_keys[t.item_id])
            assert pre_ids[key] == t.review_id


# --- REMB format -------------------------------------------------------------


def test_remb_round_trip(tmp_path):
    store = make_store({0: [1.0, 2.0, 3.0, 4.0], 7: [0.5, -0.5, 0.25, 8.0]})
    path = tmp_path / "r.remb"
    write_embedding_file(store, path)
    loaded = load_embedding_file(path)
    assert loaded.dim == 4 and len(loaded) == 2
    for rid in (0, 7):
        assert np.array_equal(loaded.vector(rid), store.vector(rid))


def test_remb_bad_magic(tmp_path):
    path = tmp_path / "r.remb"
    store = make_store({0: [1.0, 2.0]})
    write_embedding_file(store, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(CorpusError, match="magic"):
        load_embedding_file(path)


def test_remb_nan_rejected(tmp_path):
    path = tmp_path / "r.remb"
    store = make_store({0: [1.0, 2.0]})
    write_embedding_file(store, path)
    data = bytearray(path.read_bytes())
    data[-8:-4] = np.float32("nan").tobytes()
    path.write_bytes(bytes(data))
    with pytest.raises(CorpusError, match="non-finite"):
        load_embedding_file(path)


def test_remb_truncation_rejected(tmp_path):
    path = tmp_path / "r.remb"
    write_embedding_file(make_store({0: [1.0, 2.0], 1: [3.0, 4.0]}), path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CorpusError, match="expected"):
        load_embedding_file(path)


def test_remb_duplicate_id_rejected(tmp_path):
    import struct

    path = tmp_path / "r.remb"
    header = struct.pack("<4sIIQ", b"REMB", 1, 2, 2)
    record = struct.pack("<Q", 5) + np.asarray([1, 2], dtype="<f4").tobytes()
    path.write_bytes(header + record + record)
    with pytest.raises(CorpusError, match="duplicate"):
        load_embedding_file(path)


def test_store_rejects_wrong_width():
    with pytest.raises(CorpusError):
        ReviewEmbeddingStore(dim=3, vectors={0: np.zeros(2, dtype=np.float32)})


finite_f32 = st.floats(
    min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False, width=32
)


@given(
    vecs=st.dictionaries(
        st.integers(min_value=0, max_value=2**63 - 1),
        st.lists(finite_f32, min_size=3, max_size=3),
        min_size=1,
        max_size=8,
    )
)
@settings(max_examples=30)
def test_remb_round_trip_property(tmp_path_factory, vecs):
    path = tmp_path_factory.mktemp("remb") / "r.remb"
    store = make_store(vecs)
    write_embedding_file(store, path)
    loaded = load_embedding_file(path)
    assert set(loaded.vectors) == set(store.vectors)
    for rid in store.vectors:
        assert np.array_equal(loaded.vector(rid), store.vector(rid))


# --- prepared-directory round trip --------------------------------------------


def test_prepared_directory_round_trip(tmp_path):
    rows = [RawInteraction(f"u{n % 4}", f"i{n}", f"text {n}") for n in range(12)]
    table = split(rows, seed=9)
    write_split_files(table, tmp_path)
    write_id_maps(table, tmp_path)
    loaded = load_prepared(tmp_path)
    assert loaded.num_users == table.num_users
    assert loaded.num_items == table.num_items
    assert sorted(loaded.triples) == sorted(table.triples)
    assert loaded.user_keys == table.user_keys
    assert loaded.review_keys == table.review_keys
