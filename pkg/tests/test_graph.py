import math
import random

import pytest
from hypothesis import given, settings, strategies as st
from conftest import edge
from oracles import NaiveGraph

from supa.errors import ConfigError, DataError
from supa.graph import (GraphStore, NodeRef, NoiseTable, TemporalEdge, TypeTables, read_edge_list,
                        write_edge_list)


def test_add_edge_visible_from_both_ends(tables):
    store = GraphStore(tables)
    e = store.add_edge(edge(tables, "u1", "User", "v2", "Video", "click", 12.0))
    u, v = store.lookup("u1"), store.lookup("v2")
    assert (e.u, e.v) == (u, v)
    [entry] = store.neighbors(u)
    assert (entry.neighbor, tables.edge_types[entry.edge_type], entry.timestamp, entry.outgoing) == (v, "click", 12.0, True)
    [back] = store.neighbors(v)
    assert back.neighbor == u and not back.outgoing


def test_cap_evicts_oldest(tables):
    store = GraphStore(tables, neighbor_cap=1)
    store.add_edge(edge(tables, "u", "User", "a", "Video", "click", 1.0))
    store.add_edge(edge(tables, "u", "User", "b", "Video", "click", 2.0))
    [entry] = store.neighbors(store.lookup("u"))
    assert (store.ids[entry.neighbor], entry.timestamp) == ("b", 2.0)


def test_capped_neighborhoods_share_one_video(tables):
    # Bob at 09:30 vs 09:45: with room for four neighbors the two windows overlap in one video
    store = GraphStore(tables, neighbor_cap=4)
    for i, minute in enumerate([0, 5, 10, 15, 20, 25, 30]):
        store.add_edge(edge(tables, "bob", "User", f"video{i}", "Video", "click", 9 * 60 + minute))
    bob = store.lookup("bob")
    at_930 = {store.ids[e.neighbor] for e in store.neighbors(bob) if e.timestamp <= 9 * 60 + 30}
    for i, minute in enumerate([35, 40, 45]):
        store.add_edge(edge(tables, "bob", "User", f"late{i}", "Video", "click", 9 * 60 + minute))
    at_945 = {store.ids[e.neighbor] for e in store.neighbors(bob)}
    assert len(at_930) == len(at_945) == 4
    assert len(at_930 & at_945) == 1


def test_unknown_types_rejected():
    tables = TypeTables(["User"], ["click"], frozen=True)
    with pytest.raises(ConfigError):
        tables.node_type_id("Video")
    store = GraphStore(tables)
    with pytest.raises(ConfigError):
        store.add_edge(TemporalEdge(NodeRef("a", 0), NodeRef("b", 0), 3, 1.0))
    with pytest.raises(ConfigError):
        store.add_edge(TemporalEdge(NodeRef("a", 0), NodeRef("b", 5), 0, 1.0))


def test_negative_timestamp_and_type_conflict(tables):
    store = GraphStore(tables)
    with pytest.raises(DataError):
        store.add_edge(edge(tables, "u", "User", "v", "Video", "click", -1.0))
    store.add_edge(edge(tables, "u", "User", "v", "Video", "click", 1.0))
    with pytest.raises(DataError):
        store.add_edge(edge(tables, "u", "Video", "w", "Video", "click", 2.0))


def test_out_of_order_tolerated_and_counted(tables, caplog):
    store = GraphStore(tables)
    store.add_edge(edge(tables, "u", "User", "v", "Video", "click", 5.0))
    store.add_edge(edge(tables, "u", "User", "w", "Video", "click", 3.0))
    assert store.out_of_order == 1
    times = [e.timestamp for e in store.neighbors(store.lookup("u"))]
    assert times == [5.0, 3.0]


def test_sample_neighbor_single_and_none(click_graph, rng, tables):
    s = click_graph
    u3 = s.lookup("u3")
    click = frozenset({tables.edge_type_id("click")})
    video = tables.node_type_id("Video")
    for _ in range(20):
        assert s.ids[s.sample_neighbor(u3, video, click, rng).neighbor] == "v2"
    assert s.sample_neighbor(u3, tables.node_type_id("Author"), click, rng) is None
    assert s.sample_neighbor(u3, video, frozenset({tables.edge_type_id("like")}), rng) is None


def test_sample_neighbor_uniform_chi_square(click_graph, tables):
    s = click_graph
    u1 = s.lookup("u1")
    rng = random.Random(1)
    counts = {}
    n = 10_000
    for _ in range(n):
        e = s.sample_neighbor(u1, tables.node_type_id("Video"), frozenset({0}), rng)
        counts[s.ids[e.neighbor]] = counts.get(s.ids[e.neighbor], 0) + 1
    assert set(counts) == {"v1", "v3", "v4"}
    chi2 = sum((c - n / 3) ** 2 / (n / 3) for c in counts.values())
    # 99.9% quantile of chi-square with 2 degrees of freedom
    assert chi2 < 13.82
    for c in counts.values():
        sigma = math.sqrt(n * (1 / 3) * (2 / 3))
        assert abs(c - n / 3) < 3 * sigma


def test_sample_neighbor_until_hides_newer(click_graph, rng, tables):
    s = click_graph
    u1 = s.lookup("u1")
    seen = {s.ids[s.sample_neighbor(u1, 1, frozenset({0}), rng, until=2.0).neighbor] for _ in range(200)}
    assert seen == {"v1", "v3"}
    assert s.sample_neighbor(u1, 1, frozenset({0}), rng, until=0.5) is None


def test_prune_outdated(tables):
    store = GraphStore(tables)
    for i, t in enumerate([1.0, 5.0, 9.0]):
        store.add_edge(edge(tables, "u", "User", f"v{i}", "Video", "click", t))
    assert store.prune_outdated(now=9.0, tau=10.0) == 0
    # t=1 and t=5 are older than 4, each stored on both endpoints; t=6 is the inclusive boundary
    assert store.prune_outdated(now=10.0, tau=4.0) == 4
    assert [e.timestamp for e in store.neighbors(store.lookup("u"))] == [9.0]
    assert store.prune_outdated(now=13.0, tau=4.0) == 0
    with pytest.raises(ConfigError):
        store.prune_outdated(10.0, 0.0)


def test_prune_single_stale_entry(tables):
    store = GraphStore(tables)
    store.add_edge(edge(tables, "u", "User", "u", "User", "click", 0.0))
    assert store.prune_outdated(now=11.0, tau=10.0) == 1


def test_last_interaction_time(tables):
    store = GraphStore(tables)
    store.add_edge(edge(tables, "u", "User", "v", "Video", "click", 3.0))
    u = store.lookup("u")
    assert store.last_interaction_time(u) == 3.0
    store.mark_active(u, 9.0)
    assert store.last_interaction_time(u) == 9.0
    with pytest.raises(KeyError):
        store.last_interaction_time(99)
    with pytest.raises(KeyError):
        store.lookup("nobody")


def test_uncapped_store_is_append_only(tables):
    store = GraphStore(tables)
    for i in range(50):
        store.add_edge(edge(tables, "u", "User", f"v{i % 7}", "Video", "click", float(i)))
    assert store.degree(store.lookup("u")) == 50


ops = st.lists(
    st.one_of(
        st.tuples(st.just("add"), st.integers(0, 5), st.integers(0, 5), st.integers(0, 1),
                  st.integers(0, 20).map(float)),
        st.tuples(st.just("prune"), st.integers(0, 25).map(float), st.integers(1, 10).map(float)),
    ),
    max_size=40,
)


@settings(max_examples=150, deadline=None)
@given(ops=ops, cap=st.one_of(st.none(), st.integers(1, 4)))
def test_store_matches_naive_replay(ops, cap):
    tables = TypeTables(["N"], ["a", "b"])
    store = GraphStore(tables, neighbor_cap=cap)
    naive = NaiveGraph(cap)
    for op in ops:
        if op[0] == "add":
            _, a, b, r, t = op
            store.add_edge(TemporalEdge(NodeRef(f"n{a}", 0), NodeRef(f"n{b}", 0), r, t))
            naive.add(f"n{a}", f"n{b}", r, t)
        else:
            _, now, tau = op
            assert store.prune_outdated(now, tau) == naive.prune(now, tau)
            for idx in range(len(store)):
                assert all(now - e.timestamp <= tau for e in store.neighbors(idx))
    for idx in range(len(store)):
        got = [(store.ids[e.neighbor], e.edge_type, e.timestamp) for e in store.neighbors(idx)]
        assert got == naive.neighbors(store.ids[idx])
        if cap is not None:
            assert len(got) <= cap


def test_noise_table_distribution():
    table = NoiseTable()
    for i in range(4):
        table.add(i)
    for i, c in enumerate([1, 16, 0, 81]):
        table.set_count(i, c)
    assert table.weight(1) == pytest.approx(8.0)
    rng = random.Random(3)
    draws = table.sample(20_000, rng, exclude={3})
    assert 2 not in draws and 3 not in draws
    frac = draws.count(1) / len(draws)
    assert frac == pytest.approx(8 / 9, abs=0.01)
    assert table.sample(5, rng, exclude={0, 1, 3}) == []


def test_negatives_exclude_endpoints_and_follow_type(click_graph, rng, tables):
    s = click_graph
    u1, v1 = s.lookup("u1"), s.lookup("v1")
    negs = s.sample_negatives(tables.node_type_id("Video"), 200, rng, exclude=(u1, v1))
    assert negs and v1 not in negs
    assert all(s.types[n] == tables.node_type_id("Video") for n in negs)


def test_edge_list_round_trip(tmp_path, tables):
    edges = [edge(tables, "u1", "User", "v1", "Video", "click", 0.5),
             edge(tables, "a1", "Author", "v1", "Video", "upload", 1.0 / 3.0)]
    path = tmp_path / "e.tsv"
    write_edge_list(path, edges, tables)
    back, t2 = read_edge_list(path, TypeTables.from_dict(tables.to_dict()))
    assert back == edges


def test_edge_list_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("# header\nu\tU\tv\tV\tc\t1.0\nu\tU\tv\tV\tc\n")
    with pytest.raises(DataError, match=":3:"):
        read_edge_list(path)
    path.write_text("u\tU\tv\tV\tc\tsoon\n")
    with pytest.raises(DataError, match=":1:"):
        read_edge_list(path)
    path.write_text("u\tU\tv\tX\tc\t1\n")
    with pytest.raises(ConfigError, match="unknown node type"):
        read_edge_list(path, TypeTables(["U", "V"], ["c"], frozen=True))
