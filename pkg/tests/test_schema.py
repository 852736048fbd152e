import pytest
from hypothesis import given, strategies as st

from supa.errors import ConfigError
from supa.graph import TypeTables
from supa.schema import MetapathSchema, group_by_head, load_schemas, parse_schema, symmetrize


def test_parse_three_node_schema(tables):
    s = parse_schema("User -{click}- Video -{click}- User", tables)
    assert len(s) == 3
    assert s.edge_type_sets == (frozenset({0}), frozenset({0}))
    assert s.is_symmetric


def test_parse_lastfm_schema():
    tables = TypeTables(["U", "A"], ["L"], frozen=True)
    s = parse_schema("U -{L}- A -{L}- U", tables)
    assert s.format(tables) == "U -{L}- A -{L}- U"


def test_parse_multi_edge_set():
    tables = TypeTables(["U", "M"], ["R", "T"], frozen=True)
    s = parse_schema("U -{R, T}- M", tables)
    assert s.edge_type_sets == (frozenset({0, 1}),)


@pytest.mark.parametrize("text", ["User -{}- Video", "User", "User -{click}-", "-{click}- Video",
                                  "User Video", "User -{click}- Video -{}- User"])
def test_parse_errors(text, tables):
    with pytest.raises(ConfigError):
        parse_schema(text, tables)


def test_unknown_type_with_frozen_tables():
    tables = TypeTables(["U"], ["L"], frozen=True)
    with pytest.raises(ConfigError):
        parse_schema("U -{L}- X", tables)
    with pytest.raises(ConfigError):
        parse_schema("U -{Z}- U", tables)


def test_symmetrize_mirrors_asymmetric():
    tables = TypeTables(["U", "V", "A"], ["W", "U"])
    s = parse_schema("U -{W}- V -{U}- A", tables)
    sym = symmetrize(s)
    assert sym.format(tables) == "U -{W}- V -{U}- A -{U}- V -{W}- U"
    assert symmetrize(sym) is sym


def test_symmetric_is_fixpoint(tables):
    s = parse_schema("User -{click}- Video -{click}- User", tables)
    assert symmetrize(s) is s


schemas = st.integers(2, 5).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 2), min_size=n, max_size=n),
    st.lists(st.frozensets(st.integers(0, 2), min_size=1, max_size=3), min_size=n - 1, max_size=n - 1)))


@given(schemas)
def test_symmetrize_idempotent_and_symmetric(spec):
    nodes, edges = spec
    s = MetapathSchema(tuple(nodes), tuple(edges))
    once = symmetrize(s)
    assert once.is_symmetric
    assert symmetrize(once) == once
    assert once.head == s.head


@given(schemas)
def test_position_constraints_periodic(spec):
    s = symmetrize(MetapathSchema(tuple(spec[0]), tuple(spec[1])))
    period = len(s) - 1
    for i in range(2, 51):
        assert s.position_constraints(i) == s.position_constraints(i + period)
    assert s.position_constraints(1)[0] == s.position_constraints(1 + period)[0]


def test_position_constraints_follow_worked_example(tables):
    s = parse_schema("User -{click}- Video -{click}- User", tables)
    user, video = tables.node_type_id("User"), tables.node_type_id("Video")
    assert s.position_constraints(1) == (user, None)
    assert [s.position_constraints(i)[0] for i in range(1, 6)] == [user, video, user, video, user]
    assert s.position_constraints(3) == (user, frozenset({0}))
    assert s.position_constraints(4)[0] == video
    with pytest.raises(ValueError):
        s.position_constraints(0)


def test_load_schemas(tmp_path):
    tables = TypeTables()
    path = tmp_path / "s.txt"
    path.write_text("# comment\nU -{W}- V\n\nV -{W}- U -{W}- V\n")
    loaded = load_schemas(path, tables)
    assert all(s.is_symmetric for s in loaded)
    assert sorted(group_by_head(loaded)) == [0, 1]
    with pytest.raises(ConfigError):
        load_schemas(tmp_path / "missing.txt", tables)
    path.write_text("U -{}- V\n")
    with pytest.raises(ConfigError, match=":1:"):
        load_schemas(path, tables)


def test_shipped_schema_files_parse():
    from conftest import ROOT

    for path in sorted((ROOT / "schemas").glob("*.txt")):
        assert load_schemas(path, TypeTables())
