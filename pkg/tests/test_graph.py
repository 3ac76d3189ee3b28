"""Scene graph: token arithmetic, structure lint, distillation, corruption."""

import numpy as np
import pytest

from evonav.graph import (
    DistilledGraph,
    GraphError,
    SceneGraph,
    SceneNode,
    attach_embeddings,
    corrupt,
    count_text_tokens,
    form_element_graph,
    load_graph,
    save_graph,
    token_count,
)


def small_graph():
    return SceneGraph(
        [
            SceneNode("apartment", "root"),
            SceneNode("floor_0", "floor", parent="apartment"),
            SceneNode("room_a", "room", parent="floor_0", position=(1.0, 1.0)),
            SceneNode("obj_sink", "object", tag="sink", parent="room_a", position=(2.0, 1.5)),
        ],
        graph_id="apt",
    )


class CountingEmbedder:
    def __init__(self, dim=4):
        self.dim = dim
        self.calls = []

    def embed(self, text):
        self.calls.append(text)
        v = np.zeros(self.dim)
        v[hash(text) % self.dim] = 1.0
        return v


class TestTokenCounting:
    def test_plain_identifier_line(self):
        assert count_text_tokens("id:object_0_6_52 tag:sink room:room_6") == 6

    def test_empty_braces(self):
        assert count_text_tokens("{}") == 0

    def test_structural_chars_are_separators(self):
        assert count_text_tokens('pos:[1.00,2.00]') == 3
        assert count_text_tokens('{"a": 1, "b": [2, 3]}') == 5

    def test_underscored_ids_stay_single_tokens(self):
        assert count_text_tokens("object_0_6_52") == 1

    def test_whitespace_varieties(self):
        assert count_text_tokens("a\tb\nc  d") == 4

    def test_empty_string(self):
        assert count_text_tokens("") == 0


class TestSerialization:
    def test_node_line_layout(self):
        node = SceneNode("obj_1", "object", tag="sink", parent="room_1", position=(1.0, 2.0))
        assert node.serialize_line() == "id:obj_1 level:object tag:sink parent:room_1 pos:[1.00,2.00]"
        assert count_text_tokens(node.serialize_line()) == 11

    def test_optional_fields_omitted(self):
        assert SceneNode("apartment", "root").serialize_line() == "id:apartment level:root"

    def test_graph_serialization_is_sorted_and_braced(self):
        text = small_graph().serialize()
        lines = text.splitlines()
        assert lines[0] == "{" and lines[-1] == "}"
        ids = [line.split()[0] for line in lines[1:-1]]
        assert ids == ["id:apartment", "id:floor_0", "id:obj_sink", "id:room_a"]

    def test_empty_graph_serializes_to_braces(self):
        assert SceneGraph().serialize() == "{}"

    def test_token_count_by_hand(self):
        # 4 (root) + 6 (floor) + 9 (room with pos) + 11 (object) = 30
        assert token_count(small_graph()) == 30

    def test_serialization_deterministic(self):
        a = small_graph().serialize()
        b = small_graph().copy().serialize()
        assert a == b


class TestStructure:
    def test_duplicate_id_rejected(self):
        g = small_graph()
        with pytest.raises(GraphError, match="duplicate"):
            g.add(SceneNode("room_a", "room", parent="floor_0", position=(0, 0)))

    def test_unknown_node_rejected(self):
        with pytest.raises(GraphError, match="unknown node"):
            small_graph().get("nope")

    def test_unknown_level_rejected(self):
        with pytest.raises(GraphError, match="unknown level"):
            SceneNode("x", "country")

    def test_ancestors_walk_to_root(self):
        g = small_graph()
        assert [n.node_id for n in g.ancestors("obj_sink")] == ["room_a", "floor_0", "apartment"]
        assert g.ancestors("apartment") == []

    def test_room_of(self):
        g = small_graph()
        assert g.room_of("obj_sink").node_id == "room_a"
        assert g.room_of("room_a").node_id == "room_a"
        assert g.room_of("floor_0") is None

    def test_children_and_levels(self):
        g = small_graph()
        assert [n.node_id for n in g.children("room_a")] == ["obj_sink"]
        assert [n.node_id for n in g.nodes_at("room")] == ["room_a"]
        assert g.root().node_id == "apartment"

    def test_validate_accepts_good_graph(self):
        assert small_graph().validate() == []

    def test_validate_flags_two_roots(self):
        g = small_graph()
        g.add(SceneNode("second_root", "root"))
        issues = g.validate()
        assert any("exactly one root" in s for s in issues)

    def test_validate_flags_unknown_parent(self):
        g = SceneGraph([SceneNode("r", "root"), SceneNode("f", "floor", parent="ghost")])
        assert any("unknown parent" in s for s in g.validate())

    def test_validate_flags_level_skip(self):
        g = SceneGraph(
            [
                SceneNode("r", "root"),
                SceneNode("f", "floor", parent="r"),
                SceneNode("o", "object", parent="f", position=(0, 0)),
            ]
        )
        assert any("violates level ordering" in s for s in g.validate())

    def test_validate_flags_missing_position(self):
        g = SceneGraph(
            [
                SceneNode("r", "root"),
                SceneNode("f", "floor", parent="r"),
                SceneNode("room_x", "room", parent="f"),
            ]
        )
        assert any("has no position" in s for s in g.validate())

    def test_validate_flags_bad_embedding_norm(self):
        g = SceneGraph(
            [
                SceneNode("r", "root"),
                SceneNode("f", "floor", parent="r"),
                SceneNode(
                    "room_x", "room", parent="f", position=(0, 0),
                    embedding=np.array([1.0, 1.0]),
                ),
            ]
        )
        assert any("embedding norm" in s for s in g.validate())

    def test_validate_flags_unreachable(self):
        g = SceneGraph(
            [
                SceneNode("r", "root"),
                SceneNode("o", "object", parent="o", position=(0, 0)),
            ]
        )
        assert any("not reachable" in s for s in g.validate())


class TestDistillation:
    def test_ancestor_closure(self):
        g = small_graph()
        d = form_element_graph(g, ["obj_sink"], iteration=2)
        assert isinstance(d, DistilledGraph)
        assert sorted(n.node_id for n in d.nodes()) == [
            "apartment", "floor_0", "obj_sink", "room_a",
        ]
        assert d.parent_graph_id == "apt"
        assert d.iteration == 2

    def test_room_selection_excludes_objects(self):
        d = form_element_graph(small_graph(), ["room_a"])
        assert sorted(n.node_id for n in d.nodes()) == ["apartment", "floor_0", "room_a"]

    def test_distilled_tokens_never_exceed_full(self):
        g = small_graph()
        d = form_element_graph(g, ["room_a"])
        assert token_count(d) <= token_count(g)

    def test_unknown_selection_raises(self):
        with pytest.raises(GraphError, match="unknown node"):
            form_element_graph(small_graph(), ["ghost"])


class TestCorruption:
    def test_add_phantom_is_pure(self):
        g = small_graph()
        out = corrupt(
            g,
            {"op": "add_phantom", "id": "obj_ghost", "tag": "sink",
             "parent": "room_a", "position": [3.0, 3.0]},
        )
        assert "obj_ghost" in out
        assert "obj_ghost" not in g
        assert out.get("obj_ghost").position == (3.0, 3.0)

    def test_phantom_with_unknown_parent_rejected(self):
        with pytest.raises(GraphError, match="phantom parent"):
            corrupt(small_graph(), {"op": "add_phantom", "id": "x", "parent": "nowhere"})

    def test_phantom_duplicate_id_rejected(self):
        with pytest.raises(GraphError, match="duplicate"):
            corrupt(small_graph(), {"op": "add_phantom", "id": "obj_sink", "parent": "room_a"})

    def test_move_changes_copy_only(self):
        g = small_graph()
        out = corrupt(g, {"op": "move", "id": "obj_sink", "position": [9.0, 9.0]})
        assert out.get("obj_sink").position == (9.0, 9.0)
        assert g.get("obj_sink").position == (2.0, 1.5)

    def test_delete_leaf(self):
        out = corrupt(small_graph(), {"op": "delete", "id": "obj_sink"})
        assert "obj_sink" not in out

    def test_delete_with_children_rejected(self):
        with pytest.raises(GraphError, match="with children"):
            corrupt(small_graph(), {"op": "delete", "id": "room_a"})

    def test_unknown_op_rejected(self):
        with pytest.raises(GraphError, match="unknown corruption"):
            corrupt(small_graph(), {"op": "rotate", "id": "obj_sink"})


class TestEmbeddings:
    def test_fills_only_missing(self):
        emb = CountingEmbedder()
        pre = np.zeros(4)
        pre[0] = 1.0
        g = SceneGraph(
            [
                SceneNode("r", "root"),
                SceneNode("f", "floor", parent="r"),
                SceneNode("room_x", "room", parent="f", position=(0, 0), embedding=pre),
                SceneNode("obj_y", "object", parent="room_x", position=(1, 1), text="blue sink"),
            ]
        )
        out = attach_embeddings(g, emb)
        assert emb.calls == ["blue sink"]  # the room already had one
        np.testing.assert_array_equal(out.get("room_x").embedding, pre)
        assert out.get("obj_y").embedding is not None

    def test_source_fallback_text_tag_id(self):
        emb = CountingEmbedder()
        g = SceneGraph(
            [
                SceneNode("r", "root"),
                SceneNode("f", "floor", parent="r"),
                SceneNode("room_x", "room", parent="f", position=(0, 0), text="the kitchen"),
                SceneNode("obj_a", "object", parent="room_x", position=(0, 0), tag="sink"),
                SceneNode("obj_b", "object", parent="room_x", position=(0, 0)),
            ]
        )
        attach_embeddings(g, emb)
        # iteration follows sorted node ids: obj_a, obj_b, room_x
        assert emb.calls == ["sink", "obj_b", "the kitchen"]

    def test_root_and_floor_skipped(self):
        emb = CountingEmbedder()
        g = SceneGraph([SceneNode("r", "root"), SceneNode("f", "floor", parent="r")])
        attach_embeddings(g, emb)
        assert emb.calls == []


class TestPersistence:
    def test_round_trip(self, tmp_path):
        g = small_graph()
        path = tmp_path / "graph.yaml"
        save_graph(g, path)
        loaded = load_graph(path)
        assert loaded.serialize() == g.serialize()
        assert loaded.graph_id == "apt"

    def test_round_trip_with_embeddings(self, tmp_path):
        emb = CountingEmbedder()
        g = attach_embeddings(small_graph(), emb)
        path = tmp_path / "graph.yaml"
        save_graph(g, path, include_embeddings=True)
        loaded = load_graph(path)
        np.testing.assert_array_equal(
            loaded.get("obj_sink").embedding, g.get("obj_sink").embedding
        )

    def test_load_attaches_embeddings_when_asked(self, tmp_path):
        path = tmp_path / "graph.yaml"
        save_graph(small_graph(), path)
        emb = CountingEmbedder()
        loaded = load_graph(path, embedder=emb)
        assert loaded.get("obj_sink").embedding is not None
        assert "sink" in emb.calls

    def test_invalid_graph_file_rejected(self, tmp_path):
        path = tmp_path / "graph.yaml"
        path.write_text("id: broken\nnodes:\n- id: lonely\n  level: object\n")
        with pytest.raises(GraphError, match="invalid graph"):
            load_graph(path)

    def test_non_mapping_file_rejected(self, tmp_path):
        path = tmp_path / "graph.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(GraphError, match="bad graph file"):
            load_graph(path)
