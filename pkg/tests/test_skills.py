from __future__ import annotations

import itertools
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillgraph import world as W
from skillgraph.skills import (
    Evaluator,
    MissingBinding,
    NounSet,
    PolicySpec,
    Slot,
    UnresolvedNoun,
    Variant,
    bind,
    build_graph,
    concretize,
    expand_meta,
    feasible_edge,
)

SEVEN = ("Transit", "Pick", "PlaceUp", "PlaceDown", "SupportUp", "SupportDown", "Handover")
TARGET = W.Placement(20, 10, 0)
CANONICAL = {
    "Transit": {"robot": "r1", "cell": (20, 10)},
    "Pick": {"robot": "r1", "brick": "b1"},
    "PlaceUp": {"robot": "r1", "partner": "r2", "brick": "b1", "target": TARGET},
    "PlaceDown": {"robot": "r1", "brick": "b1", "target": TARGET},
    "SupportUp": {"robot": "r2", "target": TARGET},
    "SupportDown": {"robot": "r2"},
    "Handover": {"robot": "r1", "partner": "r2", "brick": "b1"},
}

# Rows are s_i, columns s_j, both in SEVEN order, at the packaged initial state.
# Frozen from the brute-force oracle below and checked by hand against the
# condition definitions (for example Pick->Handover is 0 because the store cell
# of b1 lies outside r2's region).
FROZEN_ADJACENCY = [
    [1, 1, 0, 0, 1, 0, 0],
    [1, 0, 0, 1, 1, 0, 0],
    [1, 0, 0, 0, 1, 0, 0],
    [1, 0, 0, 0, 1, 0, 0],
    [1, 1, 0, 0, 0, 1, 0],
    [1, 1, 0, 0, 1, 0, 0],
    [1, 0, 0, 0, 0, 0, 0],
]


def _oracle_edge(s_i, s_j, z) -> bool:
    """Apply the forced effect of s_i and test s_j.pre on the image directly."""
    try:
        image = W.apply_effect(z, s_i, check=False)
    except W.WorldError:
        return False
    return s_i.post.evaluate(image, s_i.bindings) and s_j.pre.evaluate(image, s_j.bindings)


@pytest.fixture(scope="module")
def seven(library):
    return [bind(library[n], CANONICAL[n]) for n in SEVEN]


class TestConcretize:
    def test_parallel_gripper_gets_side_grasp(self, library, z0):
        s = concretize(library["Pick"], NounSet.from_world(z0))
        assert s.bindings["robot"] == "r1"
        assert s.policy.parameters["grasp"] == "side-grasp"

    def test_suction_gets_top_grasp(self, library, z0):
        s = concretize(bind(library["Pick"], {"robot": "r2"}), NounSet.from_world(z0))
        assert s.policy.parameters["grasp"] == "top-suction"

    def test_idempotent(self, library, z0):
        n = NounSet.from_world(z0)
        once = concretize(library["Pick"], n)
        assert concretize(once, n) == once

    def test_empty_nouns(self, library):
        with pytest.raises(UnresolvedNoun):
            concretize(library["Pick"], NounSet())

    def test_category_filter(self, library, z0):
        s = replace(library["Pick"], slots=(Slot("robot", "robot", "suction"), Slot("brick", "object")))
        assert concretize(s, NounSet.from_world(z0)).bindings["robot"] == "r2"
        with pytest.raises(UnresolvedNoun):
            concretize(replace(s, slots=(Slot("robot", "robot", "vacuum"), Slot("brick", "object"))), NounSet.from_world(z0))


class TestFeasibleEdge:
    def test_pick_enables_place(self, library, z0):
        pick = bind(library["Pick"], {"robot": "r1", "brick": "b1"})
        place = bind(library["PlaceDown"], {"robot": "r1", "brick": "b1", "target": W.Placement(10, 10, 0)})
        assert feasible_edge(pick, place, z0)

    def test_pick_blocks_second_pick(self, library, z0):
        a = bind(library["Pick"], {"robot": "r1", "brick": "b1"})
        b = bind(library["Pick"], {"robot": "r1", "brick": "b2"})
        assert not feasible_edge(a, b, z0)

    def test_seven_by_seven_matches_brute_force(self, seven, z0):
        oracle = [[int(_oracle_edge(a, b, z0)) for b in seven] for a in seven]
        got = [[int(feasible_edge(a, b, z0)) for b in seven] for a in seven]
        assert got == oracle == FROZEN_ADJACENCY

    def test_edge_soundness_on_built_graph(self, seven, z0):
        g = build_graph(seven, NounSet.from_world(z0), z0)
        assert g.adjacency() == FROZEN_ADJACENCY
        for i, j in g.edges:
            image = W.apply_effect(z0, g.nodes[i], check=False)
            assert g.nodes[j].pre.evaluate(image, g.nodes[j].bindings)


class TestBuildGraph:
    def test_node_count_matches_binding_enumeration(self, library, z0):
        nouns = replace(
            NounSet.from_world(z0),
            objects=("b1", "b15"),
            sites={"target": (TARGET,), "cell": ((20, 10),)},
        )
        g = build_graph([library[n] for n in SEVEN], nouns, z0)
        expected = 0
        for n in SEVEN:
            slots = library[n].slots
            pools = [
                nouns.robots if s.kind == "robot" else nouns.objects if s.kind == "object" else nouns.sites[s.kind]
                for s in slots
            ]
            for combo in itertools.product(*pools):
                robots = [v for s, v in zip(slots, combo) if s.kind == "robot"]
                expected += len(set(robots)) == len(robots)
        assert len(g.nodes) == expected == 22

    def test_empty_library(self, z0):
        g = build_graph([], NounSet.from_world(z0), z0)
        assert g.nodes == () and not g.edges

    def test_single_transit_self_edge(self, library, z0):
        nouns = NounSet(robots=("r1",), sites={"cell": ((5, 5),)})
        g = build_graph([library["Transit"]], nouns, z0)
        assert len(g.nodes) == 1
        assert g.edges == frozenset({(0, 0)})
        assert _oracle_edge(g.nodes[0], g.nodes[0], z0)

    def test_deterministic(self, library, z0):
        nouns = NounSet(robots=("r1", "r2"), objects=("b1",), sites={"target": (TARGET,), "cell": ((20, 10),)})
        skills = [library[n] for n in SEVEN]
        assert build_graph(skills, nouns, z0) == build_graph(skills, nouns, z0)

    def test_meta_nodes_connect_through_body_ends(self, library, z0):
        nouns = replace(
            NounSet.from_world(z0),
            objects=("b1", "b2"),
            sites={"target": (W.Placement(10, 10, 0),), "cell": ((10, 10),)},
        )
        g = build_graph(library, nouns, z0)
        names = [n.name for n in g.nodes]
        assert "PickPlace" in names
        pp = [i for i, n in enumerate(g.nodes) if n.name == "PickPlace"]
        # PickPlace ends with the arm empty, so it may be followed by a new PickPlace
        assert any((i, j) in g.edges for i in pp for j in pp)

    def test_unresolved_noun_propagates(self, library, z0):
        with pytest.raises(UnresolvedNoun):
            build_graph([library["Pick"]], NounSet(robots=("r1",)), z0)


class TestExpandMeta:
    def test_pickplace_body(self, library):
        body = expand_meta(library.meta["PickPlace"], {"robot": "r1", "brick": "b1", "target": TARGET}, library)
        assert [s.verb for s in body] == ["Detect", "Pick", "Transit", "PlaceDown"]
        assert body[2].bindings["cell"] == (20, 10)

    def test_support_variant_uses_partner(self, library):
        b = {"robot": "r1", "partner": "r2", "brick": "b1", "target": TARGET}
        body = expand_meta(library.meta["PickPlacewSupport"], b, library)
        verbs = [s.verb for s in body]
        assert "SupportUp" in verbs and "SupportDown" in verbs
        assert body[verbs.index("SupportUp")].bindings["robot"] == "r2"

    def test_handover_body(self, library):
        b = {"robot": "r1", "partner": "r2", "brick": "b1", "target": TARGET, "handover": (24, 4)}
        body = expand_meta(library.meta["PickHandoverPlace"], b, library)
        assert [s.verb for s in body] == ["Detect", "Pick", "Transit", "Handover", "Transit", "PlaceDown"]

    def test_deterministic(self, library):
        b = {"robot": "r1", "brick": "b1", "target": TARGET}
        assert expand_meta(library.meta["PickPlace"], b, library) == expand_meta(library.meta["PickPlace"], b, library)

    def test_missing_binding(self, library):
        with pytest.raises(MissingBinding):
            expand_meta(library.meta["PickPlace"], {"robot": "r1"}, library)

    @given(st.integers(2, 26), st.integers(0, 40), st.sampled_from(["b1", "b2", "b15", "b16"]))
    @settings(max_examples=60, deadline=None)
    def test_body_establishes_meta_post(self, library, z0, x, y, brick):
        meta = library.meta["PickPlace"]
        b = {"robot": "r1", "brick": brick, "target": W.Placement(x, y, 0)}
        if not meta.skill.pre.evaluate(z0, b):
            return
        z = z0
        for atom in expand_meta(meta, b, library):
            z = W.apply_effect(z, atom)
        assert meta.skill.post.evaluate(z, b)

    def test_supported_overhang(self, library, z0):
        z = z0
        base = W.Placement(20, 10, 0)
        for atom in expand_meta(library.meta["PickPlace"], {"robot": "r1", "brick": "b15", "target": base}, library):
            z = W.apply_effect(z, atom)
        over = W.Placement(20, 10, 1)  # 2x4 on a 2x2: half the studs supported
        plain = bind(library["PlaceDown"], {"robot": "r1", "brick": "b1", "target": over})
        b = {"robot": "r1", "partner": "r2", "brick": "b1", "target": over}
        body = expand_meta(library.meta["PickPlacewSupport"], b, library)
        for atom in body:
            if atom.verb == "PlaceUp":
                assert not plain.pre.evaluate(z, plain.bindings)
            z = W.apply_effect(z, atom)
        assert library.meta["PickPlacewSupport"].skill.post.evaluate(z, b)
        assert not z.robot("r2").supporting


class TestValueTypes:
    def test_policy_requires_positive_duration(self):
        with pytest.raises(ValueError):
            PolicySpec("pick", 0.0)

    def test_policy_requires_variant(self):
        with pytest.raises(ValueError):
            PolicySpec("pick", 1.0, variants=())

    def test_variant_probability_range(self):
        with pytest.raises(ValueError):
            Variant("v", 1.0, 1.5)

    @given(
        st.sampled_from(["r1", "r2", "rx"]),
        st.sampled_from(["Pick", "PlaceDown", "Zap"]),
        st.sampled_from(["b1", "2x4", "b99"]),
        st.sampled_from(["shared", "r1", "none"]),
        st.floats(0, 100),
    )
    def test_evaluator_lookup_is_total(self, robot, verb, obj, bucket, nominal):
        ev = Evaluator(
            cost_model={("r1", "Pick", "*", "*"): 4.0},
            success_model={("*", "Pick", "2x4", "*"): 0.8},
            risk_factor={("*", "PlaceDown", "*", "*"): 1.5},
        )
        c = ev.cost(robot, verb, [obj], bucket, nominal)
        p = ev.success(robot, verb, [obj], bucket)
        assert 0 <= c < float("inf")
        assert 0.0 <= p <= 1.0

    def test_evaluator_json_round_trip(self):
        ev = Evaluator(
            cost_model={("r1", "Pick", "*", "*"): 4.0},
            penalties={("r1", 2, "b4"): 30.0},
            max_cost=50.0,
        )
        assert Evaluator.from_json(ev.to_json()) == ev
        assert ev.penalty("r1", 2, "b4") == 30.0 and ev.penalty("r2", 2, "b4") == 0.0
