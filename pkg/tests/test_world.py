from __future__ import annotations

import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillgraph import world as W
from skillgraph.skills import bind


def _grid_world(z0, cells):
    return replace(z0, grid={(x, y, lvl): "x" for x, y, lvl in cells})


class TestStability:
    def test_ground_level_is_stable(self, z0):
        assert W.check_stability(z0, "2x4", W.Placement(10, 10, 0))

    def test_unsupported_level_one_is_unstable(self, z0):
        assert not W.check_stability(z0, "2x2", W.Placement(10, 10, 1))

    def test_half_supported_two_by_four_is_stable(self, z0):
        z = _grid_world(z0, [(10, 10, 0), (11, 10, 0), (10, 11, 0), (11, 11, 0)])
        p = W.Placement(10, 10, 1)
        assert W.supported_studs(z, "2x4", p) == 4
        assert W.check_stability(z, "2x4", p)
        assert W.is_overhang(z, "2x4", p)

    def test_three_of_eight_is_unstable(self, z0):
        z = _grid_world(z0, [(10, 10, 0), (11, 10, 0), (10, 11, 0)])
        assert not W.check_stability(z, "2x4", W.Placement(10, 10, 1))

    def test_off_plate_is_unstable(self, z0):
        assert not W.check_stability(z0, "2x4", W.Placement(46, 0, 0))

    @given(
        st.sets(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=20),
        st.sampled_from(["2x2", "2x4"]),
        st.sampled_from([0, 90]),
    )
    @settings(max_examples=200, deadline=None)
    def test_majority_rule_matches_count(self, z0, below, bt, ori):
        z = _grid_world(z0, [(x, y, 0) for x, y in below])
        p = W.Placement(1, 1, 1, ori)
        cells = W.footprint_cells(bt, p)
        supported = sum(1 for c in cells if c in below)
        assert W.check_stability(z, bt, p) == (supported >= math.ceil(len(cells) / 2))


class TestReachability:
    def test_inside_own_region(self, z0):
        assert W.reachable(z0, "r1", (5, 5))
        assert not W.reachable(z0, "r2", (5, 5))

    def test_outside_both_regions(self, z0):
        for r in ("r1", "r2"):
            assert not W.reachable(z0, r, (24, 60))

    def test_shared_band_reachable_by_both(self, z0):
        # oracle: intersection of the configured rectangles [0,30) and [18,48)
        for x in range(0, 48):
            both = W.reachable(z0, "r1", (x, 10)) and W.reachable(z0, "r2", (x, 10))
            assert both == (18 <= x < 30)
        assert W.position_bucket(z0, (20, 10)) == "shared"

    def test_unknown_robot(self, z0):
        with pytest.raises(W.UnknownRobot):
            W.reachable(z0, "r9", (1, 1))


class TestOccupancy:
    def test_single_segment(self):
        traj = W.Trajectory(((frozenset({(1, 1)}), 2.0),))
        assert W.occupancy(traj, 3.0) == [((1, 1), (3.0, 5.0))]

    def test_two_segments_are_contiguous(self):
        traj = W.Trajectory(((frozenset({(0, 0)}), 1.5), (frozenset({(0, 1)}), 2.0)))
        occ = W.occupancy(traj, 0.0)
        assert occ == [((0, 0), (0.0, 1.5)), ((0, 1), (1.5, 3.5))]

    def test_negative_start_rejected(self):
        with pytest.raises(ValueError):
            W.occupancy(W.Trajectory(((frozenset(), 1.0),)), -1.0)

    def test_empty_trajectory_rejected(self):
        with pytest.raises(ValueError):
            W.Trajectory(())

    @given(
        st.lists(
            st.tuples(
                st.frozensets(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=3),
                st.integers(1, 50),
            ),
            min_size=1,
            max_size=6,
        ),
        st.integers(0, 100),
    )
    @settings(max_examples=200, deadline=None)
    def test_span_equals_duration_sum(self, segs, start):
        traj = W.Trajectory(tuple((c, d / 10) for c, d in segs))
        occ = W.occupancy(traj, start)
        lo = min(iv[0] for _, iv in occ)
        hi = max(iv[1] for _, iv in occ)
        assert lo == start
        assert hi == pytest.approx(start + sum(d / 10 for _, d in segs))
        # interval arithmetic oracle: segment k starts at the prefix sum
        t = float(start)
        for cells, d in traj.segments:
            for c in cells:
                assert (c, (t, t + d)) in occ
            t += d


class TestEffects:
    def test_pick_puts_brick_in_hand(self, z0, library):
        z = W.apply_effect(z0, bind(library["Pick"], {"robot": "r1", "brick": "b1"}))
        assert z.brick("b1").location == W.InHand("r1")
        assert z.robot("r1").holding == "b1"
        assert z0.brick("b1").location == W.InStore(1, -7)

    def test_place_without_holding_raises(self, z0, library):
        s = bind(library["PlaceDown"], {"robot": "r1", "brick": "b1", "target": W.Placement(10, 10, 0)})
        with pytest.raises(W.PreconditionViolated) as ei:
            W.apply_effect(z0, s)
        assert "at(" in str(ei.value)

    def test_pickplace_chain_matches_hand_simulation(self, z0, library):
        tgt = W.Placement(10, 10, 0)
        chain = [
            bind(library["Detect"], {"robot": "r1", "brick": "b1"}),
            bind(library["Pick"], {"robot": "r1", "brick": "b1"}),
            bind(library["Transit"], {"robot": "r1", "cell": (10, 10)}),
            bind(library["PlaceDown"], {"robot": "r1", "brick": "b1", "target": tgt}),
        ]
        z = z0
        for s in chain:
            z = W.apply_effect(z, s)
        # hand oracle: home (8,20) -> store (1,-7) is 27 cells, store -> (10,10) is 17
        assert z.clock == pytest.approx(1.0 + (3.0 + 2.7) + 1.7 + 3.0)
        assert z.brick("b1").location == W.OnPlate(10, 10, 0)
        assert z.robot("r1").holding is None
        assert z.robot("r1").eef_cell == (10, 10)
        assert {c for c, bid in z.grid.items() if bid == "b1"} == {
            (x, y, 0) for x in range(10, 14) for y in range(10, 12)
        }
        assert "b1" in z.detected

    def test_overlap_refused_even_when_forced(self, z0, library):
        tgt = W.Placement(10, 10, 0)
        z = W.apply_effect(z0, bind(library["Pick"], {"robot": "r1", "brick": "b1"}))
        z = W.apply_effect(z, bind(library["PlaceDown"], {"robot": "r1", "brick": "b1", "target": tgt}), check=False)
        z = W.apply_effect(z, bind(library["Pick"], {"robot": "r1", "brick": "b2"}))
        with pytest.raises(W.PreconditionViolated):
            W.apply_effect(z, bind(library["PlaceDown"], {"robot": "r1", "brick": "b2", "target": W.Placement(11, 10, 0)}), check=False)

    def test_effects_are_pure(self, z0, library):
        s = bind(library["Pick"], {"robot": "r1", "brick": "b1"})
        assert W.apply_effect(z0, s) == W.apply_effect(z0, s)

    def test_drop_returns_brick_to_store(self, z0, library):
        z = W.apply_effect(z0, bind(library["Pick"], {"robot": "r1", "brick": "b1"}))
        z = W.drop_brick(z, "b1")
        assert z.brick("b1").location == W.InStore(1, -7)
        assert z.robot("r1").holding is None

    @given(st.lists(st.tuples(st.sampled_from(["b1", "b2", "b15", "b16"]), st.integers(2, 26), st.integers(0, 40)), max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_random_chains_keep_invariants(self, z0, library, moves):
        z = z0
        for bid, x, y in moves:
            chain = [
                bind(library["Pick"], {"robot": "r1", "brick": bid}),
                bind(library["Transit"], {"robot": "r1", "cell": (x, y)}),
                bind(library["PlaceDown"], {"robot": "r1", "brick": bid, "target": W.Placement(x, y, 0)}),
            ]
            for s in chain:
                before = z.clock
                try:
                    z = W.apply_effect(z, s)
                except W.PreconditionViolated:
                    break
                assert z.clock >= before
            # one location per brick, grid consistent with OnPlate locations
            for b in z.bricks.values():
                if isinstance(b.location, W.OnPlate):
                    cells = W.footprint_cells(b.brick_type, W.Placement(b.location.x, b.location.y, b.location.level, b.orientation))
                    assert all(z.grid[(cx, cy, b.location.level)] == b.id for cx, cy in cells)
            assert sum(1 for v in z.grid.values()) == sum(
                len(W.footprint_cells(b.brick_type, W.Placement(0, 0, 0, b.orientation)))
                for b in z.bricks.values()
                if isinstance(b.location, W.OnPlate)
            )
