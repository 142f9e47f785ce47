import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gasmarket import fixtures as F
from gasmarket.network import (Compressor, GasProperties, Network, NetworkError, Node, Pipe, Scaling,
                               build_incidence, nondimensionalize, redimensionalize, refine_network,
                               segment_count, total_length)


def chain(lengths, diameter=0.5):
    nodes = [Node("N0", slack=True, slack_density=np.array([40.0]))]
    nodes += [Node(f"N{i + 1}", density_min=1.0, density_max=80.0) for i in range(len(lengths))]
    pipes = [Pipe(f"P{i}", f"N{i}", f"N{i + 1}", L, diameter, 0.01) for i, L in enumerate(lengths)]
    return Network(tuple(nodes), tuple(pipes), gas=GasProperties(377.0))


def two_node(**pipe_kw):
    kw = dict(length=1000.0, diameter=0.5, friction=0.01)
    kw.update(pipe_kw)
    return Network((Node("S", slack=True, slack_density=np.array([1.0])), Node("J")),
                   (Pipe("P", "S", "J", **kw),))


class TestValidation:
    def test_fixtures_are_valid(self):
        for net in (F.line3(), F.long_line(), F.synthetic25(), F.single_pipe()):
            assert net.slack_nodes

    def test_slack_nodes_ordered_first(self):
        net = Network((Node("J", density_min=1, density_max=2),
                       Node("S", slack=True, slack_density=np.array([1.0]))),
                      (Pipe("P", "S", "J", 1.0, 1.0, 0.1),))
        assert [n.id for n in net.ordered_nodes] == ["S", "J"]
        assert build_incidence(net).node_ids == ("S", "J")

    def test_zero_diameter_names_the_pipe(self):
        with pytest.raises(NetworkError, match="pipe P: diameter"):
            two_node(diameter=0.0)

    def test_disconnected_graph_rejected(self):
        nodes = (Node("S", slack=True, slack_density=np.array([1.0])), Node("A"), Node("B"), Node("C"))
        with pytest.raises(NetworkError, match="not connected"):
            Network(nodes, (Pipe("P1", "S", "A", 1, 1, 0.1), Pipe("P2", "B", "C", 1, 1, 0.1)))

    def test_missing_slack_rejected(self):
        with pytest.raises(NetworkError, match="slack"):
            Network((Node("A"), Node("B")), (Pipe("P", "A", "B", 1, 1, 0.1),))

    def test_nonslack_with_profile_rejected(self):
        with pytest.raises(NetworkError):
            Network((Node("S", slack=True, slack_density=np.array([1.0])),
                     Node("J", slack_density=np.array([1.0]))), (Pipe("P", "S", "J", 1, 1, 0.1),))

    def test_density_bounds_ordered(self):
        with pytest.raises(NetworkError, match="density_min"):
            Network((Node("S", slack=True, slack_density=np.array([1.0])), Node("J", density_min=2.0, density_max=1.0)),
                    (Pipe("P", "S", "J", 1, 1, 0.1),))

    def test_compressor_checks(self):
        base = two_node()
        with pytest.raises(NetworkError, match="unknown pipe"):
            Network(base.nodes, base.pipes, (Compressor("C", "Q"),))
        with pytest.raises(NetworkError, match="ratio_max"):
            Network(base.nodes, base.pipes, (Compressor("C", "P", ratio_max=0.9),))
        with pytest.raises(NetworkError, match="two stations"):
            Network(base.nodes, base.pipes, (Compressor("C", "P"), Compressor("D", "P")))

    def test_area_defaults_to_circle(self):
        p = Pipe("P", "A", "B", 1.0, 0.6, 0.01)
        assert p.area == pytest.approx(math.pi * 0.09)

    def test_sound_speed_from_state(self):
        g = GasProperties.from_state(0.9, 500.0, 300.0)
        assert g.sound_speed ** 2 == pytest.approx(0.9 * 500.0 * 300.0)

    def test_compressor_derived_constants(self):
        c = Compressor("C", "P", gamma=1.4, adiabatic_eff=0.8, mechanical_eff=0.9, gravity=0.6,
                       discharge_temp=300.0)
        assert c.exponent == pytest.approx(2.0 / 7.0)
        assert c.epsilon == pytest.approx(286.76 * 300.0 / (0.8 * 0.9 * 0.6 * (2.0 / 7.0)))


class TestRefinement:
    def test_segment_counts(self):
        assert segment_count(50_000.0, 10_000.0) == 6
        assert segment_count(10_000.0, 10_000.0) == 2
        assert segment_count(9_999.0, 10_000.0) == 1

    def test_fifty_km_pipe(self):
        ref = refine_network(chain([50_000.0]), 10_000.0)
        assert all(p.length < 10_000.0 for p in ref.pipes)
        assert len(ref.pipes) == 6 and len(ref.nodes) == 2 + 5

    def test_boundary_case_splits_in_two(self):
        ref = refine_network(chain([10_000.0]), 10_000.0)
        assert [p.length for p in ref.pipes] == [5_000.0, 5_000.0]

    def test_synthetic25_every_segment_short(self):
        ref = refine_network(F.synthetic25(), 10_000.0)
        assert max(p.length for p in ref.pipes) < 10_000.0
        assert math.isclose(total_length(ref), total_length(F.synthetic25()), rel_tol=1e-12)

    def test_interior_nodes_inherit_bounds(self):
        net = F.line3(maop_bar=55.0)
        ref = refine_network(net, 10_000.0)
        interior = [n for n in ref.nodes if "#" in n.id and n.id.startswith("P1")]
        cap = net.pipe("P1").density_max
        lo = min(net.node("S").density_min, net.node("J1").density_min)
        assert interior and all(n.density_max == cap and n.density_min == lo and not n.slack for n in interior)

    def test_compressor_moves_to_end_segment(self):
        ref = refine_network(F.line3(), 10_000.0)
        comp = ref.compressors[0]
        seg = ref.pipe(comp.pipe)
        assert seg.from_node == "J1"
        assert ref.parent[comp.pipe] == "P2"

    def test_invalid_delta(self):
        with pytest.raises(NetworkError):
            refine_network(chain([1.0]), 0.0)

    @given(st.lists(st.floats(100.0, 80_000.0), min_size=1, max_size=5), st.floats(500.0, 30_000.0))
    def test_refinement_properties(self, lengths, delta):
        net = chain(lengths)
        ref = refine_network(net, delta)
        assert max(p.length for p in ref.pipes) < delta
        assert math.isclose(total_length(ref), total_length(net), rel_tol=1e-12)
        assert sum(segment_count(L, delta) for L in lengths) == len(ref.pipes)
        again = refine_network(ref, delta * (1 + 1e-9) + max(p.length for p in ref.pipes))
        assert [p.length for p in again.pipes] == [p.length for p in ref.pipes]


class TestScaling:
    def test_examples(self):
        s = Scaling(5000.0, 35.0, 377.0)
        nd = nondimensionalize(chain([50_000.0]), s)
        assert nd.pipes[0].length == pytest.approx(10.0)
        one = Network((Node("S", slack=True, slack_density=np.array([35.0])), Node("J", density_min=17.5, density_max=70.0)),
                      (Pipe("P", "S", "J", 1.0, 1.0, 0.1),))
        nd = nondimensionalize(one, s)
        assert nd.node("S").slack_density[0] == pytest.approx(1.0)
        assert nd.node("J").density_max == pytest.approx(2.0)
        assert s.time == pytest.approx(5000.0 / 377.0)
        assert s.mass_flow == pytest.approx(377.0 * 35.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(NetworkError):
            Scaling(0.0, 1.0, 1.0)

    def test_double_nondim_rejected(self):
        nd = nondimensionalize(chain([1.0]), Scaling.identity())
        with pytest.raises(NetworkError):
            nondimensionalize(nd, Scaling.identity())

    @given(st.floats(10.0, 1e5), st.floats(0.1, 100.0), st.floats(100.0, 500.0), st.floats(0.1, 4.0))
    def test_round_trip(self, length, density, speed, area):
        net = refine_network(F.synthetic25(), 20_000.0)
        back = redimensionalize(nondimensionalize(net, Scaling(length, density, speed, area)))
        for a, b in zip(net.pipes, back.pipes):
            for attr in ("length", "diameter", "area", "density_max"):
                assert math.isclose(getattr(a, attr), getattr(b, attr), rel_tol=1e-12)
        for a, b in zip(net.nodes, back.nodes):
            assert math.isclose(a.density_min, b.density_min, rel_tol=1e-12)
            if a.slack:
                np.testing.assert_allclose(a.slack_density, b.slack_density, rtol=1e-12)


class TestIncidence:
    def test_single_edge(self):
        inc = build_incidence(two_node())
        np.testing.assert_array_equal(inc.A.toarray(), [[-1.0], [1.0]])

    def test_weighted_incidence(self):
        net = Network(two_node().nodes, two_node().pipes, (Compressor("C", "P", "+"),))
        inc = build_incidence(net)
        af, at = inc.edge_ratios(np.array([1.0]))
        at = at * 1.2
        np.testing.assert_allclose(inc.B((af, at)).toarray(), [[-1.0], [1.2]])

    def test_unit_ratios_give_A(self):
        inc = build_incidence(refine_network(F.synthetic25(), 10_000.0))
        np.testing.assert_array_equal(inc.B().toarray(), inc.A.toarray())
        A = inc.A.toarray()
        assert np.all(A.sum(axis=0) == 0)
        assert np.all((A == 1).sum(axis=0) == 1) and np.all((A == -1).sum(axis=0) == 1)

    @given(st.lists(st.floats(1.0, 3.0), min_size=5, max_size=5))
    def test_sign_of_B_matches_A(self, ratios):
        inc = build_incidence(refine_network(F.synthetic25(), 10_000.0))
        B = inc.B(inc.edge_ratios(np.array(ratios))).toarray()
        np.testing.assert_array_equal(np.sign(B), inc.A.toarray())

    def test_diagonals_positive(self):
        inc = build_incidence(refine_network(F.synthetic25(), 10_000.0))
        assert np.all(inc.length > 0) and np.all(inc.friction > 0) and np.all(inc.area > 0)
        assert inc.n_slack == 1
