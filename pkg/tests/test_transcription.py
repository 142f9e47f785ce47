from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import day_grid, prepared, solve_case
from gasmarket import fixtures as F
from gasmarket.collocation import build_grid
from gasmarket.dynamics import steady_state_solve
from gasmarket.ipm import SolverOptions, solve
from gasmarket.market import MarketData, TransferNode
from gasmarket.network import Network, build_incidence
from gasmarket.transcription import (NlpProblem, TranscriptionError, TranscriptionOptions, mpc_step, optimize,
                                     shift_market, unpack)


def random_point(nlp, rng):
    lo = np.where(np.isfinite(nlp.x_lower), nlp.x_lower, nlp.x0 - 1.0)
    hi = np.where(np.isfinite(nlp.x_upper), nlp.x_upper, nlp.x0 + 1.0)
    x = lo + (hi - lo) * rng.uniform(0.2, 0.8, nlp.n)
    L = nlp.layout
    rho = L.rho(np.arange(L.M)[:, None], np.arange(L.N)[None, :]).ravel()
    x[rho] = np.clip(x[rho], 0.3, None)
    return x


@pytest.fixture(scope="module")
def line3_small():
    base = F.line3()
    powered = Network(base.nodes, base.pipes, (replace(base.compressors[0], power_max=5e6),), base.gas)
    net = prepared(powered, 25_000.0)
    return NlpProblem(net, F.line3_market(), day_grid(net, F.line3_market(), 6))


def test_counts_single_pipe():
    nlp = NlpProblem(F.single_pipe(), F.toy_market(hours=4), build_grid(4.0, 4))
    assert nlp.m_eq == 8
    assert nlp.n == 4 * (1 + 1 + 0 + 2)
    assert not any(kind == "power" for kind, _ in nlp.ineq_kinds)


def test_power_rows_present_with_compressor(line3_small):
    kinds = {k for k, _ in line3_small.ineq_kinds}
    assert "power" in kinds and "maop" in kinds


def test_periodicity_is_implicit():
    nlp = NlpProblem(F.single_pipe(), F.toy_market(hours=4), build_grid(4.0, 4))
    # one mass and one momentum row per point: no separate closure rows
    assert nlp.m_eq == (nlp.layout.M + nlp.layout.E) * nlp.layout.N


def test_synthetic25_jacobian_sparse():
    net = prepared(F.synthetic25())
    nlp = NlpProblem(net, F.synthetic25_market(), day_grid(net, F.synthetic25_market()))
    assert nlp.jacobian_density < 0.005


def test_steady_state_satisfies_equalities():
    net = F.single_pipe()
    mk = MarketData((), {"J": np.full(8, 0.5)}, hours=8, hour_seconds=1.0)
    nlp = NlpProblem(net, mk, build_grid(8.0, 8))
    st = steady_state_solve(net, [1.0], [0.5])
    x = np.zeros(nlp.n)
    L = nlp.layout
    k = np.arange(L.N)
    x[L.rho(0, k)] = st.rho[0]
    x[L.phi(0, k)] = st.phi[0]
    assert np.abs(nlp.constraints(x)[: nlp.m_eq]).max() < 1e-10


def test_jacobian_pattern_static(line3_small):
    rng = np.random.default_rng(0)
    pats = []
    for _ in range(3):
        J = sp.csr_matrix(line3_small.jacobian(random_point(line3_small, rng)))
        J.sort_indices()
        pats.append((J.indptr.copy(), J.indices.copy()))
        assert np.count_nonzero(J.data) == J.nnz
    for p in pats[1:]:
        assert np.array_equal(p[0], pats[0][0]) and np.array_equal(p[1], pats[0][1])
    assert pats[0][1].size == line3_small.jacobian_nnz


def test_derivatives_match_finite_differences(line3_small):
    nlp = line3_small
    rng = np.random.default_rng(3)
    x = random_point(nlp, rng)
    J = sp.csr_matrix(nlp.jacobian(x)).toarray()
    y = rng.normal(size=nlp.m_eq + nlp.m_ineq)
    H = sp.csr_matrix(nlp.hessian(x, y, 0.7)).toarray()
    H = np.tril(H) + np.tril(H, -1).T
    g = nlp.gradient(x)
    lag_grad = lambda z: 0.7 * nlp.gradient(z) - sp.csr_matrix(nlp.jacobian(z)).T @ y
    h = 1e-6
    for i in rng.choice(nlp.n, 25, replace=False):
        e = np.zeros(nlp.n)
        e[i] = h
        fd_c = (nlp.constraints(x + e) - nlp.constraints(x - e)) / (2 * h)
        scale = max(1.0, np.abs(J[:, i]).max())
        assert np.abs(fd_c - J[:, i]).max() / scale < 1e-6
        fd_f = (nlp.objective(x + e) - nlp.objective(x - e)) / (2 * h)
        assert abs(fd_f - g[i]) < 1e-8
        fd_h = (lag_grad(x + e) - lag_grad(x - e)) / (2 * h)
        scale = max(1.0, np.abs(H[:, i]).max())
        assert np.abs(fd_h - H[:, i]).max() / scale < 1e-5


def test_objective_converges_with_refinement():
    hours = np.arange(24)
    cap = 0.2 + 0.1 * np.sin(2 * np.pi * hours / 24)
    mk = MarketData((TransferNode("supply", "S", "seller", 4.0, 0.0, np.inf),
                     TransferNode("buyer", "J", "buyer", 5.0, 0.0, cap),
                     TransferNode("seller", "J", "seller", 3.0, 0.0, 0.1)), {}, hours=24, hour_seconds=1.0)
    s = {n: optimize(F.single_pipe(), mk, build_grid(24.0, n)).surplus for n in (24, 48, 96)}
    d1, d2 = abs(s[24] - s[48]), abs(s[48] - s[96])
    assert d2 <= d1 / 1.8
    assert d1 < 1e-2 * abs(s[96])


def test_horizon_mismatch_rejected():
    with pytest.raises(TranscriptionError, match="horizon"):
        NlpProblem(F.single_pipe(), F.toy_market(), build_grid(12.0, 12))


def test_dimensional_network_rejected():
    with pytest.raises(TranscriptionError):
        NlpProblem(F.line3(), F.line3_market(), build_grid(24.0, 24))


def test_extension_only_when_needed():
    nd = prepared(F.long_line())
    periodic = NlpProblem(nd, F.long_line_market(swing=0.0), day_grid(nd, F.long_line_market(swing=0.0)))
    assert periodic.data.tau == 0.0
    ramp = NlpProblem(nd, F.long_line_market(), day_grid(nd, F.long_line_market()),
                      TranscriptionOptions(extension="on", tau_hours=6.0))
    assert ramp.grid.n_points == 24 + 6 and ramp.data.n_report == 24
    with pytest.raises(TranscriptionError):
        TranscriptionOptions(extension="maybe")


@pytest.fixture(scope="module")
def steady_line():
    net = prepared(F.long_line(), 150_000.0)
    mk = F.long_line_market(swing=0.0)
    opts = SolverOptions(kkt_tolerance=1e-12)
    return net, mk, opts, solve_case(net, mk, solver_options=opts)


class TestRolling:

    def test_pin_and_fixed_point(self, steady_line):
        net, mk, opts, sol = steady_line
        assert sol.status == "optimal"
        nlp = mpc_step(sol, mk, 0.0)
        nxt = unpack(nlp, solve(nlp, opts))
        assert nxt.status == "optimal"
        assert np.abs(nxt.arrays["rho"][:, 0] - sol.arrays["rho"][:, 0]).max() <= 1e-10
        for k, v in sol.schedule.items():
            assert np.abs(nxt.schedule[k] - v).max() <= 1e-6 * max(1.0, np.abs(v).max())

    def test_constant_data_shift_invariant(self, steady_line):
        net, mk, opts, sol = steady_line
        nlp = mpc_step(sol, shift_market(mk, 3), 3.0)
        nxt = unpack(nlp, solve(nlp, opts))
        assert nxt.status == "optimal"
        np.testing.assert_allclose(nxt.arrays["rho"][:, 0], sol.state_at(3 * nlp.data.hour_length), atol=1e-10)
        for k, v in sol.schedule.items():
            assert np.abs(nxt.schedule[k] - v).max() <= 1e-6 * max(1.0, np.abs(v).max())

    def test_shift_out_of_range(self, steady_line):
        _, mk, _, sol = steady_line
        with pytest.raises(TranscriptionError):
            mpc_step(sol, mk, 24.0)

    def test_topology_change_rejected(self, steady_line):
        _, mk, _, sol = steady_line
        other = prepared(F.long_line(), 50_000.0)
        assert build_incidence(other).n_nonslack != sol.arrays["rho"].shape[0]
        with pytest.raises(TranscriptionError, match="dimension"):
            mpc_step(sol, mk, 1.0, net=other)

    def test_shift_market_rolls(self):
        mk = F.line3_market()
        sh = shift_market(mk, 5)
        for a, b in zip(mk.transfers, sh.transfers):
            np.testing.assert_array_equal(np.roll(mk.hourly(a.qty_max), -5), sh.hourly(b.qty_max))
