import dataclasses

import numpy as np
import pytest

from conftest import prepared
from gasmarket import fixtures as F
from gasmarket.collocation import build_grid
from gasmarket.dynamics import momentum_residual, steady_state_solve
from gasmarket.network import build_incidence
from gasmarket.simulator import (SimScenario, SimulationError, constraint_violations, simulate,
                                 trajectory_from_solution, validate_solution, write_trajectory_csv)
from gasmarket.transcription import optimize


@pytest.fixture(scope="module")
def line3():
    return prepared(F.line3())


def varying_pipe(step, duration=2.0):
    net = F.single_pipe()
    st = steady_state_solve(net, [1.0], [0.3])
    return simulate(SimScenario(net, st.rho, [1.0], lambda t: np.array([0.3 + 0.1 * np.sin(3 * t)]),
                                step=step, duration=duration))


def test_steady_state_is_fixed_point(line3):
    inc = build_incidence(line3)
    q = np.zeros(inc.n_nonslack)
    q[list(inc.node_ids[inc.n_slack:]).index("J2")] = 0.005
    sigma = line3.slack_nodes[0].slack_density[:1]
    st = steady_state_solve(line3, sigma, q, np.array([1.2]))
    tr = simulate(SimScenario(line3, st.rho, sigma, q, np.array([1.2]), step=0.5, duration=20.0, phi0=st.phi))
    assert np.abs(tr.rho - st.rho[:, None]).max() < 1e-8
    assert np.abs(tr.phi - st.phi[:, None]).max() < 1e-8


def test_global_equilibrium(line3):
    inc = build_incidence(line3)
    sigma = line3.slack_nodes[0].slack_density[:1]
    tr = simulate(SimScenario(line3, np.full(inc.n_nonslack, sigma[0]), sigma, np.zeros(inc.n_nonslack),
                              step=1.0, duration=10.0))
    assert np.abs(tr.rho - sigma[0]).max() < 1e-12 and np.abs(tr.phi).max() < 1e-12


def test_second_order_in_time():
    ref = varying_pipe(0.025)
    errs = []
    for h in (0.1, 0.05):
        tr = varying_pipe(h)
        errs.append(np.abs(tr.rho[:, -1] - ref.rho[:, -1]).max())
    assert 3.0 <= errs[0] / errs[1] <= 6.0


def test_mass_conservation(line3):
    inc = build_incidence(line3)
    sigma = line3.slack_nodes[0].slack_density[:1]
    row = list(inc.node_ids[inc.n_slack:]).index("J2")
    st = steady_state_solve(line3, sigma, np.eye(inc.n_nonslack)[row] * 0.003)

    def q(t):
        v = np.zeros(inc.n_nonslack)
        v[row] = 0.003 + 0.002 * np.sin(t / 20.0)
        return v

    tr = simulate(SimScenario(line3, st.rho, lambda t: sigma * (1 + 0.01 * np.sin(t / 30.0)), q,
                              np.array([1.1]), step=2.0, duration=200.0))
    dt = np.diff(tr.times)
    change = np.diff(tr.linepack)
    net_in = (tr.slack_inflow.sum(axis=0) - tr.withdrawal) * dt
    assert np.abs(change - net_in).max() <= 1e-9 * tr.linepack.max()
    vr = np.vstack([tr.sigma, tr.rho])
    for n in range(tr.times.size):
        assert np.abs(momentum_residual(vr[:, n], tr.phi[:, n], inc, inc.edge_ratios(tr.alpha[:, n]))).max() < 1e-8


def test_inconsistent_initial_state(line3):
    inc = build_incidence(line3)
    sigma = line3.slack_nodes[0].slack_density[:1]
    with pytest.raises(ValueError, match="momentum"):
        simulate(SimScenario(line3, np.full(inc.n_nonslack, sigma[0]), sigma, np.zeros(inc.n_nonslack),
                             phi0=np.ones(inc.n_edges)))


def test_newton_failure_reports_step():
    net = F.single_pipe()
    with pytest.raises(SimulationError) as info:
        simulate(SimScenario(net, [0.9], [1.0], [50.0], step=1.0, duration=3.0, max_newton=5))
    assert info.value.step == 0


def test_scenario_checks():
    with pytest.raises(ValueError):
        SimScenario(F.line3(), [1.0], [1.0], [0.0])
    with pytest.raises(ValueError):
        SimScenario(F.single_pipe(), [1.0], [1.0], [0.0], step=0.0)


class TestValidation:
    def test_steady_market_plan(self):
        # seller capped below the buyer so gas actually flows through the pipe
        sol = optimize(F.single_pipe(), F.toy_market(seller_cap=0.1), build_grid(24.0, 24))
        assert np.abs(sol.arrays["phi"]).min() > 0.05
        rep = validate_solution(sol, tol=1e-6)
        assert rep.max_deviation < 1e-6 and rep.periodicity_gap < 1e-6
        assert rep.ok

    def test_corrupted_flux_flagged(self, toy_solution):
        arrays = dict(toy_solution.arrays)
        arrays["phi"] = arrays["phi"] * 1.01
        bad = dataclasses.replace(toy_solution, arrays=arrays)
        rep = validate_solution(bad, tol=1e-3)
        assert rep.phi_deviation > 5e-3 and not rep.ok

    def test_refinement_shrinks_deviation(self, long_line_solutions):
        d24 = validate_solution(long_line_solutions[24]).max_deviation
        d48 = validate_solution(long_line_solutions[48]).max_deviation
        assert d48 < d24

    def test_refine_floor(self, toy_solution):
        with pytest.raises(ValueError):
            validate_solution(toy_solution, refine=2)

    def test_constraint_violations_detects_floor(self, line3):
        inc = build_incidence(line3)
        sigma = line3.slack_nodes[0].slack_density[:1]
        low = 0.5 * np.array([line3.node(i).density_min for i in inc.node_ids[inc.n_slack:]])
        tr = simulate(SimScenario(line3, np.full(inc.n_nonslack, sigma[0]), sigma, np.zeros(inc.n_nonslack),
                                  step=1.0, duration=1.0))
        tr = dataclasses.replace(tr, rho=np.repeat(low[:, None], tr.times.size, axis=1))
        assert constraint_violations(tr, line3)["density_min"] == pytest.approx(0.5)

    def test_csv_schema(self, toy_solution, tmp_path):
        tr = trajectory_from_solution(toy_solution)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, tr, toy_solution.problem.net)
        lines = path.read_text().splitlines()
        assert lines[0] == "time,rho:S,rho:J,inlet:P,outlet:P,linepack"
        assert len(lines) == 1 + toy_solution.n_report
