import numpy as np
import pytest
import scipy.optimize as so

from gasmarket import fixtures as F
from gasmarket.collocation import build_grid
from gasmarket.ipm import DenseProblem, SolverOptions, kkt_residuals, solve
from gasmarket.kkt import verify_kkt
from gasmarket.market import MarketData, TransferNode
from gasmarket.network import Network, Node, Pipe, Scaling
from gasmarket.transcription import NlpProblem, TranscriptionError, extract_ltv, optimize


def quad_eq(sign=1.0):
    return DenseProblem(2, lambda x: x @ x, lambda x: 2 * x,
                        cons=lambda x: [sign * (x[0] + x[1] - 2.0)], jac=lambda x: [[sign, sign]], m_eq=1,
                        x0=[0.3, -0.1], hess=lambda x, y, s: 2 * s * np.eye(2))


def hs071(hessian=True):
    def f(x):
        return x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]

    def g(x):
        return np.array([x[3] * (2 * x[0] + x[1] + x[2]), x[0] * x[3], x[0] * x[3] + 1,
                         x[0] * (x[0] + x[1] + x[2])])

    def c(x):
        return [x @ x - 40.0, np.prod(x) - 25.0]

    def j(x):
        p = np.prod(x)
        return [2 * x, p / x]

    def h(x, y, s):
        H = s * np.array([[2 * x[3], x[3], x[3], 2 * x[0] + x[1] + x[2]],
                          [x[3], 0, 0, x[0]], [x[3], 0, 0, x[0]],
                          [2 * x[0] + x[1] + x[2], x[0], x[0], 0]])
        H -= y[0] * 2 * np.eye(4)
        P = np.zeros((4, 4))
        for a in range(4):
            for b in range(4):
                if a != b:
                    P[a, b] = np.prod([x[k] for k in range(4) if k not in (a, b)])
        return H - y[1] * P

    return DenseProblem(4, f, g, cons=c, jac=j, m_eq=1, m_ineq=1, x_lower=np.ones(4), x_upper=np.full(4, 5.0),
                        x0=[1, 5, 5, 1], hess=h if hessian else None)


def test_bound_dual():
    p = DenseProblem(1, lambda x: x[0] ** 2, lambda x: 2 * x, x_lower=[1.0], x0=[3.0],
                     hess=lambda x, y, s: [[2 * s]])
    r = solve(p)
    assert r.status == "optimal"
    assert r.x[0] == pytest.approx(1.0, abs=1e-7)
    assert r.z_lower[0] == pytest.approx(2.0, abs=1e-6)


def test_equality_dual_sign():
    r = solve(quad_eq())
    np.testing.assert_allclose(r.x, [1.0, 1.0], atol=1e-8)
    # L = f - y c with c = x1 + x2 - 2 gives y = +2; writing c = 2 - x1 - x2 flips it
    assert r.y_eq[0] == pytest.approx(2.0, abs=1e-7)
    assert solve(quad_eq(-1.0)).y_eq[0] == pytest.approx(-2.0, abs=1e-7)


@pytest.mark.parametrize("mode", ["exact", "lbfgs"])
def test_hs071(mode):
    r = solve(hs071(mode == "exact"), SolverOptions(hessian=mode))
    assert r.status == "optimal"
    np.testing.assert_allclose(r.x, [1.0, 4.74299963, 3.82114998, 1.37940829], atol=1e-5)
    assert r.objective == pytest.approx(17.0140173, abs=1e-6)
    assert verify_kkt(r, hs071()).ok(1e-6)


def test_lp_duals():
    # min -x - y  s.t.  x + 2y <= 4, 3x + y <= 6: vertex (1.6, 1.2), row duals (0.4, 0.2)
    c = np.array([-1.0, -1.0])
    A = np.array([[1.0, 2.0], [3.0, 1.0]])
    b = np.array([4.0, 6.0])
    p = DenseProblem(2, lambda x: c @ x, lambda x: c, cons=lambda x: b - A @ x, jac=lambda x: -A, m_ineq=2,
                     x_lower=[0.0, 0.0], hess=lambda x, y, s: np.zeros((2, 2)))
    r = solve(p)
    assert r.status == "optimal"
    np.testing.assert_allclose(r.x, [1.6, 1.2], atol=1e-7)
    np.testing.assert_allclose(r.y_ineq, [0.4, 0.2], atol=1e-7)
    np.testing.assert_allclose(r.z_lower, 0.0, atol=1e-7)


def test_infeasible_detected():
    # x1 + x2 = 5 cannot be met inside the box [.., 1]^2
    p = DenseProblem(2, lambda x: x @ x, lambda x: 2 * x, cons=lambda x: [x[0] + x[1] - 5.0],
                     jac=lambda x: [[1.0, 1.0]], m_eq=1, x_upper=[1.0, 1.0], hess=lambda x, y, s: 2 * s * np.eye(2))
    assert solve(p).status == "infeasible"


def test_deterministic(toy_solution):
    r1 = solve(toy_solution.problem)
    r2 = solve(toy_solution.problem)
    assert np.array_equal(r1.x, r2.x) and np.array_equal(r1.y_eq, r2.y_eq)
    assert [h.get("mu") for h in r1.log] == [h.get("mu") for h in r2.log]


def test_verify_kkt_probes():
    p = quad_eq()
    r = solve(p)
    base = verify_kkt(r, p)
    assert base.ok(1e-7)
    moved = type(r)(**{**r.__dict__, "x": r.x + np.array([1e-2, 0.0])})
    rep = verify_kkt(moved, p)
    assert rep.stationarity == pytest.approx(2e-2, rel=1e-3)
    assert rep.feasibility == pytest.approx(1e-2, rel=1e-6)
    zeroed = type(r)(**{**r.__dict__, "y_eq": np.zeros(1)})
    assert verify_kkt(zeroed, p).stationarity == pytest.approx(np.abs(p.gradient(r.x)).max(), rel=1e-9)
    # matches the solver's own residual report on the same point
    own = kkt_residuals(p, r.x, r.y_eq, r.y_ineq, r.z_lower, r.z_upper)
    assert base.stationarity == pytest.approx(own["stationarity"], abs=1e-12)


def test_dense_oracle_on_toy_market():
    net = F.single_pipe()
    nlp = NlpProblem(net, F.toy_market(), build_grid(24.0, 6))
    r = solve(nlp)
    assert r.status == "optimal"
    me = nlp.m_eq
    cons = [dict(type="eq", fun=lambda x: nlp.constraints(x)[:me], jac=lambda x: nlp.jacobian(x).toarray()[:me])]
    if nlp.m_ineq:
        cons.append(dict(type="ineq", fun=lambda x: nlp.constraints(x)[me:],
                         jac=lambda x: nlp.jacobian(x).toarray()[me:]))
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b)
              for a, b in zip(nlp.x_lower, nlp.x_upper)]
    ref = so.minimize(nlp.objective, nlp.x0, jac=nlp.gradient, constraints=cons, bounds=bounds,
                      method="SLSQP", options=dict(ftol=1e-14, maxiter=1000))
    assert ref.success
    assert r.objective == pytest.approx(ref.fun, rel=1e-6)


class TestPrices:
    def test_marginal_seller_sets_price(self, toy_solution):
        assert toy_solution.status == "optimal"
        np.testing.assert_allclose(toy_solution.ltv, 3.0, atol=1e-4)
        np.testing.assert_allclose(toy_solution.schedule["buyer"], 0.2, atol=1e-6)

    def test_price_homogeneity(self, toy_solution):
        doubled = optimize(F.single_pipe(), F.toy_market(6.0, 10.0, 8.0), build_grid(24.0, 24))
        np.testing.assert_allclose(doubled.ltv, 2 * toy_solution.ltv, rtol=1e-8)

    def test_lossless_prices_uniform(self):
        nodes = (Node("S", slack=True, slack_density=np.array([1.0])), Node("A", density_min=0.1),
                 Node("B", density_min=0.1))
        pipes = (Pipe("P1", "S", "A", 1.0, 1.0, 1e-9, area=1.0), Pipe("P2", "A", "B", 1.0, 1.0, 1e-9, area=1.0))
        net = Network(nodes, pipes, scaling=Scaling.identity())
        mk = MarketData((TransferNode("sup", "S", "seller", 4.0, 0.0, np.inf),
                         TransferNode("b", "B", "buyer", 5.0, 0.0, 0.1),
                         TransferNode("s", "A", "seller", 6.0, 0.0, 0.1)), {}, hours=12, hour_seconds=1.0)
        sol = optimize(net, mk, build_grid(12.0, 12))
        assert sol.status == "optimal"
        np.testing.assert_allclose(sol.ltv, 4.0, atol=1e-5)

    def test_interior_buyer_earns_its_price(self):
        # the delivery pressure floor caps the flow below the bid, so the buyer clears in the interior
        net = Network((Node("S", slack=True, slack_density=np.array([1.0])), Node("J", density_min=0.9)),
                      (Pipe("P", "S", "J", 1.0, 1.0, 1.0, area=1.0),), scaling=Scaling.identity())
        mk = MarketData((TransferNode("sup", "S", "seller", 4.0, 0.0, np.inf),
                         TransferNode("b", "J", "buyer", 5.0, 0.0, 1.0)), {}, hours=24, hour_seconds=1.0)
        sol = optimize(net, mk, build_grid(24.0, 24))
        assert sol.status == "optimal"
        np.testing.assert_allclose(sol.schedule["b"], np.sqrt(0.19), atol=1e-5)
        np.testing.assert_allclose(sol.ltv, 5.0, atol=1e-4)

    def test_non_optimal_cannot_be_priced(self, toy_solution):
        r = solve(toy_solution.problem, SolverOptions(max_iterations=2))
        assert r.status == "max_iter"
        with pytest.raises(TranscriptionError):
            extract_ltv(r, toy_solution.problem)

    def test_objective_matches_surplus(self, toy_solution):
        nlp = toy_solution.problem
        sc = nlp.net.scaling
        assert nlp.data.tau == 0.0
        ref = -nlp.scale * toy_solution.surplus / (sc.mass_flow * sc.time)
        assert toy_solution.result.objective == pytest.approx(ref, rel=1e-10, abs=1e-12)

    def test_duals_nonnegative(self, toy_solution):
        r = toy_solution.result
        assert r.y_ineq.min(initial=0) >= 0 and r.z_lower.min() >= 0 and r.z_upper.min() >= 0
        assert verify_kkt(r, toy_solution.problem).ok(1e-6)
