import logging
import numpy as np
import pytest
from scipy import optimize, special

from app.gp import INFEASIBLE, MAX_ITER, OPTIMAL, GpProblem, Posynomial, solve_gp
from app.misc import GpInfeasibleError


def xy_problem():
    """maximize x y subject to x + y <= 1."""
    problem = GpProblem(["x", "y"], Posynomial.monomial(2, 1.0, {0: 1.0, 1: 1.0}))
    problem.add_constraint(Posynomial([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]]), "x+y")
    return problem


def test_posynomial_algebra():
    p = Posynomial([1.0, 2.0], [[1.0, 0.0], [0.0, 1.0]])
    m = Posynomial.monomial(2, 3.0, {0: 1.0, 1: -1.0})
    x = np.array([0.5, 4.0])
    assert p(x) == pytest.approx(8.5)
    assert m(x) == pytest.approx(0.375)
    assert (p * m)(x) == pytest.approx(8.5 * 0.375)
    assert (p / m)(x) == pytest.approx(8.5 / 0.375)
    assert (2 * p)(x) == pytest.approx(17.0)
    doubled = p + p
    assert doubled.n_terms == 2
    assert np.allclose(doubled.coeffs, [2.0, 4.0])
    assert m.is_monomial and not p.is_monomial
    assert m.to_text() == "3.000000e+00 * x0^1 * x1^-1"


def test_from_terms_merges_duplicates():
    # x0 * x0 given as two COO entries of one term, plus the same term twice.
    posy = Posynomial.from_terms(2, [1.0, 1.5], [0, 0, 1], [0, 0, 0], [1.0, 1.0, 2.0])
    assert posy.n_terms == 1
    assert posy([3.0, 1.0]) == pytest.approx(2.5 * 9.0)


def test_posynomial_validation():
    with pytest.raises(ValueError):
        Posynomial([1.0, -1.0], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        Posynomial([1.0], [[1.0], [2.0]])
    p = Posynomial([1.0, 2.0], [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        p / p


def test_problem_validation():
    with pytest.raises(ValueError):
        GpProblem(["x", "y"], Posynomial([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]]))
    problem = xy_problem()
    with pytest.raises(ValueError):
        problem.add_constraint(Posynomial.monomial(3))
    with pytest.raises(ValueError):
        problem.add_equality(Posynomial([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]]))
    problem.add_upper_bound(0, 0.8)
    assert problem.constraint_names == ["x+y", "x<="]
    text = problem.to_text()
    assert "maximize: 1.000000e+00 * x^1 * y^1" in text
    assert "x<=: 1.250000e+00 * x^1 <= 1" in text


def test_maximize_product():
    solution = solve_gp(xy_problem())
    assert solution.status == OPTIMAL
    assert solution.optimal
    assert solution.objective == pytest.approx(0.25, rel=1e-6)
    assert np.allclose(solution.x, [0.5, 0.5], atol=1e-5)
    assert solution.kkt_residual < 1e-6
    assert solution.history[-1] == pytest.approx(solution.objective)


def test_start_point_skips_phase_one():
    problem = xy_problem()
    problem.start = np.array([0.25, 0.25])
    solution = solve_gp(problem)
    assert solution.objective == pytest.approx(0.25, rel=1e-6)


def test_equality_constraint():
    problem = xy_problem()
    problem.add_equality(Posynomial.monomial(2, 0.5, {0: 1.0, 1: -1.0}))
    solution = solve_gp(problem)
    assert solution.optimal
    assert np.allclose(solution.x, [2 / 3, 1 / 3], atol=1e-6)
    assert solution.objective == pytest.approx(2 / 9, rel=1e-6)


def test_inconsistent_equalities():
    problem = GpProblem(["x"], Posynomial.monomial(1, 1.0, {0: 1.0}))
    problem.add_constraint(Posynomial.monomial(1, 1.0, {0: 1.0}))
    problem.add_equality(Posynomial.monomial(1, 1.0, {0: 1.0}))
    problem.add_equality(Posynomial.monomial(1, 0.5, {0: 1.0}))
    with pytest.raises(GpInfeasibleError):
        solve_gp(problem)


def test_infeasible(caplog):
    problem = GpProblem(["x"], Posynomial.monomial(1, 1.0, {0: 1.0}))
    problem.add_upper_bound(0, 1.0)
    problem.add_constraint(Posynomial.monomial(1, 2.0, {0: -1.0}))
    with caplog.at_level(logging.WARNING, logger="app.gp"):
        solution = solve_gp(problem)
    assert solution.status == INFEASIBLE
    assert solution.x is None
    assert "infeasible" in caplog.text


def test_matches_scalar_oracle():
    # maximize x y subject to x^2 + y + 0.5 x y <= 1
    problem = GpProblem(["x", "y"], Posynomial.monomial(2, 1.0, {0: 1.0, 1: 1.0}))
    problem.add_constraint(
        Posynomial([1.0, 1.0, 0.5], [[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    )
    solution = solve_gp(problem)

    def negative(x):
        return -x * (1 - x**2) / (1 + 0.5 * x)

    best = optimize.minimize_scalar(
        negative, bounds=(1e-9, 1 - 1e-9), method="bounded", options={"xatol": 1e-12}
    )
    assert solution.objective == pytest.approx(-best.fun, rel=1e-6)
    assert solution.x[0] == pytest.approx(best.x, rel=1e-4)


def test_iteration_limit(caplog):
    with caplog.at_level(logging.WARNING, logger="app.gp"):
        solution = solve_gp(xy_problem(), max_iter=3, x0=[0.25, 0.25])
    assert solution.status == MAX_ITER
    assert not solution.optimal
    assert solution.x is not None
    assert np.sum(solution.x) < 1.0
    assert "stopped with status MaxIter" in caplog.text


def random_gp(rng, n):
    """Bounded GP: every constraint carries a linear term in each variable."""
    powers = dict(enumerate(rng.uniform(0.5, 2.0, n)))
    names = [f"x{j}" for j in range(n)]
    problem = GpProblem(names, Posynomial.monomial(n, 1.0, powers))
    for _ in range(2):
        n_extra = int(rng.integers(1, 4))
        linear = rng.uniform(0.2, 2.0, n)
        coeffs = np.concatenate([linear, rng.uniform(0.1, 1.0, n_extra)])
        exponents = np.vstack([np.eye(n), rng.uniform(0.5, 1.5, (n_extra, n))])
        problem.add_constraint(Posynomial(coeffs, exponents))
    return problem


def log_space_oracle(problem, rng, n_starts=8):
    """Best objective SLSQP finds in y = ln x from several random starts."""
    a = problem.objective.exponents.toarray()[0]
    constraints = [
        {
            "type": "ineq",
            "fun": lambda y, posy=posy: -special.logsumexp(
                np.log(posy.coeffs) + posy.exponents @ y
            ),
        }
        for posy in problem.constraints
    ]
    best = -np.inf
    for _ in range(n_starts):
        res = optimize.minimize(
            lambda y: -a @ y,
            rng.uniform(-8.0, -3.0, problem.n),
            jac=lambda y: -a,
            method="SLSQP",
            constraints=constraints,
            options={"ftol": 1e-12, "maxiter": 1000},
        )
        feasible = all(c["fun"](res.x) >= -1e-9 for c in constraints)
        if res.success and feasible:
            best = max(best, float(a @ res.x))
    return problem.objective.coeffs[0] * np.exp(best)


@pytest.mark.parametrize("seed", range(10))
def test_matches_multistart_oracle(seed):
    rng = np.random.default_rng(seed)
    problem = random_gp(rng, int(rng.integers(2, 7)))
    solution = solve_gp(problem)
    assert solution.optimal
    assert np.all(problem.constraint_values(solution.x) <= 1 + 1e-9)
    assert solution.objective == pytest.approx(log_space_oracle(problem, rng), rel=1e-6)
