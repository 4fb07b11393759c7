""" A small geometric-programming solver working in log variables.

Posynomials are stored as positive coefficients with a sparse exponent
matrix. In y = log(x) every constraint becomes log-sum-exp(b + E y) <= 0 and
the monomial objective becomes linear, which a barrier method with damped
Newton steps solves."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, sparse
from scipy.special import logsumexp

from .misc import GpInfeasibleError

logger = logging.getLogger(__name__)

OPTIMAL = "Optimal"
MAX_ITER = "MaxIter"
INFEASIBLE = "Infeasible"

NEWTON_TOL = 1e-10
LS_ALPHA = 0.25
LS_BETA = 0.5
BARRIER_GROWTH = 10.0


class Posynomial:
    """Sum of terms c_t prod_j x_j^E[t, j] with c_t > 0."""

    def __init__(self, coeffs, exponents):
        coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        exponents = sparse.csr_matrix(exponents, dtype=float)
        if exponents.shape[0] != coeffs.shape[0]:
            raise ValueError("One exponent row is needed per coefficient")
        if np.any(coeffs <= 0) or not np.all(np.isfinite(coeffs)):
            raise ValueError("Posynomial coefficients must be positive and finite")
        self.coeffs = coeffs
        self.exponents = exponents

    @classmethod
    def monomial(cls, n, coeff=1.0, powers=None):
        """coeff * prod_j x_j^powers[j], powers given as a {index: exponent} dict."""
        row = np.zeros((1, n))
        for j, a in (powers or {}).items():
            row[0, j] += a
        return cls([coeff], row)

    @classmethod
    def from_terms(cls, n, coeffs, rows, cols, values):
        """Build from COO exponent entries; duplicate terms are merged."""
        exps = sparse.csr_matrix(
            (values, (rows, cols)), shape=(len(coeffs), n), dtype=float
        )
        return cls(coeffs, exps).merged()

    @property
    def n(self):
        return self.exponents.shape[1]

    @property
    def n_terms(self):
        return self.coeffs.shape[0]

    @property
    def is_monomial(self):
        return self.n_terms == 1

    def log_terms(self, y):
        return np.log(self.coeffs) + self.exponents @ y

    def __call__(self, x):
        return float(np.exp(logsumexp(self.log_terms(np.log(x)))))

    def merged(self):
        """Combine terms with identical exponent vectors."""
        exps = self.exponents.tocsr()
        exps.sort_indices()
        index = {}
        coeffs = []
        keep = []
        for t in range(exps.shape[0]):
            lo, hi = exps.indptr[t], exps.indptr[t + 1]
            mask = exps.data[lo:hi] != 0
            key = (
                tuple(exps.indices[lo:hi][mask]),
                tuple(np.round(exps.data[lo:hi][mask], 12)),
            )
            if key in index:
                coeffs[index[key]] += self.coeffs[t]
            else:
                index[key] = len(coeffs)
                coeffs.append(self.coeffs[t])
                keep.append(t)
        return Posynomial(coeffs, exps[keep])

    def scale(self, c):
        return Posynomial(self.coeffs * c, self.exponents)

    def __add__(self, other):
        if not isinstance(other, Posynomial):
            return NotImplemented
        return Posynomial(
            np.concatenate([self.coeffs, other.coeffs]),
            sparse.vstack([self.exponents, other.exponents]),
        ).merged()

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        if not isinstance(other, Posynomial):
            return NotImplemented
        i = np.repeat(np.arange(self.n_terms), other.n_terms)
        j = np.tile(np.arange(other.n_terms), self.n_terms)
        exps = self.exponents[i] + other.exponents[j]
        return Posynomial(self.coeffs[i] * other.coeffs[j], exps).merged()

    __rmul__ = __mul__

    def __truediv__(self, other):
        """Division by a monomial."""
        if isinstance(other, (int, float)):
            return self.scale(1.0 / other)
        if not other.is_monomial:
            raise ValueError("Posynomials can only be divided by monomials")
        inverse = Posynomial(1.0 / other.coeffs, -other.exponents)
        return self * inverse

    def to_text(self, names=None):
        names = names or [f"x{j}" for j in range(self.n)]
        exps = self.exponents.tocsr()
        terms = []
        for t in range(self.n_terms):
            lo, hi = exps.indptr[t], exps.indptr[t + 1]
            factors = [
                f"{names[j]}^{a:g}"
                for j, a in zip(exps.indices[lo:hi], exps.data[lo:hi])
                if a != 0
            ]
            terms.append(" * ".join([f"{self.coeffs[t]:.6e}"] + factors))
        return " + ".join(terms)


class GpProblem:
    """maximize a monomial subject to posynomial <= 1 and monomial == 1."""

    def __init__(self, names, objective):
        if not objective.is_monomial:
            raise ValueError("The objective must be a monomial")
        self.names = list(names)
        self.objective = objective
        self.constraints = []
        self.constraint_names = []
        self.equalities = []
        # Optional strictly feasible point; phase one is skipped when it is set.
        self.start = None

    @property
    def n(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)

    def add_constraint(self, posy, name=None):
        if posy.n != self.n:
            raise ValueError("Constraint dimension does not match the variables")
        self.constraints.append(posy)
        self.constraint_names.append(name or f"c{len(self.constraints) - 1}")

    def add_equality(self, mono):
        if not mono.is_monomial:
            raise ValueError("Equality constraints must be monomials")
        self.equalities.append(mono)

    def add_upper_bound(self, j, value, name=None):
        self.add_constraint(
            Posynomial.monomial(self.n, 1.0 / value, {j: 1.0}),
            name or f"{self.names[j]}<=",
        )

    def constraint_values(self, x):
        return np.array([c(x) for c in self.constraints])

    def to_text(self):
        lines = [f"variables: {', '.join(self.names)}"]
        lines.append(f"maximize: {self.objective.to_text(self.names)}")
        for name, posy in zip(self.constraint_names, self.constraints):
            lines.append(f"{name}: {posy.to_text(self.names)} <= 1")
        for mono in self.equalities:
            lines.append(f"eq: {mono.to_text(self.names)} == 1")
        return "\n".join(lines)


@dataclass
class GpSolution:
    x: Optional[np.ndarray]
    objective: float
    status: str
    iterations: int
    kkt_residual: float
    duals: Optional[np.ndarray] = None
    history: list = field(default_factory=list)

    @property
    def optimal(self):
        return self.status == OPTIMAL


class _Barrier:
    """Log-barrier of log-sum-exp constraints over z, with y = y0 + N z."""

    def __init__(self, problem, extra_slack=False):
        self.m = len(problem.constraints)
        self.sizes = np.array([c.n_terms for c in problem.constraints])
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        self.groups = np.repeat(np.arange(self.m), self.sizes)
        self.n_terms = int(np.sum(self.sizes))
        E = sparse.vstack([c.exponents for c in problem.constraints]).tocsr()
        b = np.concatenate([np.log(c.coeffs) for c in problem.constraints])

        if problem.equalities:
            A = sparse.vstack([e.exponents for e in problem.equalities]).toarray()
            rhs = -np.concatenate([np.log(e.coeffs) for e in problem.equalities])
            self.y0 = linalg.lstsq(A, rhs)[0]
            if np.max(np.abs(A @ self.y0 - rhs)) > 1e-9:
                raise GpInfeasibleError("Inconsistent equality constraints")
            self.N = linalg.null_space(A)
            E = sparse.csr_matrix(E @ self.N)
        else:
            self.y0 = np.zeros(problem.n)
            self.N = None
        self.b = b + (
            sparse.vstack([c.exponents for c in problem.constraints]) @ self.y0
        )
        self.extra_slack = extra_slack
        if extra_slack:
            E = sparse.hstack(
                [E, sparse.csr_matrix(-np.ones((self.n_terms, 1)))]
            ).tocsr()
        self.E = E
        self.dim = E.shape[1]
        # Linear objective -a0 . y in the reduced variables.
        a0 = problem.objective.exponents.toarray()[0]
        self.c = -(a0 if self.N is None else self.N.T @ a0)

    def to_y(self, z):
        if self.extra_slack:
            z = z[:-1]
        return self.y0 + (z if self.N is None else self.N @ z)

    def from_y(self, y):
        d = y - self.y0
        return d if self.N is None else self.N.T @ d

    def constraint_logs(self, z):
        v = self.b + self.E @ z
        vmax = np.maximum.reduceat(v, self.starts)
        sums = np.add.reduceat(np.exp(v - vmax[self.groups]), self.starts)
        F = vmax + np.log(sums)
        w = np.exp(v - F[self.groups])
        return F, w

    def objective_vector(self, t):
        if self.extra_slack:
            g = np.zeros(self.dim)
            g[-1] = t
            return g
        return t * self.c

    def value(self, z, t):
        F, _ = self.constraint_logs(z)
        if np.any(F >= 0):
            return np.inf
        return float(self.objective_vector(t) @ z - np.sum(np.log(-F)))

    def derivatives(self, z, t):
        F, w = self.constraint_logs(z)
        d = -F
        P = sparse.csr_matrix(
            (w, (self.groups, np.arange(self.n_terms))), shape=(self.m, self.n_terms)
        )
        G = (P @ self.E).toarray()
        grad = self.objective_vector(t) + G.T @ (1.0 / d)
        weighted = self.E.multiply((w / d[self.groups])[:, None])
        hess = (self.E.T @ weighted).toarray()
        hess += G.T @ ((1.0 / d**2 - 1.0 / d)[:, None] * G)
        return grad, hess, F, G


def _newton_direction(grad, hess):
    try:
        return linalg.solve(hess, -grad, assume_a="sym")
    except (linalg.LinAlgError, ValueError):
        return linalg.lstsq(hess, -grad)[0]


def _center(barrier, z, t, budget, stop=None):
    """Damped Newton minimisation of the barrier function at parameter t."""
    steps = 0
    while steps < budget:
        grad, hess, _, _ = barrier.derivatives(z, t)
        dz = _newton_direction(grad, hess)
        decrement = float(-grad @ dz)
        if decrement / 2.0 <= NEWTON_TOL:
            break
        phi = barrier.value(z, t)
        s = 1.0
        while barrier.value(z + s * dz, t) > phi - LS_ALPHA * s * decrement:
            s *= LS_BETA
            if s < 1e-14:
                break
        z = z + s * dz
        steps += 1
        if stop is not None and stop(z):
            break
    return z, steps


def _phase_one(problem, y_start, tol, max_iter):
    """Find y with every constraint strictly below 1 by minimising a shared slack."""
    barrier = _Barrier(problem, extra_slack=True)
    z = np.append(barrier.from_y(y_start), 0.0)
    F, _ = barrier.constraint_logs(z)
    z[-1] = max(np.max(F), 0.0) + 1.0
    t = 1.0
    iterations = 0

    def feasible(zz):
        return zz[-1] < 0

    while iterations < max_iter:
        z, steps = _center(barrier, z, t, max_iter - iterations, feasible)
        iterations += steps
        if feasible(z):
            return barrier.to_y(z), iterations
        if barrier.m / t < tol:
            break
        t *= BARRIER_GROWTH
    logger.debug("Phase one stopped with slack %.3e", z[-1])
    return None, iterations


def solve_gp(problem, tol=1e-8, max_iter=500, x0=None):
    """Solve a GP with a primal log-barrier method.

    x0 is an optional positive starting point; phase one is run when it is
    missing or not strictly feasible."""
    barrier = _Barrier(problem)
    if x0 is None:
        x0 = problem.start
    y = barrier.y0.copy() if x0 is None else np.log(np.asarray(x0, dtype=float))
    iterations = 0
    z = barrier.from_y(y)
    F, _ = barrier.constraint_logs(z)
    if x0 is None or np.any(F >= 0) or not np.allclose(barrier.to_y(z), y):
        y, iterations = _phase_one(problem, y, tol, max_iter)
        if y is None:
            logger.warning("Geometric program is infeasible")
            return GpSolution(
                x=None,
                objective=float("nan"),
                status=INFEASIBLE,
                iterations=iterations,
                kkt_residual=float("inf"),
            )
        z = barrier.from_y(y)

    def objective_at(zz):
        return float(np.exp(problem.objective.log_terms(barrier.to_y(zz))[0]))

    t = 1.0
    history = []
    status = MAX_ITER
    while iterations < max_iter:
        z, steps = _center(barrier, z, t, max_iter - iterations)
        iterations += steps
        history.append(objective_at(z))
        if barrier.m / t < tol:
            status = OPTIMAL
            break
        t *= BARRIER_GROWTH

    grad, _, F, G = barrier.derivatives(z, t)
    duals = 1.0 / (t * -F)
    stationarity = np.linalg.norm(grad) / t / (1.0 + np.linalg.norm(barrier.c))
    kkt_residual = max(stationarity, barrier.m / t)
    if status != OPTIMAL:
        logger.warning(
            "Geometric program stopped with status %s after %d Newton steps",
            status,
            iterations,
        )
    return GpSolution(
        x=np.exp(barrier.to_y(z)),
        objective=objective_at(z),
        status=status,
        iterations=iterations,
        kkt_residual=kkt_residual,
        duals=duals,
        history=history,
    )
