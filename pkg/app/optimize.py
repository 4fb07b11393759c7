""" SINR-driven ADC bit and power allocation by geometric programming.

With the pilot covariances Psi_k held fixed, the closed-form MR SINR is a
monomial over a posynomial in x_m = eps_m^2 and the data energies p_k, so
the max-product and max-min programs are GPs. iterate_psi alternates GP
solves with rebuilding Psi_k from the new impairment levels."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .allocation import round_to_integer_bits
from .estimation import build_estimator
from .gp import INFEASIBLE, MAX_ITER, GpProblem, Posynomial, solve_gp
from .impairments import ImpairmentProfile, bits_from_eps
from .misc import AllocationError, GpInfeasibleError, freeze_array
from .power import energy_efficiency, total_tx_adc_power
from .se import se_from_sinr, sinr_mr_closed_form

logger = logging.getLogger(__name__)

OBJECTIVES = ("MaxProd", "MaxMin")
# Coefficients below this (relative to the largest) are rounding noise.
NEGATIVE_COEFF_TOL = 1e-12


@dataclass(frozen=True)
class SinrGpData:
    """Coefficients of the MR SINR denominators for fixed Psi_k.

    SINR_k = p_k w_k / f_k(x, p) with
    f_k = sum_i p_i (lin[k, i] . x + x' bil[k, i] x + const_p[k, i]) + const[k]."""

    w: np.ndarray  # (K,) tr(A_k)^2
    lin: np.ndarray  # (K, K, M)
    bil: np.ndarray  # (K, K, M, M)
    const_p: np.ndarray  # (K, K) tr(R_i A_k)
    const: np.ndarray  # (K,) sigma2 tr(A_k)

    @property
    def K(self):
        return self.w.shape[0]

    @property
    def M(self):
        return self.lin.shape[2]

    def denominator(self, k, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        per_ue = self.lin[k] @ x + np.einsum("m,imn,n->i", x, self.bil[k], x)
        return float(p @ (per_ue + self.const_p[k]) + self.const[k])

    def sinr(self, x, p):
        p = np.asarray(p, dtype=float)
        return np.array(
            [p[k] * self.w[k] / self.denominator(k, x, p) for k in range(self.K)]
        )


def _check_coefficients(values, label):
    values = np.asarray(values, dtype=float)
    scale = np.max(np.abs(values)) if values.size else 0.0
    if np.any(values < -NEGATIVE_COEFF_TOL * scale):
        raise AllocationError(f"Negative {label} coefficient in the SINR denominator")
    return np.maximum(values, 0.0)


def sinr_gp_data(state, corr):
    """Precompute the SINR coefficient tables from an estimator state."""
    K, M = corr.K, corr.M
    R = np.asarray(corr.R)
    abs_r2 = np.abs(R) ** 2
    q = state.pilot_energy
    w = np.empty(K)
    lin = np.empty((K, K, M))
    bil = np.empty((K, K, M, M))
    const_p = np.empty((K, K))
    const = np.empty(K)
    for k in range(K):
        A = state.A[k]
        B = state.filter[k]
        c = 1.0 / (state.tau_p * q[k])
        diag_a = np.real(np.diagonal(A))
        trace_a = np.sum(diag_a)
        if trace_a <= 0:
            raise AllocationError(f"UE {k} has a zero estimate gain, its SINR is degenerate")
        rb_diag = np.einsum("imn,nm->im", R, B)
        w[k] = trace_a**2
        lin[k] = c * q[:, None] * np.abs(rb_diag) ** 2 + corr.diag_r * diag_a[None, :]
        lin[k, k] += diag_a**2
        bil[k] = c * q[:, None, None] * (np.abs(B) ** 2)[None] * abs_r2
        const_p[k] = np.real(np.einsum("imn,nm->i", R, A))
        const[k] = state.sigma2 * trace_a
    return SinrGpData(
        w=freeze_array(w),
        lin=freeze_array(_check_coefficients(lin, "linear")),
        bil=freeze_array(_check_coefficients(bil, "bilinear")),
        const_p=freeze_array(_check_coefficients(const_p, "interference")),
        const=freeze_array(const),
    )


@dataclass(frozen=True)
class GpLayout:
    """Variable order: x_0..x_M-1, p_0..p_K-1, then u_0..u_K-1 and/or t."""

    M: int
    K: int
    aux_u: bool = False
    aux_t: bool = False

    def x(self, m):
        return m

    def p(self, k):
        return self.M + k

    def u(self, k):
        return self.M + self.K + k

    @property
    def t(self):
        return self.M + self.K + (self.K if self.aux_u else 0)

    @property
    def n(self):
        return self.M + self.K + (self.K if self.aux_u else 0) + int(self.aux_t)

    @property
    def names(self):
        names = [f"x{m}" for m in range(self.M)] + [f"p{k}" for k in range(self.K)]
        if self.aux_u:
            names += [f"u{k}" for k in range(self.K)]
        if self.aux_t:
            names.append("t")
        return names


def denominator_posynomial(data, k, layout, rho_max, extra=None):
    """f_k / (rho_max w_k) over the normalised energies p / rho_max.

    extra is a {variable index: exponent} monomial multiplied into every term."""
    M, K = data.M, data.K
    w = data.w[k]
    coeffs = []
    rows = []
    cols = []
    n_terms = 0

    def add(coef, var_lists):
        nonlocal n_terms
        coef = np.asarray(coef, dtype=float).ravel()
        keep = np.flatnonzero(coef > 0)
        idx = n_terms + np.arange(keep.size)
        for var in var_lists:
            var = np.asarray(var).ravel()[keep]
            rows.append(idx)
            cols.append(var)
        coeffs.append(coef[keep])
        n_terms += keep.size
        return idx

    p_grid, m_grid = np.meshgrid(np.arange(K), np.arange(M), indexing="ij")
    add(data.lin[k] / w, [m_grid, M + p_grid])

    # x' B x with B_mn + B_nm merged above the diagonal; the diagonal gives x_m^2.
    iu, ju = np.triu_indices(M)
    for i in range(K):
        sym = data.bil[k, i] + data.bil[k, i].T
        sym[np.diag_indices(M)] *= 0.5
        add(sym[iu, ju] / w, [iu, ju, np.full(iu.shape, M + i)])

    add(data.const_p[k] / w, [M + np.arange(K)])
    const_idx = add([data.const[k] / (rho_max * w)], [])

    all_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
    all_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
    values = np.ones(all_rows.shape[0])
    if const_idx.size == 0:
        raise AllocationError(f"UE {k} has no noise term in its SINR denominator")
    for j, a in (extra or {}).items():
        all_rows = np.concatenate([all_rows, np.arange(n_terms)])
        all_cols = np.concatenate([all_cols, np.full(n_terms, j)])
        values = np.concatenate([values, np.full(n_terms, float(a))])
    # Duplicate (row, col) entries are summed, so x_m * x_m becomes x_m^2.
    exps = sparse.csr_matrix(
        (values, (all_rows, all_cols)), shape=(n_terms, layout.n), dtype=float
    )
    return Posynomial(np.concatenate(coeffs), exps)


def _budget_monomial(n, zeta, b_tot):
    """prod_m zeta_m^2 x_m^-1 <= 2^(2 b_tot), raised to the power 1/M."""
    M = zeta.shape[0]
    log2_coeff = 2.0 * (np.sum(np.log2(zeta)) - b_tot) / M
    return Posynomial.monomial(
        n, float(np.exp2(log2_coeff)), {m: -1.0 / M for m in range(M)}
    )


def _add_bounds(problem, layout, zeta, x_bounds=True):
    for m in range(layout.M if x_bounds else 0):
        problem.add_upper_bound(layout.x(m), (zeta[m] / 2.0) ** 2, f"b{m}>=1")
    for k in range(layout.K):
        problem.add_upper_bound(layout.p(k), 1.0, f"p{k}<=rho_max")


def _sinr_constraints(problem, data, layout, rho_max, objective_kind):
    for k in range(data.K):
        if objective_kind == "MaxProd":
            extra = {layout.u(k): -1.0}
        else:
            extra = {layout.t: 1.0, layout.p(k): -1.0}
        problem.add_constraint(
            denominator_posynomial(data, k, layout, rho_max, extra), f"sinr{k}"
        )


def _objective(layout, objective_kind):
    if objective_kind == "MaxProd":
        powers = {layout.p(k): 1.0 for k in range(layout.K)}
        powers.update({layout.u(k): -1.0 for k in range(layout.K)})
        return Posynomial.monomial(layout.n, 1.0, powers)
    return Posynomial.monomial(layout.n, 1.0, {layout.t: 1.0})


def _start_point(data, layout, rho_max, x, p_norm, objective_kind):
    """Strictly feasible point given strictly feasible x and normalised p."""
    start = np.empty(layout.n)
    start[: layout.M] = x
    start[layout.M : layout.M + layout.K] = p_norm
    f_norm = np.array(
        [
            data.denominator(k, x, rho_max * p_norm) / (rho_max * data.w[k])
            for k in range(data.K)
        ]
    )
    if objective_kind == "MaxProd":
        start[layout.M + layout.K : layout.M + 2 * layout.K] = 2.0 * f_norm
    else:
        start[layout.t] = 0.5 * np.min(p_norm / f_norm)
    return start


def _check_zeta(zeta, M):
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (M,))
    if np.any(zeta <= 0):
        raise ValueError("zeta must be positive")
    return zeta


def build_sinr_gp(data, zeta, b_tot, objective_kind, rho_max):
    """GP of the max-product (MaxProd) or max-min (MaxMin) SINR allocation
    under the total bit budget, for fixed Psi_k.

    Variables are x_m = eps_m^2 and p_k / rho_max."""
    if objective_kind not in OBJECTIVES:
        raise ValueError(f"Unknown objective {objective_kind}")
    M, K = data.M, data.K
    zeta = _check_zeta(zeta, M)
    if b_tot < M:
        raise AllocationError(f"A budget of {b_tot} bits cannot give {M} antennas 1 bit each")
    layout = GpLayout(
        M, K, aux_u=objective_kind == "MaxProd", aux_t=objective_kind == "MaxMin"
    )
    problem = GpProblem(layout.names, _objective(layout, objective_kind))
    _sinr_constraints(problem, data, layout, rho_max, objective_kind)
    _add_bounds(problem, layout, zeta, x_bounds=b_tot > M)
    if b_tot > M:
        problem.add_constraint(_budget_monomial(layout.n, zeta, b_tot), "budget")
        # Half-way between one bit and the budget on every antenna.
        start_bits = 0.5 * (1.0 + b_tot / M)
    else:
        # One bit everywhere is the only allocation.
        for m in range(M):
            problem.add_equality(
                Posynomial.monomial(layout.n, (2.0 / zeta[m]) ** 2, {m: 1.0})
            )
        start_bits = 1.0
    x0 = (zeta * np.exp2(-start_bits)) ** 2
    problem.start = _start_point(
        data, layout, rho_max, x0, np.full(K, 0.5), objective_kind
    )
    return problem


@dataclass(frozen=True)
class PowerConstraintSpec:
    gamma_pc: float  # W
    D1: float  # W per conversion step
    eta: float
    bandwidth_hz: float
    tau_p: int
    tau_c: int

    def __post_init__(self):
        for name in ("gamma_pc", "D1", "eta", "bandwidth_hz"):
            value = getattr(self, name)
            if not (value > 0 and np.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite")
        if not 0 < self.tau_p <= self.tau_c:
            raise ValueError("Need 0 < tau_p <= tau_c")

    @classmethod
    def from_model(cls, model, gamma_pc):
        return cls(
            gamma_pc=float(gamma_pc),
            D1=model.D1,
            eta=model.eta,
            bandwidth_hz=model.bandwidth_hz,
            tau_p=model.tau_p,
            tau_c=model.tau_c,
        )

    @property
    def data_power_per_energy(self):
        """W per J/symbol of summed data energy."""
        return (1.0 - self.tau_p / self.tau_c) * self.bandwidth_hz / self.eta

    def floor_power(self, M):
        """ADC power with every antenna at one bit."""
        return 4.0 * self.D1 * M


def build_power_constrained_gp(data, zeta, spec, rho_max, mixed=True):
    """Max-product SINR GP where the bit budget is replaced by
    P_txd-adc(eps, p) <= gamma_pc.

    With mixed=False every antenna gets the same resolution."""
    M, K = data.M, data.K
    zeta = _check_zeta(zeta, M)
    floor = spec.floor_power(M)
    if spec.gamma_pc <= floor:
        raise GpInfeasibleError(
            f"gamma_pc = {spec.gamma_pc:.4g} W is not above the one-bit ADC power {floor:.4g} W"
        )
    layout = GpLayout(M, K, aux_u=True)
    problem = GpProblem(layout.names, _objective(layout, "MaxProd"))
    _sinr_constraints(problem, data, layout, rho_max, "MaxProd")
    _add_bounds(problem, layout, zeta)

    gamma = spec.gamma_pc
    p_coeff = spec.data_power_per_energy * rho_max / gamma
    coeffs = list(2.0 * spec.D1 * zeta / gamma)
    rows = list(range(M))
    cols = list(range(M))
    values = [-0.5] * M
    if p_coeff > 0:
        coeffs += [p_coeff] * K
        rows += list(range(M, M + K))
        cols += [layout.p(k) for k in range(K)]
        values += [1.0] * K
    exps = sparse.csr_matrix(
        (values, (rows, cols)), shape=(len(coeffs), layout.n), dtype=float
    )
    problem.add_constraint(Posynomial(coeffs, exps), "power")
    if not mixed:
        for m in range(1, M):
            problem.add_equality(
                Posynomial.monomial(
                    layout.n, (zeta[0] / zeta[m]) ** 2, {m: 1.0, 0: -1.0}
                )
            )

    # Start with a quarter of the headroom above the floor on each power term.
    headroom = gamma - floor
    scale = floor / (floor + 0.25 * headroom)
    x0 = (zeta / 2.0 * scale) ** 2
    if p_coeff > 0:
        p0 = min(0.5, 0.25 * headroom / (K * spec.data_power_per_energy * rho_max))
    else:
        p0 = 0.5
    problem.start = _start_point(data, layout, rho_max, x0, np.full(K, p0), "MaxProd")
    return problem


def split_solution(x, M, K, rho_max):
    """Impairment levels eps and data energies p from a GP solution vector."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(x[:M]), rho_max * x[M : M + K]


@dataclass
class PsiIterationResult:
    eps: np.ndarray
    p: np.ndarray
    profile: ImpairmentProfile
    objective_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    status: Optional[str] = None

    @property
    def objective(self):
        return self.objective_history[-1] if self.objective_history else float("nan")


def iterate_psi(
    network,
    zeta,
    b_tot,
    objective_kind="MaxProd",
    power_spec=None,
    mixed=True,
    max_outer=10,
    rel_tol=1e-6,
    tol=1e-8,
    max_iter=500,
):
    """Alternate GP solves at fixed Psi_k with rebuilding Psi_k from the result.

    Starts from equal resolutions b_tot / M. With a power_spec the power
    constrained program replaces the bit budget; b_tot then only sets the
    starting point."""
    cfg = network.config
    corr = network.correlation
    q = network.pilot_energy
    M = corr.M
    zeta = _check_zeta(zeta, M)
    eps = zeta * np.exp2(-b_tot / M)
    p = np.full(corr.K, cfg.rho_max)
    history = []
    status = None
    converged = False
    outer = 0
    for outer in range(1, max_outer + 1):
        profile = ImpairmentProfile.from_eps(eps, zeta)
        state = build_estimator(corr, profile, q, cfg.sigma2, cfg.tau_p)
        data = sinr_gp_data(state, corr)
        if power_spec is None:
            problem = build_sinr_gp(data, zeta, b_tot, objective_kind, cfg.rho_max)
        else:
            problem = build_power_constrained_gp(
                data, zeta, power_spec, cfg.rho_max, mixed
            )
        logger.debug(
            "Outer iteration %d: GP with %d variables, %d constraints",
            outer,
            problem.n,
            len(problem.constraints),
        )
        solution = solve_gp(problem, tol=tol, max_iter=max_iter)
        status = solution.status
        if status == INFEASIBLE:
            raise GpInfeasibleError(f"Allocation GP infeasible at outer iteration {outer}")
        if status == MAX_ITER:
            logger.warning("Outer iteration %d used the best iterate found", outer)
        eps, p = split_solution(solution.x, M, corr.K, cfg.rho_max)
        history.append(solution.objective)
        logger.debug("Outer iteration %d: objective %.10e", outer, solution.objective)
        if len(history) > 1:
            previous, current = history[-2], history[-1]
            if current < previous * (1.0 - 1e-9):
                logger.warning(
                    "Objective decreased from %.6e to %.6e at outer iteration %d",
                    previous,
                    current,
                    outer,
                )
            if abs(current - previous) <= rel_tol * abs(previous):
                converged = True
                break
    profile = ImpairmentProfile(
        freeze_array(eps), freeze_array(zeta), freeze_array(bits_from_eps(zeta, eps))
    )
    return PsiIterationResult(
        eps=freeze_array(eps),
        p=freeze_array(p),
        profile=profile,
        objective_history=history,
        iterations=outer,
        converged=converged,
        status=status,
    )


def integer_bits_from_eps(zeta, eps):
    """Integer resolutions for a continuous allocation, spending round(sum b_m) bits."""
    b_op = bits_from_eps(zeta, eps)
    b_tot = max(b_op.shape[0], int(np.floor(np.sum(b_op) + 0.5)))
    return round_to_integer_bits(b_op, b_tot)


def mr_closed_form_se(network, profile, p):
    """Closed-form MR SE of an allocation."""
    cfg = network.config
    state = build_estimator(
        network.correlation, profile, network.pilot_energy, cfg.sigma2, cfg.tau_p
    )
    return sinr_mr_closed_form(network.correlation, state, profile, p, cfg.tau_c)


def gamma_sweep(network, model, gammas, b_tot, mixed=True, evaluate_se=None, **kwargs):
    """Energy efficiency of the power-constrained allocation over a grid of
    power limits gamma_pc.

    evaluate_se(network, profile, p) returns a SinrReport; closed-form MR by
    default. One row per gamma_pc; infeasible limits give NaN metrics."""
    evaluate_se = evaluate_se or mr_closed_form_se
    cfg = network.config
    rows = []
    for gamma in gammas:
        spec = PowerConstraintSpec.from_model(model, gamma)
        row = {"gamma_pc": float(gamma), "mixed": bool(mixed)}
        try:
            result = iterate_psi(
                network,
                model.zeta,
                b_tot,
                "MaxProd",
                power_spec=spec,
                mixed=mixed,
                **kwargs,
            )
        except GpInfeasibleError as err:
            logger.info("gamma_pc = %.4g W: %s", gamma, err)
            row.update(ee=float("nan"), sum_se=float("nan"), p_txd_adc=float("nan"))
            row["status"] = INFEASIBLE
            rows.append(row)
            continue
        report = evaluate_se(network, result.profile, result.p)
        se = report.se
        if se is None:
            se = se_from_sinr(report.sinr, cfg.tau_p, cfg.tau_c)
        se_sum = float(np.sum(se))
        row.update(
            ee=energy_efficiency(
                se_sum,
                result.p,
                network.pilot_energy,
                result.eps,
                model,
                cfg.M,
                cfg.K,
            ),
            sum_se=se_sum,
            p_txd_adc=total_tx_adc_power(result.p, result.eps, model),
            status=result.status,
        )
        rows.append(row)
    return rows
