""" Seeded Monte-Carlo campaigns over channel cases, allocation methods,
combiners and quantization models, written out as CSV tables. """
import csv
import functools
import itertools
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np
import yaml
from slugify import slugify

from .allocation import (
    allocate_min_pilot_distortion,
    equal_allocation,
    pilot_power_profile,
    round_to_integer_bits,
)
from .config import ALLOCATION_METHODS
from .estimation import build_estimator
from .misc import CampaignError, MixAdcError, log_context, spawn_seeds
from .network import NetworkConfig, drop_network
from .optimize import gamma_sweep, integer_bits_from_eps, iterate_psi
from .power import PowerModel
from .quantizer import se_exact_quantization
from .se import sinr_mr_closed_form, sinr_uatf_monte_carlo

logger = logging.getLogger(__name__)

SCENARIO_AXES = ("case", "method", "combiner", "quantization")

SE_COLUMNS = ("drop", "ue", "se", "sinr", "std_err", "flags")
BITS_COLUMNS = ("drop", "antenna", "bits", "integer_bits", "eps")
EE_COLUMNS = ("drop", "gamma_pc", "mixed", "ee", "sum_se", "p_txd_adc", "status")
CDF_COLUMNS = ("value", "cdf")

SCHEMA = """\
Every scenario writes its files under the campaign output directory, named
after the scenario slug (case-method-combiner-quantization).

<slug>-se.csv        one row per (drop, UE)
  drop       drop index, 0-based
  ue         UE index, 0-based
  se         spectral efficiency [bit/s/Hz]
  sinr       effective SINR (linear)
  std_err    Monte-Carlo standard error of the SINR, empty for closed forms
  flags      ';'-separated warnings about the estimate

<slug>-bits.csv      one row per (drop, antenna)
  drop, antenna
  bits          real-valued ADC resolution log2(zeta / eps)
  integer_bits  resolution after rounding to the integer budget
  eps           impairment level

<slug>-ee.csv        power-constrained scenarios only, one row per (drop, gamma_pc, mixed)
  gamma_pc   limit on data transmit plus ADC power [W]
  mixed      True for per-antenna resolutions, False for equal ADCs
  ee         energy efficiency [bit/J]
  sum_se     sum spectral efficiency [bit/s/Hz]
  p_txd_adc  data transmit plus ADC power of the allocation [W]
  status     solver status

<slug>-se-cdf.csv, <slug>-bits-cdf.csv, <slug>-ee-cdf.csv
  value, cdf   empirical CDF points, F(x_(i)) = i / n

manifest.yaml        configuration hash, master seed, package versions and
                     per-scenario drop and failure counts
"""


@dataclass(frozen=True)
class Scenario:
    case: str
    method: str
    combiner: str
    quantization: str

    @property
    def name(self):
        return f"{self.case} {self.method} {self.combiner} {self.quantization}"

    @property
    def slug(self):
        return slugify(self.name)

    @property
    def power_constrained(self):
        return self.method == "PowerConstrainedMaxProd"


@dataclass(frozen=True)
class CampaignConfig:
    network: NetworkConfig
    scenarios: tuple
    b_tot: int
    zeta: float = 1.6
    n_drops: int = 200
    n_trials_per_drop: int = 2000
    n_trials_exact: int = 10000
    master_seed: int = 1
    output: str = "results"
    workers: int = 1
    max_failure_fraction: float = 0.05
    gamma_pc: tuple = ()
    power: PowerModel = field(default_factory=PowerModel)
    gp_tol: float = 1e-8
    gp_max_iter: int = 500
    max_outer: int = 10
    rel_tol: float = 1e-6
    name: str = "campaign"
    config_hash: str = ""

    def __post_init__(self):
        for scenario in self.scenarios:
            if scenario.method not in ALLOCATION_METHODS:
                raise ValueError(f"Unknown allocation method {scenario.method}")
        if self.n_drops < 1:
            raise ValueError("A campaign needs at least one drop")

    @classmethod
    def from_config(
        cls, config, output=None, master_seed=None, workers=None, scenario_filter=None
    ):
        camp = config.campaign
        network = NetworkConfig.from_config(config)
        scenarios = expand_scenarios(camp.scenarios.as_dict(), scenario_filter)
        return cls(
            network=network,
            scenarios=tuple(scenarios),
            b_tot=int(config.hardware.b_tot),
            zeta=float(config.hardware.zeta),
            n_drops=int(camp.n_drops),
            n_trials_per_drop=int(camp.n_trials_per_drop),
            n_trials_exact=int(camp.n_trials_exact),
            master_seed=int(camp.master_seed if master_seed is None else master_seed),
            output=output or camp.output,
            workers=int(workers or camp.workers),
            max_failure_fraction=float(camp.max_failure_fraction),
            gamma_pc=tuple(float(g) for g in config.power.gamma_pc),
            power=PowerModel.from_config(config, tau_p=network.tau_p),
            gp_tol=float(config.gp.tol),
            gp_max_iter=int(config.gp.max_iter),
            max_outer=int(config.optimize.max_outer),
            rel_tol=float(config.optimize.rel_tol),
            name=camp.name,
            config_hash=config.config_hash(),
        )

    @property
    def optimizer_options(self):
        return dict(
            max_outer=self.max_outer,
            rel_tol=self.rel_tol,
            tol=self.gp_tol,
            max_iter=self.gp_max_iter,
        )


def expand_scenarios(axes, scenario_filter=None):
    """Cartesian product of the scenario axes, optionally restricted to
    scenarios whose name or slug is listed in scenario_filter."""
    values = []
    for axis in SCENARIO_AXES:
        axis_values = axes[axis]
        if not isinstance(axis_values, (list, tuple)):
            axis_values = [axis_values]
        values.append(axis_values)
    scenarios = [Scenario(*combo) for combo in itertools.product(*values)]
    if scenario_filter:
        wanted = {slugify(s) for s in scenario_filter}
        scenarios = [s for s in scenarios if s.slug in wanted]
        if not scenarios:
            raise CampaignError(
                f"No scenario matches {', '.join(scenario_filter)}"
            )
    return scenarios


@dataclass(frozen=True)
class CdfTable:
    samples: np.ndarray  # sorted
    scenario: str = ""
    metric: str = ""
    units: str = ""

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def values(self):
        return np.unique(self.samples)

    @property
    def cdf(self):
        """F at every distinct value, counting ties once at their last position."""
        idx = np.searchsorted(self.samples, self.values, side="right")
        return idx / self.n

    def points(self):
        return list(zip(self.values.tolist(), self.cdf.tolist()))

    def merge(self, other):
        return aggregate_cdf(
            np.concatenate([self.samples, other.samples]),
            self.scenario,
            self.metric,
            self.units,
        )


def aggregate_cdf(samples, scenario="", metric="", units=""):
    """Empirical CDF of the samples, F(x_(i)) = i / n."""
    samples = np.sort(np.asarray(samples, dtype=float).ravel())
    if samples.size == 0:
        raise ValueError("Cannot build a CDF from no samples")
    finite = np.isfinite(samples)
    if not np.all(finite):
        logger.warning(
            "%s %s: %d of %d samples are not finite and are left out of the CDF",
            scenario or "CDF",
            metric or "values",
            samples.size - int(np.sum(finite)),
            samples.size,
        )
    samples = samples[finite]
    if samples.size == 0:
        raise ValueError("Cannot build a CDF from non-finite samples only")
    return CdfTable(samples=samples, scenario=scenario, metric=metric, units=units)


@dataclass
class DropResult:
    drop: int
    seed: str
    se_rows: list = field(default_factory=list)
    bits_rows: list = field(default_factory=list)
    ee_rows: list = field(default_factory=list)
    error: str = ""


def child_seed(seed_seq, j):
    """The j-th child of seed_seq, without touching its spawn counter."""
    return np.random.SeedSequence(
        entropy=seed_seq.entropy, spawn_key=tuple(seed_seq.spawn_key) + (j,)
    )


def evaluate_se(campaign, scenario, network, profile, p, seed, bits=None):
    """SINR report of an allocation under the scenario's combiner and quantization."""
    cfg = network.config
    corr = network.correlation
    q = network.pilot_energy
    if scenario.quantization == "exact":
        if bits is None:
            bits = integer_bits_from_eps(profile.zeta, profile.eps)
        return se_exact_quantization(
            network, bits, scenario.combiner, campaign.n_trials_exact, seed, p=p
        )
    if scenario.combiner == "MR":
        state = build_estimator(corr, profile, q, cfg.sigma2, cfg.tau_p)
        return sinr_mr_closed_form(corr, state, profile, p, cfg.tau_c)
    return sinr_uatf_monte_carlo(
        scenario.combiner,
        corr,
        profile,
        p,
        q,
        cfg.sigma2,
        cfg.tau_p,
        campaign.n_trials_per_drop,
        seed,
        tau_c=cfg.tau_c,
    )


def allocate(campaign, scenario, network):
    """Impairment profile and data energies of a budgeted allocation method."""
    M = network.config.M
    q = network.pilot_energy
    if scenario.method == "Equal":
        return equal_allocation(M, campaign.b_tot, campaign.zeta), q
    if scenario.method == "MinPilotDist":
        p_u = pilot_power_profile(q, network.correlation)
        return allocate_min_pilot_distortion(p_u, campaign.zeta, campaign.b_tot), q
    kind = "MaxProd" if scenario.method == "MaxProdSinr" else "MaxMin"
    result = iterate_psi(
        network, campaign.zeta, campaign.b_tot, kind, **campaign.optimizer_options
    )
    return result.profile, result.p


def _report_rows(drop, report):
    std_err = report.std_err
    rows = []
    for k in range(report.K):
        flags = [f for f in report.flags if f.startswith(f"ue{k}:")]
        rows.append(
            {
                "drop": drop,
                "ue": k,
                "se": float(report.se[k]),
                "sinr": float(report.sinr[k]),
                "std_err": "" if std_err is None else float(std_err[k]),
                "flags": ";".join(flags),
            }
        )
    return rows


def run_drop(campaign, scenario, drop, seed_seq):
    """Network drop, allocation and evaluation of one scenario for one drop."""
    seed_label = f"{campaign.master_seed}/{drop}"
    result = DropResult(drop=drop, seed=seed_label)
    with log_context(drop=drop, scenario=scenario.slug, seed=seed_label):
        try:
            cfg = campaign.network.replace(case=scenario.case)
            network = drop_network(cfg, child_seed(seed_seq, 0))
            eval_seed = child_seed(seed_seq, 1)
            if scenario.power_constrained:
                evaluate = functools.partial(
                    _evaluate_sweep, campaign, scenario, seed=eval_seed
                )
                for mixed in (True, False):
                    rows = gamma_sweep(
                        network,
                        campaign.power,
                        campaign.gamma_pc,
                        campaign.b_tot,
                        mixed=mixed,
                        evaluate_se=evaluate,
                        **campaign.optimizer_options,
                    )
                    for row in rows:
                        result.ee_rows.append(dict(drop=drop, **row))
                return result

            profile, p = allocate(campaign, scenario, network)
            integer_bits = round_to_integer_bits(profile.bits, campaign.b_tot)
            bits = integer_bits if scenario.quantization == "exact" else None
            report = evaluate_se(
                campaign, scenario, network, profile, p, eval_seed, bits=bits
            )
            result.se_rows = _report_rows(drop, report)
            result.bits_rows = [
                {
                    "drop": drop,
                    "antenna": m,
                    "bits": float(profile.bits[m]),
                    "integer_bits": int(integer_bits[m]),
                    "eps": float(profile.eps[m]),
                }
                for m in range(profile.M)
            ]
        except (MixAdcError, np.linalg.LinAlgError) as err:
            logger.warning("Drop %d (seed %s) failed: %s", drop, seed_label, err)
            result.error = f"{type(err).__name__}: {err}"
    return result


def _evaluate_sweep(campaign, scenario, network, profile, p, seed):
    return evaluate_se(campaign, scenario, network, profile, p, seed)


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_cdf(path, table):
    write_rows(
        path,
        CDF_COLUMNS,
        [{"value": v, "cdf": c} for v, c in table.points()],
    )


def package_versions():
    versions = {"python": platform.python_version()}
    for name in ("numpy", "scipy", "PyYAML", "click", "pyrsistent", "python-slugify"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def _write_scenario(campaign, scenario, results):
    out = campaign.output
    ok = [r for r in results if not r.error]
    files = []

    def emit(suffix, columns, rows, metric, units):
        path = os.path.join(out, f"{scenario.slug}-{suffix}.csv")
        write_rows(path, columns, rows)
        files.append(os.path.basename(path))
        values = np.array([r[metric] for r in rows], dtype=float)
        if np.any(np.isfinite(values)):
            cdf_path = os.path.join(out, f"{scenario.slug}-{suffix}-cdf.csv")
            write_cdf(cdf_path, aggregate_cdf(values, scenario.name, metric, units))
            files.append(os.path.basename(cdf_path))

    if scenario.power_constrained:
        rows = [row for r in ok for row in r.ee_rows]
        emit("ee", EE_COLUMNS, rows, "ee", "bit/J")
    else:
        emit("se", SE_COLUMNS, [row for r in ok for row in r.se_rows], "se", "bit/s/Hz")
        rows = [row for r in ok for row in r.bits_rows]
        emit("bits", BITS_COLUMNS, rows, "integer_bits", "bit")
    return files


def run_campaign(campaign):
    """Run every scenario over n_drops seeded drops and write the result tables.

    Drop d of every scenario uses the same seed, so methods are compared on
    the same networks. Returns the manifest dictionary."""
    os.makedirs(campaign.output, exist_ok=True)
    seeds = spawn_seeds(campaign.master_seed, campaign.n_drops)
    drops = list(range(campaign.n_drops))
    manifest = {
        "name": campaign.name,
        "config_hash": campaign.config_hash,
        "master_seed": campaign.master_seed,
        "n_drops": campaign.n_drops,
        "versions": package_versions(),
        "scenarios": {},
    }
    failed_scenarios = []
    executor = (
        ProcessPoolExecutor(max_workers=campaign.workers)
        if campaign.workers > 1
        else None
    )
    try:
        for scenario in campaign.scenarios:
            logger.info("Scenario %s: %d drops", scenario.name, campaign.n_drops)
            task = functools.partial(run_drop, campaign, scenario)
            if executor is None:
                results = list(map(task, drops, seeds))
            else:
                results = list(executor.map(task, drops, seeds))
            failures = [r for r in results if r.error]
            files = _write_scenario(campaign, scenario, results)
            fraction = len(failures) / campaign.n_drops
            manifest["scenarios"][scenario.slug] = {
                "name": scenario.name,
                "drops": campaign.n_drops - len(failures),
                "failures": len(failures),
                "failed_drops": [r.seed for r in failures],
                "files": files,
            }
            logger.info(
                "Scenario %s done, %d of %d drops failed",
                scenario.name,
                len(failures),
                campaign.n_drops,
            )
            if fraction > campaign.max_failure_fraction:
                failed_scenarios.append(scenario.name)
    finally:
        if executor is not None:
            executor.shutdown()

    with open(os.path.join(campaign.output, "schema.txt"), "w") as f:
        f.write(SCHEMA)
    with open(os.path.join(campaign.output, "manifest.yaml"), "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)
    if failed_scenarios:
        raise CampaignError(
            f"More than {100 * campaign.max_failure_fraction:g}% of the drops failed in: "
            + ", ".join(failed_scenarios)
        )
    return manifest
