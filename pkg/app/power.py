""" Power consumption and energy efficiency of the uplink. """
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PowerModel:
    P_cst: float = 10.0  # W
    P_ue: float = 0.1  # W per UE
    P_bsa: float = 0.05  # W per BS antenna
    P_cd: float = 1.15  # J/Gbit
    eta: float = 0.39
    D1: float = 0.006  # W per conversion step
    bandwidth_hz: float = 20e6
    zeta: float = 1.6
    tau_p: int = 5
    tau_c: int = 200

    def __post_init__(self):
        for name in ("P_cst", "P_ue", "P_bsa", "P_cd", "eta", "D1", "bandwidth_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.tau_p <= self.tau_c:
            raise ValueError("Need 0 < tau_p <= tau_c")

    @classmethod
    def from_table_defaults(cls, tau_p=5, tau_c=200):
        return cls(tau_p=tau_p, tau_c=tau_c)

    @classmethod
    def from_config(cls, config, tau_p=None):
        pw = config.power
        return cls(
            P_cst=float(pw.P_cst),
            P_ue=float(pw.P_ue),
            P_bsa=float(pw.P_bsa),
            P_cd=float(pw.P_cd),
            eta=float(pw.eta),
            D1=float(pw.D1),
            bandwidth_hz=float(config.network.bandwidth_hz),
            zeta=float(config.hardware.zeta),
            tau_p=int(tau_p or config.network.tau_p),
            tau_c=int(config.network.tau_c),
        )

    @property
    def coding_energy_per_bit(self):
        return self.P_cd * 1e-9


def adc_power(D1, zeta=1.6, bits=None, eps=None):
    """Per-ADC power D1 2^b_m (= D1 zeta_m / eps_m) and the I/Q total 2 sum_m.

    Exactly one of bits and eps must be given."""
    if (bits is None) == (eps is None):
        raise ValueError("Give either bits or eps")
    if bits is not None:
        per_adc = D1 * np.exp2(np.asarray(bits, dtype=float))
    else:
        with np.errstate(divide="ignore"):
            per_adc = D1 * np.asarray(zeta, dtype=float) / np.asarray(eps, dtype=float)
    return per_adc, 2.0 * float(np.sum(per_adc))


def data_power(p, model):
    """(1 - tau_p/tau_c) (B_w / eta) sum_k p_k, in W."""
    prelog = 1.0 - model.tau_p / model.tau_c
    return prelog * model.bandwidth_hz / model.eta * float(np.sum(p))


def pilot_power(q, model):
    return model.tau_p / model.tau_c * model.bandwidth_hz / model.eta * float(np.sum(q))


def total_tx_adc_power(p, eps, model, zeta=None):
    """Data transmit power plus total ADC power, P_txd-adc."""
    zeta = model.zeta if zeta is None else zeta
    _, adc_total = adc_power(model.D1, zeta, eps=eps)
    return data_power(p, model) + adc_total


def power_breakdown(se_sum, p, q, eps, model, M, K, zeta=None):
    """Every term of the consumed power, in W."""
    zeta = model.zeta if zeta is None else zeta
    _, adc_total = adc_power(model.D1, zeta, eps=eps)
    return {
        "fixed": model.P_cst,
        "ue_circuits": model.P_ue * K,
        "antenna_circuits": model.P_bsa * M,
        "pilot": pilot_power(q, model),
        "data": data_power(p, model),
        "adc": adc_total,
        "coding": model.coding_energy_per_bit * model.bandwidth_hz * se_sum,
    }


def energy_efficiency(se_sum, p, q, eps, model, M, K, zeta=None):
    """Delivered bits per Joule, B_w sum SE / total consumed power."""
    if se_sum < 0:
        raise ValueError("Sum SE cannot be negative")
    if se_sum == 0:
        return 0.0
    total = sum(power_breakdown(se_sum, p, q, eps, model, M, K, zeta).values())
    return model.bandwidth_hz * se_sum / total
