import click
import numpy as np
from app import create_app
from app.allocation import (
    allocate_min_pilot_distortion,
    pilot_power_profile,
    round_to_integer_bits,
    verify_kkt,
)
from app.misc import MixAdcError
from app.network import NetworkConfig, drop_network


@click.command(help="Minimum pilot-distortion bit allocation for one network drop")
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, help="Drop seed (default: campaign.master_seed)")
def allocate(config_file, seed):
    try:
        config = create_app(config_file)
        cfg = NetworkConfig.from_config(config)
        seed = config.campaign.master_seed if seed is None else seed
        network = drop_network(cfg, seed)
        zeta = float(config.hardware.zeta)
        b_tot = int(config.hardware.b_tot)
        p_u = pilot_power_profile(network.pilot_energy, network.correlation)
        profile = allocate_min_pilot_distortion(p_u, zeta, b_tot)
        integer_bits = round_to_integer_bits(profile.bits, b_tot)
        kkt = verify_kkt(profile.eps, p_u, zeta, b_tot)
    except MixAdcError as err:
        raise click.ClickException(str(err))

    print(f"{cfg.case}: M={cfg.M} K={cfg.K} b_tot={b_tot} seed={seed}")
    print("Antenna      bits  integer")
    for m in range(cfg.M):
        print(f"{m:7}{profile.bits[m]:10.4f}{integer_bits[m]:9}")
    print(f"Budget residual          {kkt.budget_residual:.3e}")
    print(f"Stationarity spread      {kkt.stationarity_spread:.3e}")
    print(f"KKT conditions hold      {'yes' if kkt.ok else 'no'}")
    print(f"Integer bits spent       {int(np.sum(integer_bits))}")
