import click
from app import create_app
from app.campaign import CampaignConfig, run_campaign
from app.misc import MixAdcError

campaign = click.Group("campaign", help="Run and inspect Monte-Carlo campaigns")


def _load(config_file, **kwargs):
    try:
        config = create_app(config_file)
        return CampaignConfig.from_config(config, **kwargs)
    except (MixAdcError, TypeError, ValueError) as err:
        raise click.ClickException(str(err))


@campaign.command(help="Runs every scenario of a campaign and writes CSV tables")
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", help="Output directory (default: campaign.output)")
@click.option("--seed", type=int, help="Overrides campaign.master_seed")
@click.option("--workers", type=int, help="Number of worker processes")
@click.option(
    "--scenario",
    "scenarios",
    multiple=True,
    help="Only run this scenario (name or slug). May be repeated.",
)
def run(config_file, output, seed, workers, scenarios):
    camp = _load(
        config_file,
        output=output,
        master_seed=seed,
        workers=workers,
        scenario_filter=list(scenarios) or None,
    )
    try:
        manifest = run_campaign(camp)
    except MixAdcError as err:
        raise click.ClickException(str(err))
    for slug, info in manifest["scenarios"].items():
        print(f"{slug:48}{info['drops']:6} drops{info['failures']:4} failed")
    print(f"Results written to {camp.output}")


@campaign.command(name="list", help="Lists the scenarios of a campaign")
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
def list_scenarios(config_file):
    camp = _load(config_file)
    for scenario in camp.scenarios:
        print(f"{scenario.slug:48}{scenario.name}")
