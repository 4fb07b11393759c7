import click
from app.quantizer import build_codebook, write_codebooks

codebook = click.Group("codebook", help="Gaussian ADC quantizer codebooks")


def parse_bits(value):
    """Accept `3`, `1,2,5` or a range like `1..8`."""
    bits = []
    for part in value.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            bits.extend(range(int(lo), int(hi) + 1))
        elif part:
            bits.append(int(part))
    if not bits or min(bits) < 1:
        raise click.BadParameter("resolutions must be positive integers")
    return sorted(set(bits))


@codebook.command(help="Writes quantizer thresholds and levels as CSV")
@click.option("--bits", default="1..8", show_default=True, help="Resolutions to export")
@click.option(
    "--output", type=click.Path(dir_okay=False), required=True, help="CSV file name"
)
def export(bits, output):
    bits = parse_bits(bits)
    rows = write_codebooks(bits, output)
    for b in bits:
        cb = build_codebook(b)
        print(f"{b:3} bits  MSE {cb.mse:.6e}  zeta {cb.effective_zeta:.4f}")
    print(f"{rows} levels written to {output}")
