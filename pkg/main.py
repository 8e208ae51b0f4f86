"""
Curved Layer Toolkit
Command-line entry point: python main.py <command> --config <path>
"""
import logging

import click
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from commands.certify_commands import certify
from commands.geometry_commands import check_identities, curvature
from commands.solve_commands import full, solve

logger = logging.getLogger(__name__)


@click.group()
@click.version_option("1.0.0", prog_name="curved-layer")
def cli():
    """Geometry, spectra and bound-state certificates of quantum layers over deformed planes"""


# Register commands
cli.add_command(curvature)
cli.add_command(check_identities)
cli.add_command(certify)
cli.add_command(solve)
cli.add_command(full)


if __name__ == "__main__":
    cli()
