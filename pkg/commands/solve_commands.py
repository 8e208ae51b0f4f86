"""
Solve Commands
Eigensolver runs and the full cross-checked pipeline
"""
import click

from commands import common_options, execute


@click.command("solve")
@common_options
def solve(config_path, output, fmt, verbose):
    """Lowest eigenvalues of the truncated layer, with optional bracketing and refinement"""
    execute("solve", config_path, output, fmt, verbose)


@click.command("full")
@common_options
def full(config_path, output, fmt, verbose):
    """Geometry, identities, certificate and spectrum, checking lambda_1 against E_ub"""
    execute("full", config_path, output, fmt, verbose)
