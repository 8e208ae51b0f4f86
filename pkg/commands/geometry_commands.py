"""
Geometry Commands
Curvature summary and the identity suite
"""
import click

from commands import common_options, execute


@click.command("curvature")
@common_options
def curvature(config_path, output, fmt, verbose):
    """rho_m, C+-, total curvature and curvature extrema of the configured surface"""
    execute("curvature", config_path, output, fmt, verbose)


@click.command("check-identities")
@common_options
def check_identities(config_path, output, fmt, verbose):
    """Geometric, transverse, mollifier and potential identities with their residuals"""
    execute("check-identities", config_path, output, fmt, verbose)
