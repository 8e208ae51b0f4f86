"""
Certify Command
Variational bound-state certificate; exits with 3 when no sigma certifies
"""
import click

from commands import common_options, execute


@click.command("certify")
@common_options
def certify(config_path, output, fmt, verbose):
    """Sweep the mollifier scale and certify a ground energy below kappa_1^2"""
    execute("certify", config_path, output, fmt, verbose)
