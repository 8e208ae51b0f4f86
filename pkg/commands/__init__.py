"""
Command Runner
Shared options and the load-run-emit cycle behind every CLI command
"""
import json
import logging
from typing import Optional

import click

from exceptions import LayerToolkitError
from services.report_service import report_service
from settings import configure_logging, thread_limits

logger = logging.getLogger(__name__)


def common_options(func):
    """--config, --output, --format and --verbose shared by every command"""
    func = click.option("--verbose", "-v", is_flag=True, help="Debug logging")(func)
    func = click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default=None,
                        help="Report format (defaults to output.format in the config)")(func)
    func = click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
                        help="Report path (defaults to output.path in the config, else stdout)")(func)
    func = click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False),
                        required=True, help="YAML run configuration")(func)
    return func


def execute(command: str, config_path: str, output: Optional[str], fmt: Optional[str], verbose: bool) -> None:
    """
    Load the config, run the command, emit the report and exit with its code.

    Config errors exit with code 2 before anything runs; module errors are
    carried by the report.
    """
    configure_logging(verbose)
    try:
        cfg = report_service.load_config(config_path)
    except LayerToolkitError as e:
        logger.error(f"Invalid configuration {config_path}: {e.message}")
        click.echo(json.dumps({"failure": e.to_dict(), "exit_code": e.exit_code}, indent=2), err=True)
        click.get_current_context().exit(e.exit_code)

    with thread_limits():
        report = report_service.run_command(command, cfg)

    fmt = fmt or cfg.output.format
    path = output or cfg.output.path
    if path:
        for written in report_service.write_report(report, path, fmt):
            click.echo(f"Wrote {written}", err=True)
    else:
        click.echo(report_service.render(report, fmt))
    if report.failure is not None:
        click.echo(f"{command}: {report.failure.code}: {report.failure.message}", err=True)
    click.get_current_context().exit(report.exit_code)
