"""
Command-line entry point and the base class of the flowmap management commands.
"""
import logging
import os
import sys
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from flowmap.conf import bundled_split_path
from flowmap.exceptions import FlowMapException

VERBOSITY_LEVELS = {
    0: logging.WARNING,
    1: logging.INFO,
    2: logging.DEBUG,
    3: logging.DEBUG,
}


class FlowMapCommand(BaseCommand):
    """
    Management command that reports ``FlowMapException`` as a one-line ``"<code>: <message>"`` error.

    Subclasses implement ``run(**options)`` instead of ``handle``.
    """

    requires_system_checks = []
    requires_migrations_checks = False

    def handle(self, *args, **options):
        logging.getLogger("flowmap").setLevel(VERBOSITY_LEVELS.get(options.get("verbosity", 1), logging.INFO))
        try:
            return self.run(**options)
        except FlowMapException as exc:
            raise CommandError("{}: {}".format(exc.code, " ".join(str(exc).split()))) from exc

    def run(self, **options):
        raise NotImplementedError

    def add_data_arguments(self, parser):
        parser.add_argument("--data", required=True, type=Path, help="Dataset directory holding the locations.")
        parser.add_argument(
            "--split", type=Path, default=None,
            help="Split file with train/val location names, or a bundled split name (default: <data>/split.json).",
        )

    @staticmethod
    def split_path(options) -> Path:
        if options["split"]:
            return bundled_split_path(str(options["split"]))
        return options["data"] / "split.json"


def main(argv=None):
    """
    Run ``flowmap <command> [options]``.
    """
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "flowmap.settings")
    from django.core.management import execute_from_command_line  # pylint: disable=import-outside-toplevel

    argv = list(sys.argv if argv is None else argv)
    execute_from_command_line(["flowmap"] + argv[1:])
