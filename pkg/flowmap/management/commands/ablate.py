"""
Run an ablation suite.
"""
from pathlib import Path

from flowmap.ablation import load_suite, make_suite, run_ablation_suite
from flowmap.cli import FlowMapCommand
from flowmap.conf import build_run_config
from flowmap.dataset import load_split


class Command(FlowMapCommand):
    help = "Train and evaluate every variant of a suite and write comparison.csv to --out."

    def add_arguments(self, parser):
        parser.add_argument("--suite", required=True, type=Path, help="Suite file: variant names and seeds.")
        parser.add_argument("--seeds", type=int, nargs="+", default=None, help="Seeds, replacing the suite's.")
        parser.add_argument("--profile", default="desk")
        parser.add_argument("--config", type=Path, default=None)
        parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        self.add_data_arguments(parser)
        parser.add_argument("--out", required=True, type=Path)
        parser.add_argument("--force", action="store_true", help="Overwrite existing variant runs.")

    def run(self, **options):
        suite = load_suite(options["suite"])
        if options["seeds"]:
            suite = make_suite(suite.presets, options["seeds"])
        config = build_run_config(
            profile=options["profile"], config_file=options["config"], overrides=options["overrides"],
        )
        result = run_ablation_suite(
            config, suite, options["data"], load_split(self.split_path(options)), options["out"],
            force=options["force"],
        )
        self.stdout.write(result.comparison.to_string(index=False))
