"""
Train a flow network on a dataset split.
"""
from pathlib import Path

from flowmap.cli import FlowMapCommand
from flowmap.conf import build_run_config, load_profile
from flowmap.dataset import load_split, prepare_split
from flowmap.training import train


class Command(FlowMapCommand):
    help = "Train a network from scratch and write its run directory to --out."

    def add_arguments(self, parser):
        parser.add_argument("--profile", default="desk", help="Run profile (paper, desk or a profile file name).")
        parser.add_argument("--config", type=Path, default=None, help="JSON file of flat configuration keys.")
        parser.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
            help="Override one configuration key; repeatable.",
        )
        parser.add_argument("--seed", type=int, default=None)
        self.add_data_arguments(parser)
        parser.add_argument("--out", required=True, type=Path, help="Run directory.")
        parser.add_argument("--force", action="store_true", help="Overwrite an existing run.")

    def run(self, **options):
        config = build_run_config(
            profile=options["profile"],
            config_file=options["config"],
            overrides=options["overrides"],
            seed=options["seed"],
        )
        split = load_split(self.split_path(options))
        train_locations, val_locations, normalization = prepare_split(
            options["data"], split, config.maxima_scope, method=config.normalization,
        )
        result = train(
            train_locations, val_locations, config, normalization, options["out"], force=options["force"],
            profile_values=load_profile(options["profile"]),
        )
        self.stdout.write(str(result.run_dir))
