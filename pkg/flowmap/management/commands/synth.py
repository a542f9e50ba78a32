"""
Generate a synthetic catchment dataset.
"""
from pathlib import Path

from flowmap.cli import FlowMapCommand
from flowmap.synthcatch import SynthParams, write_dataset


class Command(FlowMapCommand):
    help = "Write synthetic locations, a split.json and a synth.json parameter echo to --out."

    def add_arguments(self, parser):
        parser.add_argument("--out", required=True, type=Path, help="Output dataset directory.")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--locations", type=int, default=4, help="Number of locations.")
        parser.add_argument("--days", type=int, default=400, help="Days per location.")
        parser.add_argument("--T", dest="T", type=int, default=20, help="History length the data must support.")
        parser.add_argument("--height", type=int, default=128)
        parser.add_argument("--width", type=int, default=128)
        parser.add_argument("--gauges", type=int, default=1, help="Gauges per location.")
        parser.add_argument("--flow-missing", type=float, default=0.0, help="Fraction of unmeasured flow days.")
        parser.add_argument("--weather-missing", type=float, default=0.0, help="Fraction of missing weather days.")
        parser.add_argument("--force", action="store_true", help="Overwrite an existing dataset.")

    def run(self, **options):
        params = SynthParams(
            seed=options["seed"],
            n_days=options["days"],
            T=options["T"],
            height=options["height"],
            width=options["width"],
            n_gauges=options["gauges"],
            flow_missing_fraction=options["flow_missing"],
            weather_missing_fraction=options["weather_missing"],
        )
        out_dir = write_dataset(options["out"], params, options["locations"], force=options["force"])
        self.stdout.write(str(out_dir))
