"""
Predict a dense flow map for one window and day.
"""
from pathlib import Path

from flowmap.cli import FlowMapCommand
from flowmap.conf import checkpoint_run_config
from flowmap.dataset import NormalizationStats, load_locations, prepare_dataset
from flowmap.evaluation import predict_dense
from flowmap.model import load_checkpoint


class Command(FlowMapCommand):
    help = "Write the predicted flow map of a window as a .f32 raster and a PNG image."

    def add_arguments(self, parser):
        parser.add_argument("--checkpoint", required=True, type=Path)
        parser.add_argument("--data", required=True, type=Path)
        parser.add_argument("--location", required=True, help="Location name under --data.")
        parser.add_argument("--origin", required=True, type=int, nargs=2, metavar=("ROW", "COL"))
        parser.add_argument("--day", required=True, type=int, help="Day index to predict.")
        parser.add_argument("--anchor", type=int, default=0, help="Gauge whose flow history feeds flow-lag models.")
        parser.add_argument(
            "--config", type=Path, default=None,
            help="JSON file of flat configuration keys; only h, w, eval_batch_size and device may differ.",
        )
        parser.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
            help="Override one configuration key, e.g. h=128 for a larger window; repeatable.",
        )
        parser.add_argument("--name", default="flow_map", help="Output file stem.")
        parser.add_argument("--out", required=True, type=Path)

    def run(self, **options):
        checkpoint = load_checkpoint(options["checkpoint"])
        config = checkpoint_run_config(checkpoint.run_config, options["config"], options["overrides"])
        (location,), _ = prepare_dataset(
            load_locations(options["data"], [options["location"]]),
            stats=NormalizationStats.from_dict(checkpoint.normalization),
        )
        prediction = predict_dense(
            checkpoint.model, location, tuple(options["origin"]), options["day"], config.sampler, options["out"],
            anchor=options["anchor"], name=options["name"],
        )
        self.stdout.write("{} {}".format(prediction.raster_path, prediction.image_path))
