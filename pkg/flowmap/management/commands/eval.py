"""
Evaluate a checkpoint or a baseline on the validation locations.
"""
from pathlib import Path

from flowmap.baselines import BaselineKind, MeanFit, make_baseline
from flowmap.cli import FlowMapCommand
from flowmap.conf import build_run_config, checkpoint_run_config
from flowmap.dataset import load_locations, load_split, prepare_split
from flowmap.evaluation import evaluate_model, evaluate_predictor
from flowmap.exceptions import ConfigError
from flowmap.model import load_checkpoint


class Command(FlowMapCommand):
    help = "Score a checkpoint (or a baseline) and write report.json and report.csv to --out."

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--checkpoint", type=Path, help="Checkpoint file to evaluate.")
        source.add_argument("--baseline", choices=[kind.value for kind in BaselineKind])
        parser.add_argument(
            "--fit", choices=[fit.value for fit in MeanFit], default=MeanFit.ALL.value,
            help="Days the mean-per-site baseline is fitted on.",
        )
        parser.add_argument("--profile", default="desk", help="Run profile for baseline evaluation.")
        parser.add_argument(
            "--config", type=Path, default=None,
            help="JSON file of flat configuration keys; a checkpoint only takes h, w, eval_batch_size and device.",
        )
        parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        self.add_data_arguments(parser)
        parser.add_argument("--subset", choices=("val", "train"), default="val")
        parser.add_argument("--out", required=True, type=Path, help="Report directory.")

    def run(self, **options):
        split = load_split(self.split_path(options))
        names = split.val if options["subset"] == "val" else split.train
        if not names:
            raise ConfigError("the split has no {} locations".format(options["subset"]))

        if options["checkpoint"]:
            checkpoint = load_checkpoint(options["checkpoint"])
            config = checkpoint_run_config(checkpoint.run_config, options["config"], options["overrides"])
            report = evaluate_model(
                checkpoint,
                load_locations(options["data"], names),
                config.eval_protocol,
                checkpoint_id=Path(options["checkpoint"]).name,
            )
        else:
            config = build_run_config(
                profile=options["profile"], config_file=options["config"], overrides=options["overrides"],
            )
            train_locations, val_locations, _ = prepare_split(
                options["data"], split, config.maxima_scope, method=config.normalization,
            )
            kwargs = {"fit": options["fit"]} if options["baseline"] == BaselineKind.MEAN_PER_SITE.value else {}
            report = evaluate_predictor(
                make_baseline(options["baseline"], **kwargs),
                val_locations if options["subset"] == "val" else train_locations,
                config.eval_protocol,
                config=config.as_dict(),
            )

        json_path, _ = report.save(options["out"])
        self.stdout.write("{} {:.6g}".format(json_path, report.aggregate_rmse))
