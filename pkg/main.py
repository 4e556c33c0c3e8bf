import argparse
import logging
import sys
from typing import List, Optional

from config import FAMILIES, Config, ExperimentConfig
from utils.artifacts import MissingArtifactError

logger = logging.getLogger(__name__)

EPILOG = """\
precedence: command-line flags > config file (--config, default har_config.json) > environment (.env) > built-in defaults

environment:
  HAR_OFFLINE           refuse network access; hub weights must already be cached
  HAR_CACHE_DIR         image cache (<dir>/images) and hub cache (<dir>/hub)
  HAR_RUN_DIR           root of runs/<experiment>/<family>/<repeat>/
  HAR_DOWNLOAD_WORKERS  parallel image downloads (default 8)
  HAR_DEVICE            auto | cpu | cuda
"""


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (default: har_config.json if present)")
    common.add_argument("--run-dir", help="root directory for run artifacts")
    common.add_argument("--cache-dir", help="cache directory for images and hub weights")
    common.add_argument("--experiment", help="experiment name (default: the task name)")
    common.add_argument("--seed", type=int, help="global seed (split seed, inherited by training)")
    common.add_argument("--task", choices=["multiclass", "binary"], help="3-way task or sitting vs standing")
    common.add_argument("--force", action="store_true", help="regenerate artifacts even when the config hash is unchanged")
    common.add_argument("--offline", action="store_true", default=None, help="same as HAR_OFFLINE=1")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="har",
        description="Still-image activity classification experiments (walking/running, sitting, standing)",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    dataset = commands.add_parser("dataset", help="build, download or describe the dataset")
    dataset_commands = dataset.add_subparsers(dest="dataset_command", required=True, metavar="step")
    dataset_commands.add_parser("build", parents=[common], help="build manifest.jsonl from the annotation source")
    download = dataset_commands.add_parser("download", parents=[common], help="fetch images into the cache and check integrity")
    download.add_argument("--workers", type=int, help="parallel downloads")
    dataset_commands.add_parser("eda", parents=[common], help="image-dimension statistics and plots")

    split = commands.add_parser("split", parents=[common], help="stratified train/val/test split")
    split.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))

    sweep = commands.add_parser("sweep", parents=[common], help="augmentation sweep on CNN_base (validation metrics)")
    sweep.add_argument("--policies", nargs="+", help="policy names (default: config sweep list)")

    for name, help_text in (("train", "train every repeat of each family"), ("evaluate", "evaluate trained checkpoints on the test split")):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument("--families", nargs="+", choices=FAMILIES)

    commands.add_parser("embed", parents=[common], help="CLIP image and prompt embeddings")
    commands.add_parser("leaderboard", parents=[common], help="rank families, ANOVA and t-test")

    explain = commands.add_parser("explain", parents=[common], help="attention-gradient saliency and deletion checks")
    explain.add_argument("--family", default="clip_ic", choices=["clip_ic", "vit", "siglip2"])
    explain.add_argument("--repeat", type=int, default=0)
    explain.add_argument("--sample", type=int, default=25, help="number of test images")
    explain.add_argument("--k-fraction", type=float, default=0.1, help="fraction of patches masked")
    explain.add_argument("--mask-mode", choices=["mean", "blur"], default="mean")

    errors = commands.add_parser("report-errors", parents=[common], help="misclassification galleries")
    errors.add_argument("--families", nargs="+", choices=FAMILIES)
    errors.add_argument("--repeat", type=int, default=0)
    return parser


def resolve_config(args) -> ExperimentConfig:
    """Config file (or defaults) with command-line overrides applied on top"""
    config = Config.load_experiment_config(args.config)
    data = config.model_dump()
    if args.seed is not None:
        data["split"]["seed"] = args.seed
    if getattr(args, "ratios", None):
        data["split"]["ratios"] = tuple(args.ratios)
    if args.task:
        data["task"] = args.task
    if getattr(args, "policies", None):
        data["sweep_policies"] = list(args.policies)
    return ExperimentConfig.model_validate(data)


def dispatch(args, runner) -> None:
    if args.command == "dataset":
        if args.dataset_command == "build":
            manifest = runner.build_dataset()
            print(f"✅ {len(manifest)} images: {manifest.class_counts}")
        elif args.dataset_command == "download":
            report = runner.download(args.workers)
            print(f"✅ cached={report.count('cached')} downloaded={report.count('downloaded')} failed={report.count('failed')}")
            report.raise_for_violations()
        else:
            print(runner.eda().to_markdown())
    elif args.command == "split":
        assignment = runner.split()
        print(f"✅ splits written to {runner.splits_path}: {assignment.totals()}")
    elif args.command == "sweep":
        for row in runner.sweep():
            print(f"{row.policy:>20}  acc={row.accuracy:.3f}  f1={row.f1:.3f}")
    elif args.command == "train":
        runner.train(args.families)
    elif args.command == "evaluate":
        runner.evaluate(args.families)
    elif args.command == "embed":
        meta = runner.embed()
        print(f"✅ {meta['rows']} x {meta['dim']} image embeddings")
    elif args.command == "leaderboard":
        print(runner.leaderboard().to_markdown())
    elif args.command == "explain":
        summary = runner.explain(args.family, args.repeat, args.sample, args.k_fraction, args.mask_mode)
        print(f"✅ top-k drop >= random drop on {summary['top_k_wins']}/{summary['images']} images")
    elif args.command == "report-errors":
        report = runner.report_errors(args.families, args.repeat)
        print(f"✅ {len(report.misclassified_by_all)} test images misclassified by every model")


def run_command(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run one subcommand; 0 on success, 1 on a domain error, 2 on a usage error"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(level=logging.DEBUG if Config.DEBUG else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    Config.update_config({"cache_dir": args.cache_dir, "run_dir": args.run_dir, "offline": args.offline})
    problems = Config.validate_config()
    if problems:
        for problem in problems:
            logger.error(f"❌ {problem}")
        return 1
    Config.apply_environment()

    from experiment.runner import ExperimentRunner

    try:
        config = resolve_config(args)
        runner = ExperimentRunner(config, args.experiment, run_dir=args.run_dir, force=args.force)
        dispatch(args, runner)
    except MissingArtifactError as e:
        logger.error(f"❌ {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, FileNotFoundError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(run_command())
