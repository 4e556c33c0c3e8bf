import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from augmentation.policies import make_policy
from config import BINARY_LABELS, FINETUNE_FAMILIES, SCRATCH_FAMILIES, Config, ExperimentConfig, TrainConfig
from dataset.downloader import ImageDownloader
from dataset.eda import compute_eda, dataset_mean_color, plot_eda
from dataset.manifest import DatasetManifest, build_manifest, load_annotation_source
from dataset.splits import SplitAssignment, stratified_split
from evaluation.error_report import ErrorReport, report_errors
from evaluation.evaluator import Evaluator, plot_confusion
from evaluation.leaderboard import Leaderboard, build_leaderboard
from evaluation.metrics import ConfusionMatrix, MetricReport, metrics_from_confusion
from evaluation.stats import DegenerateStatisticError, one_way_anova, paired_t_test
from explain.legrad import deletion_check, legrad_saliency, render_class_grid
from models.backbones import (
    SCRATCH_PREPROCESSING,
    BackboneHandle,
    Preprocessing,
    attach_head,
    class_prompts,
    embed_images,
    embed_texts,
    load_backbone,
    preprocess,
    resize_crop,
)
from models.checkpoint import load_checkpoint, read_sidecar, save_checkpoint
from models.embeddings import pooled_similarity, read_embeddings, similarity_features, write_embeddings, zero_shot_predict
from models.scratch import build_embedding_mlp, build_feature_mlp, build_model, default_model_config
from training.data import ImageSource, TensorSource, build_datasets
from training.repeats import RunResult, aggregate_results, augmentation_sweep, repeat_runs, sweep_table_to_frame
from training.trainer import resolve_device, train
from utils.artifacts import MissingArtifactError, is_current, provenance, provenance_comment, read_json, update_index, write_json

logger = logging.getLogger(__name__)

FAMILY_BACKBONE = {"clip_em": "clip", "clip_cs": "clip", "clip_ic": "clip", "vit": "vit", "siglip2": "siglip2"}
EMBEDDING_BACKBONE = "clip"


class ExperimentRunner:
    """Owns the run directory and wires dataset, training, evaluation and reporting together"""

    def __init__(
        self,
        config: ExperimentConfig,
        experiment: Optional[str] = None,
        run_dir=None,
        cache_dir=None,
        force: bool = False,
        backbone_loader: Optional[Callable[[str, str], BackboneHandle]] = None,
    ):
        self.config = config
        self.experiment = experiment or config.task
        self.root = Path(run_dir or config.output_dir or Config.RUN_DIR) / self.experiment
        self.cache_dir = Path(cache_dir) if cache_dir else Config.image_cache_dir()
        self.force = force
        self.config_hash = config.config_hash()
        self.class_order = list(config.class_order)
        self._backbone_loader = backbone_loader or (lambda kind, weights: load_backbone(kind, weights))
        self._handles: Dict[str, BackboneHandle] = {}
        self._manifest: Optional[DatasetManifest] = None

    # -- paths and provenance -------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return Path(self.config.manifest_path)

    @property
    def splits_path(self) -> Path:
        return self.root / "splits.json"

    @property
    def embeddings_dir(self) -> Path:
        return self.root / "embeddings"

    def family_dir(self, family: str, repeat: int) -> Path:
        return self.root / family / str(repeat)

    def prov(self, seed: Optional[int] = None) -> Dict[str, Any]:
        return provenance(self.config_hash, self.config.split.seed if seed is None else seed)

    def _reusable(self, path: Path) -> bool:
        if not self.force and is_current(path, self.config_hash):
            logger.info(f"♻️ Reusing {path} (config hash {self.config_hash})")
            return True
        return False

    # -- dataset --------------------------------------------------------------

    def build_dataset(self) -> DatasetManifest:
        if not self.config.annotation_source:
            raise MissingArtifactError("No annotation_source configured; set it in the config file")
        rows = load_annotation_source(self.config.annotation_source, self.config.labels_path)
        manifest = build_manifest(rows)
        manifest.write_jsonl(self.manifest_path)
        self._manifest = manifest
        return manifest

    def manifest(self) -> DatasetManifest:
        """Manifest restricted to the task's classes (sitting and standing for the binary task)"""
        if self._manifest is None:
            if not self.manifest_path.exists():
                raise MissingArtifactError(f"Missing manifest (run `dataset build` first): {self.manifest_path}")
            self._manifest = DatasetManifest.read_jsonl(self.manifest_path)
        if self.config.task == "binary":
            return self._manifest.subset(BINARY_LABELS)
        return self._manifest

    def download(self, workers: Optional[int] = None):
        report = ImageDownloader(cache_dir=self.cache_dir, workers=workers).download_images(self.manifest())
        write_json(self.root / "integrity.json", report.model_dump(), self.prov())
        return report

    def eda(self):
        manifest = self.manifest()
        report = compute_eda(manifest)
        out = self.root / "eda"
        write_json(out / "eda.json", report.model_dump(), self.prov())
        (out / "eda.md").write_text(report.to_markdown() + provenance_comment(self.prov()), encoding="utf-8")
        plot_eda(manifest, out, self.prov())
        return report

    def split(self, ratios: Optional[Sequence[float]] = None, seed: Optional[int] = None) -> SplitAssignment:
        ratios = tuple(ratios or self.config.split.ratios)
        seed = self.config.split.seed if seed is None else seed
        if (tuple(ratios), seed) == (tuple(self.config.split.ratios), self.config.split.seed) and self._reusable(self.splits_path):
            return SplitAssignment.read_json(self.splits_path)
        assignment = stratified_split(self.manifest(), ratios, seed)
        assignment.write_json(self.splits_path, self.prov(seed))
        logger.info(f"📊 Split totals: {assignment.totals()}")
        return assignment

    def splits(self) -> SplitAssignment:
        if not self.splits_path.exists():
            raise MissingArtifactError(f"Missing splits (run `split` first): {self.splits_path}")
        return SplitAssignment.read_json(self.splits_path)

    # -- models and sources ---------------------------------------------------

    def handle(self, kind: str) -> BackboneHandle:
        if kind not in self._handles:
            Config.apply_environment()
            self._handles[kind] = self._backbone_loader(kind, self.config.backbones[kind])
        return self._handles[kind]

    def _scratch_preprocessing(self, cfg: TrainConfig) -> Preprocessing:
        return Preprocessing(resolution=cfg.resolution, mean=SCRATCH_PREPROCESSING.mean, std=SCRATCH_PREPROCESSING.std)

    def source(self, family: str, cfg: TrainConfig):
        labels = {r.image_id: r.label for r in self.manifest().records}
        if family in SCRATCH_FAMILIES:
            return ImageSource(self.manifest(), self.cache_dir, self._scratch_preprocessing(cfg))
        if family in FINETUNE_FAMILIES:
            return ImageSource(self.manifest(), self.cache_dir, self.handle(FAMILY_BACKBONE[family]).preprocessing)
        images = read_embeddings(self.embeddings_dir / "clip_images.emb")
        if family == "clip_em":
            return TensorSource(images, labels)
        return TensorSource(self.similarity(images), labels)

    def similarity(self, images=None):
        if images is None:
            images = read_embeddings(self.embeddings_dir / "clip_images.emb")
        texts = read_embeddings(self.embeddings_dir / "clip_texts.emb")
        meta = read_json(self.embeddings_dir / "embed.json", "embedding metadata")
        prompt_classes = meta["prompt_classes"]
        if len(prompt_classes) != len(self.class_order):
            return pooled_similarity(images, texts, prompt_classes, self.class_order)
        return similarity_features(images, texts, class_order=prompt_classes)

    def build(self, family: str, cfg: TrainConfig, source=None):
        num_classes = len(self.class_order)
        if family in SCRATCH_FAMILIES:
            r = cfg.resolution
            return build_model(default_model_config(family, (3, r, r), num_classes, seed=cfg.seed))
        if family == "clip_em":
            return build_embedding_mlp(source.feature_shape[0], num_classes, seed=cfg.seed)
        if family == "clip_cs":
            return build_feature_mlp(num_classes, seed=cfg.seed)
        return attach_head(self.handle(FAMILY_BACKBONE[family]), num_classes, seed=cfg.seed, freeze_backbone=cfg.freeze_backbone)

    @staticmethod
    def _describe(model) -> Dict[str, Any]:
        if hasattr(model, "describe"):
            return model.describe()
        return model.config.model_dump(mode="json")

    # -- embeddings -----------------------------------------------------------

    def embed(self):
        """CLIP image and prompt embeddings (EMB1) for the embedding families"""
        meta_path = self.embeddings_dir / "embed.json"
        if self._reusable(meta_path):
            return read_json(meta_path)
        handle = self.handle(EMBEDDING_BACKBONE)
        manifest = self.manifest()
        images = embed_images(handle, manifest.records, self.cache_dir)
        prompts, prompt_classes = class_prompts(self.class_order, self.config.prompts.template, self.config.prompts.walking_variant)
        texts = embed_texts(handle, prompts)
        write_embeddings(images, self.embeddings_dir / "clip_images.emb")
        write_embeddings(texts, self.embeddings_dir / "clip_texts.emb")

        meta = {
            "backbone": handle.metadata(),
            "prompts": prompts,
            "prompt_classes": prompt_classes,
            "walking_variant": self.config.prompts.walking_variant,
            "template": self.config.prompts.template,
            "rows": images.rows,
            "dim": images.dim,
        }
        write_json(meta_path, meta, self.prov())
        if self.splits_path.exists():
            similarity = self.similarity(images)
            predicted = dict(zip(similarity.row_keys, zero_shot_predict(similarity)))
            test_ids = self.splits().ids("test")
            labels = {r.image_id: r.label for r in manifest.records}
            correct = sum(1 for i in test_ids if predicted.get(i) == labels.get(i))
            meta["zero_shot_test_accuracy"] = correct / len(test_ids) if test_ids else 0.0
            write_json(meta_path, meta, self.prov())
        return meta

    # -- training and evaluation ----------------------------------------------

    def _write_run_config(self, run_dir: Path, family: str, cfg: TrainConfig, model, repeat: int):
        data = {
            "family": family,
            "repeat": repeat,
            "train": cfg.model_dump(mode="json"),
            "model": self._describe(model),
            "class_order": self.class_order,
            "environment": Config.get_config_summary(),
        }
        if family in FAMILY_BACKBONE:
            data["backbone"] = self.handle(FAMILY_BACKBONE[family]).metadata()
        if family in SCRATCH_FAMILIES + FINETUNE_FAMILIES:
            data["augmentation"] = make_policy(cfg.augmentation, cfg.resolution).to_json_dict()
        write_json(run_dir / "config.json", data, self.prov(cfg.seed))

    def _evaluate_run(self, family: str, repeat: int, model, datasets, seed: int) -> MetricReport:
        run_dir = self.family_dir(family, repeat)
        evaluator = Evaluator(self.class_order, device=resolve_device())
        outcome = evaluator.run_evaluation(model, datasets["test"])
        report = outcome["report"]
        write_json(run_dir / "metrics.json", report.to_json_dict(), self.prov(seed))
        summary = {key: value for key, value in outcome["metrics"].items() if key != "execution_time"}
        write_json(run_dir / "predictions.json", {"predictions": outcome["predictions"], "summary": summary}, self.prov(seed))
        plot_confusion(report, run_dir / "confusion.png", title=f"{family} #{repeat}", prov=self.prov(seed))
        update_index(
            self.root,
            f"{family}/{repeat}",
            {"family": family, "repeat": repeat, "seed": seed, "accuracy": report.accuracy, "f1_macro": report.f1},
            self.prov(),
        )
        return report

    @staticmethod
    def _load_report(path: Path) -> MetricReport:
        data = read_json(path, "metrics")
        return metrics_from_confusion(ConfusionMatrix(counts=data["confusion"], class_order=data["class_order"]))

    def _run_once(self, family: str, cfg: TrainConfig, repeat: int) -> MetricReport:
        run_dir = self.family_dir(family, repeat)
        if self._reusable(run_dir / "metrics.json"):
            return self._load_report(run_dir / "metrics.json")
        splits = self.splits()
        source = self.source(family, cfg)
        model = self.build(family, cfg, source)
        model, log = train(model, splits, cfg, source, self.class_order)
        save_checkpoint(model, run_dir, family, self._describe(model), cfg.seed, log.best_epoch, prov=self.prov(cfg.seed))
        self._write_run_config(run_dir, family, cfg, model, repeat)
        write_json(run_dir / "trainlog.json", log.to_json_dict(), self.prov(cfg.seed))
        datasets = build_datasets(source, splits, cfg, self.class_order)
        return self._evaluate_run(family, repeat, model, datasets, cfg.seed)

    def _save_result(self, result: RunResult) -> Path:
        return write_json(self.root / result.family / "result.json", result.model_dump(mode="json"), self.prov())

    def train(self, families: Optional[Sequence[str]] = None) -> Dict[str, RunResult]:
        results = {}
        for family in families or self.config.families:
            cfg = self.config.train_config(family)
            # Missing inputs fail the command; only errors inside a repeat mark the result partial
            self.splits()
            self.source(family, cfg)
            logger.info(f"🔄 Training {family} ({self.config.repeats} repeats)")
            result = repeat_runs(family, cfg, k=self.config.repeats, run_fn=lambda c, i, f=family: self._run_once(f, c, i))
            self._save_result(result)
            results[family] = result
        return results

    def load_model(self, family: str, repeat: int):
        """Rebuild a trained model from its checkpoint and sidecar"""
        run_dir = self.family_dir(family, repeat)
        sidecar = read_sidecar(run_dir)
        cfg = self.config.train_config(family).model_copy(update={"seed": sidecar["seed"]})
        source = self.source(family, cfg)
        model = self.build(family, cfg, source)
        return load_checkpoint(model, run_dir), cfg, source

    def _recorded_failures(self, family: str) -> Dict[int, str]:
        """Repeats that failed during `train`, as recorded in result.json"""
        path = self.root / family / "result.json"
        if not path.exists():
            return {}
        return {int(k): v for k, v in read_json(path).get("failures", {}).items()}

    def evaluate(self, families: Optional[Sequence[str]] = None) -> Dict[str, RunResult]:
        """Re-evaluate every trained repeat on the test split and refresh result.json; repeats without a checkpoint count as failures"""
        results = {}
        splits = self.splits()
        for family in families or self.config.families:
            self.source(family, self.config.train_config(family))
            seeds, reports, failures = [], [], {}
            recorded = self._recorded_failures(family)
            for repeat in range(self.config.repeats):
                if repeat in recorded:
                    failures[repeat] = recorded[repeat]
                    continue
                try:
                    model, cfg, source = self.load_model(family, repeat)
                except MissingArtifactError as e:
                    logger.warning(f"⚠️ {family} repeat {repeat} skipped: {e}")
                    failures[repeat] = str(e)
                    continue
                datasets = build_datasets(source, splits, cfg, self.class_order)
                reports.append(self._evaluate_run(family, repeat, model, datasets, cfg.seed))
                seeds.append(cfg.seed)
            if not reports:
                raise MissingArtifactError(f"No trained repeats for {family}: {failures[min(failures)]}")
            results[family] = aggregate_results(family, seeds, reports, failures)
            self._save_result(results[family])
        return results

    def results(self) -> List[RunResult]:
        found = []
        for family in self.config.families:
            path = self.root / family / "result.json"
            if path.exists():
                data = read_json(path)
                data.pop("provenance", None)
                found.append(RunResult.model_validate(data))
        if not found:
            raise MissingArtifactError(f"No completed runs under {self.root} (run `train` first)")
        return found

    def leaderboard(self) -> Leaderboard:
        results = self.results()
        board = build_leaderboard(results)
        board.to_csv(self.root / "leaderboard.csv", self.prov())
        (self.root / "leaderboard.md").write_text(board.to_markdown() + provenance_comment(self.prov()), encoding="utf-8")
        write_json(self.root / "leaderboard.json", board.model_dump(), self.prov())

        groups = {r.family: r.values("accuracy") for r in results if r.repeats >= 2}
        try:
            anova = one_way_anova(list(groups.values())).model_dump()
            anova["families"] = list(groups)
        except (DegenerateStatisticError, ValueError) as e:
            logger.warning(f"⚠️ ANOVA not computed: {e}")
            anova = {"error": str(e), "families": list(groups)}
        write_json(self.root / "anova.json", anova, self.prov())

        by_family = {r.family: r for r in results}
        if "cnn_base" in by_family and "fnn_base" in by_family:
            try:
                ttest = paired_t_test(by_family["cnn_base"].values("accuracy"), by_family["fnn_base"].values("accuracy")).model_dump()
            except (DegenerateStatisticError, ValueError) as e:
                logger.warning(f"⚠️ Paired t-test not computed: {e}")
                ttest = {"error": str(e)}
            write_json(self.root / "ttest.json", {"a": "cnn_base", "b": "fnn_base", **ttest}, self.prov())

        if self.config.task == "multiclass":
            comparison = Evaluator(self.class_order).compare_to_reference(board)
            write_json(self.root / "reference.json", comparison, self.prov())
        return board

    def sweep(self) -> List:
        """Augmentation sweep on CNN_base; the policy is the only variable, scored on val"""
        base_cfg = self.config.train_config("cnn_base")
        splits = self.splits()

        def run_fn(cfg: TrainConfig, index: int) -> MetricReport:
            source = self.source("cnn_base", cfg)
            model = self.build("cnn_base", cfg, source)
            model, _ = train(model, splits, cfg, source, self.class_order)
            datasets = build_datasets(source, splits, cfg, self.class_order)
            return Evaluator(self.class_order, device=resolve_device()).run_evaluation(model, datasets["val"])["report"]

        rows = augmentation_sweep(self.config.sweep_policies, base_cfg, run_fn)
        frame = sweep_table_to_frame(rows).assign(**self.prov(base_cfg.seed))
        (self.root / "sweep").mkdir(parents=True, exist_ok=True)
        frame.to_csv(self.root / "sweep" / "sweep.csv", index=False, float_format="%.6f")
        write_json(
            self.root / "sweep" / "sweep.json",
            {"model": "cnn_base", "rows": [r.model_dump() for r in rows]},
            self.prov(base_cfg.seed),
        )
        return rows

    # -- reports --------------------------------------------------------------

    def predictions(self, family: str, repeat: int = 0) -> List[Dict[str, Any]]:
        path = self.family_dir(family, repeat) / "predictions.json"
        if not path.exists():
            raise MissingArtifactError(f"Missing predictions (run `evaluate` first): {path}")
        return read_json(path)["predictions"]

    def report_errors(self, families: Optional[Sequence[str]] = None, repeat: int = 0) -> ErrorReport:
        predictions = {family: self.predictions(family, repeat) for family in families or self.config.families}
        return report_errors(predictions, self.manifest(), self.cache_dir, self.root / "errors", self.prov())

    def explain(self, family: str = "clip_ic", repeat: int = 0, sample: int = 25, k_fraction: float = 0.1, mask_mode: str = "mean") -> Dict[str, Any]:
        """Per-class saliency grids and deletion checks on test images"""
        if family not in FINETUNE_FAMILIES:
            raise ValueError(f"Saliency needs a fine-tuned transformer family {list(FINETUNE_FAMILIES)}, got {family}")
        model, cfg, source = self.load_model(family, repeat)
        model.to(resolve_device()).eval()
        spec = source.preprocessing
        mean_color = dataset_mean_color(self.manifest(), self.cache_dir)
        fill = [(c - m) / s for c, m, s in zip(mean_color, spec.mean, spec.std)]
        out = self.root / "explain" / family

        checks = []
        for image_id in self.splits().ids("test")[:sample]:
            path = source.path(image_id)
            pixels = preprocess(path, spec)
            maps = {label: legrad_saliency(model, pixels, label, self.class_order) for label in self.class_order}
            render_class_grid(resize_crop(path, spec), maps, out / f"{image_id}.png", self.prov(cfg.seed))
            true_label = source.labels[image_id]
            side = maps[true_label].patch_grid
            k = max(1, round(k_fraction * side * side))
            result = deletion_check(model, pixels, maps[true_label], k, true_label, self.class_order, fill=fill, mask_mode=mask_mode, seed=cfg.seed)
            checks.append({"image_id": image_id, "target": true_label, **result.model_dump(exclude={"random_drops"})})

        wins = sum(1 for c in checks if c["top_k_drop"] >= c["random_drop"])
        summary = {"family": family, "repeat": repeat, "images": len(checks), "top_k_wins": wins, "win_rate": wins / len(checks) if checks else 0.0, "checks": checks}
        write_json(out / "deletion.json", summary, self.prov(cfg.seed))
        logger.info(f"📊 Deletion check: top-k beats random on {wins}/{len(checks)} images")
        return summary
