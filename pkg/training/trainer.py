import logging
import math
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field
from torch.utils.data import DataLoader, Dataset

from config import Config, LABELS, TrainConfig
from dataset.splits import SplitAssignment
from evaluation.metrics import MetricReport, evaluate_labels
from models.scratch import NonFiniteActivationError, forward
from training.data import ImageSource, TensorSource, build_datasets
from utils.seeding import configure_determinism, derive_seed, set_seed

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, last_finite_epoch: int):
        self.epoch = epoch
        self.last_finite_epoch = last_finite_epoch
        super().__init__(f"Non-finite training loss at epoch {epoch} (last finite epoch: {last_finite_epoch})")


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val: Dict[str, float]


class TrainLog(BaseModel):
    epochs: List[EpochRecord] = Field(default_factory=list)
    metric_name: str = "f1_macro"
    best_epoch: int = 0
    best_metric: float = float("-inf")
    stopped_epoch: int = 0
    early_stopped: bool = False
    wall_clock_seconds: float = 0.0

    @property
    def train_losses(self) -> List[float]:
        return [e.train_loss for e in self.epochs]

    def to_json_dict(self) -> Dict:
        data = self.model_dump(mode="json")
        # wall-clock time varies run to run; keep it out of the byte-stable artifact body
        data.pop("wall_clock_seconds")
        return data


def resolve_device(name: str = "auto") -> torch.device:
    if name == "auto":
        name = Config.DEVICE if Config.DEVICE != "auto" else ("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    """AdamW: decay is decoupled, so a zero-gradient weight shrinks by (1 - lr * weight_decay) per step"""
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)


class Trainer:
    def __init__(self, model: nn.Module, cfg: TrainConfig, class_order: Sequence[str] = LABELS, device: Optional[torch.device] = None):
        self.model = model
        self.cfg = cfg
        self.class_order = list(class_order)
        self.device = device or resolve_device(cfg.device)
        self.optimizer = None

    def _loader(self, dataset: Dataset, shuffle: bool, epoch: int = 0) -> DataLoader:
        generator = torch.Generator().manual_seed(derive_seed(self.cfg.seed, "shuffle", epoch))
        # BatchNorm cannot normalise a batch of one in train mode
        drop_last = shuffle and len(dataset) > 1 and len(dataset) % self.cfg.batch_size == 1
        return DataLoader(
            dataset,
            batch_size=self.cfg.batch_size,
            shuffle=shuffle,
            generator=generator,
            num_workers=0,
            drop_last=drop_last,
        )

    def train_epoch(self, loader: DataLoader) -> float:
        self.model.train()
        total, count = 0.0, 0
        for inputs, targets in loader:
            inputs, targets = inputs.to(self.device), targets.to(self.device)
            self.optimizer.zero_grad(set_to_none=True)
            logits = forward(self.model, inputs)
            loss = F.cross_entropy(logits, targets)
            if not torch.isfinite(loss):
                return float("nan")
            loss.backward()
            self.optimizer.step()
            total += loss.item() * targets.shape[0]
            count += targets.shape[0]
        return total / max(count, 1)

    @torch.no_grad()
    def predict(self, dataset: Dataset) -> Tuple[List[int], List[int], torch.Tensor]:
        """(true indices, predicted indices, softmax probabilities) in dataset order"""
        self.model.eval()
        y_true, probs = [], []
        for inputs, targets in self._loader(dataset, shuffle=False):
            logits = forward(self.model, inputs.to(self.device))
            probs.append(torch.softmax(logits.float(), dim=1).cpu())
            y_true.extend(int(t) for t in targets)
        probs = torch.cat(probs) if probs else torch.zeros((0, len(self.class_order)))
        return y_true, probs.argmax(dim=1).tolist(), probs

    def evaluate(self, dataset: Dataset) -> MetricReport:
        y_true, y_pred, _ = self.predict(dataset)
        return evaluate_labels(y_true, y_pred, self.class_order)

    def fit(self, datasets: Dict[str, Dataset], progress_callback: Optional[Callable] = None) -> TrainLog:
        """Train until max_epochs or patience runs out, then restore the best-epoch weights"""
        configure_determinism(self.cfg.deterministic)
        set_seed(derive_seed(self.cfg.seed, "train"))
        self.model.to(self.device)
        self.optimizer = make_optimizer(self.model, self.cfg)

        log = TrainLog(metric_name=self.cfg.early_stopping_metric)
        best_state = None
        stale = 0
        start = time.time()
        logger.info(f"🔄 Training {type(self.model).__name__} for up to {self.cfg.max_epochs} epochs on {self.device}")

        for epoch in range(1, self.cfg.max_epochs + 1):
            if hasattr(datasets["train"], "set_epoch"):
                datasets["train"].set_epoch(epoch)
            try:
                train_loss = self.train_epoch(self._loader(datasets["train"], shuffle=True, epoch=epoch))
            except NonFiniteActivationError as e:
                logger.error(f"❌ {e}")
                raise TrainingDivergedError(epoch, epoch - 1) from e
            if not math.isfinite(train_loss):
                logger.error(f"❌ Training diverged at epoch {epoch}; last finite epoch {epoch - 1}")
                raise TrainingDivergedError(epoch, epoch - 1)

            val_report = self.evaluate(datasets["val"])
            log.epochs.append(EpochRecord(epoch=epoch, train_loss=train_loss, val=val_report.as_dict()))
            metric = val_report.metric(log.metric_name)
            if metric > log.best_metric:
                log.best_metric, log.best_epoch, stale = metric, epoch, 0
                best_state = {k: v.detach().cpu().clone() for k, v in self.model.state_dict().items()}
            else:
                stale += 1
            logger.debug(f"Epoch {epoch}: loss={train_loss:.4f} val {log.metric_name}={metric:.4f}")
            if progress_callback:
                progress_callback(epoch, self.cfg.max_epochs, train_loss, val_report)

            log.stopped_epoch = epoch
            if stale >= self.cfg.patience:
                log.early_stopped = True
                logger.info(f"⏹️ Early stop at epoch {epoch} (best epoch {log.best_epoch})")
                break

        if best_state is not None:
            self.model.load_state_dict(best_state)
        log.wall_clock_seconds = time.time() - start
        logger.info(f"✅ Training done: best {log.metric_name}={log.best_metric:.4f} at epoch {log.best_epoch}")
        return log


def train(
    model: nn.Module,
    splits: SplitAssignment,
    cfg: TrainConfig,
    source,
    class_order: Sequence[str] = LABELS,
    progress_callback: Optional[Callable] = None,
) -> Tuple[nn.Module, TrainLog]:
    """Train on the split's train ids, early-stop on val; returns the best-epoch model"""
    if not isinstance(source, (ImageSource, TensorSource)):
        raise TypeError(f"source must be an ImageSource or TensorSource, got {type(source).__name__}")
    expected = getattr(getattr(model, "config", None), "input_shape", None)
    if isinstance(source, TensorSource) and expected is not None and tuple(expected) != tuple(source.feature_shape):
        raise ValueError(f"Model expects features of shape {tuple(expected)} but the source provides {tuple(source.feature_shape)}")
    datasets = build_datasets(source, splits, cfg, class_order)
    trainer = Trainer(model, cfg, class_order)
    log = trainer.fit(datasets, progress_callback)
    return model, log
