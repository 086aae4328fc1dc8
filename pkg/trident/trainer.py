"""
Unimodal training: Adam with a cosine learning-rate decay from lr_max to
lr_min over the epoch budget, cross-entropy on the two presence classes.
Checkpoints follow the `<base>.<epoch>` / `<base>.best` naming.
"""
import dataclasses
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from luna import Color, flt2str, log, prune_ckpts, set_seed
from trident.errors import ConfigurationError, TridentError
from trident.model_zoo import Classifier
from trident.weights import save_weights

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr_max: float = 0.01
    lr_min: float = 0.001
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    keep_checkpoints: int = 2

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if not 0 < self.lr_min < self.lr_max:
            raise ConfigurationError(f'learning rates need 0 < lr_min < lr_max, '
                                     f'got {self.lr_min} and {self.lr_max}')
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError('epochs and batch_size must be positive')


def cosine_lr(epoch, cfg: TrainConfig) -> float:
    """Closed form of the schedule: lr_max at epoch 0, lr_min at epoch cfg.epochs."""
    progress = min(max(epoch, 0), cfg.epochs) / cfg.epochs
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1 + math.cos(math.pi * progress)) / 2


def build_optimizer(model: torch.nn.Module, cfg: TrainConfig):
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_max, betas=cfg.betas, eps=cfg.eps)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs,
                                                           eta_min=cfg.lr_min)
    return optimizer, scheduler


def _loader(data: Dataset, cfg: TrainConfig, shuffle):
    generator = torch.Generator().manual_seed(cfg.seed)
    return DataLoader(data, batch_size=cfg.batch_size, shuffle=shuffle,
                      generator=generator, num_workers=0)


def _split_batch(batch, modality):
    if isinstance(batch, dict):
        return batch[modality], batch['label']
    x, y = batch
    return x, y


@torch.no_grad()
def accuracy(model: Classifier, data: Dataset, batch_size=64, modality=None) -> float:
    model.eval()
    correct, total = 0, 0
    for batch in DataLoader(data, batch_size=batch_size, shuffle=False):
        x, y = _split_batch(batch, modality)
        predicted = model(x)['probs'].argmax(dim=-1)
        correct += int((predicted == y).sum())
        total += int(y.shape[0])
    if total == 0:
        raise TridentError('empty split')
    return 100.0 * correct / total


def train_unimodal(model: Classifier,
                   train_data: Dataset,
                   cfg: TrainConfig,
                   val_data: Optional[Dataset] = None,
                   checkpoint_base: Optional[str] = None,
                   modality: Optional[str] = None) -> Tuple[Classifier, List[Dict[str, float]]]:
    """
    Items of the datasets are (x, label) pairs, or dicts holding `modality`
    and 'label'. Returns the model with the weights of its best validation
    epoch and the per-epoch history.
    """
    if len(train_data) == 0:
        raise TridentError('empty split: nothing to train on')
    if val_data is not None and len(val_data) == 0:
        logger.warning('Validation split is empty, selecting checkpoints by train accuracy')
        val_data = None
    set_seed(cfg.seed)
    optimizer, scheduler = build_optimizer(model, cfg)
    loader = _loader(train_data, cfg, shuffle=True)

    history = []
    best_acc, best_state = -1.0, None
    for epoch in range(cfg.epochs):
        model.train()
        lr = optimizer.param_groups[0]['lr']
        total_loss, seen = 0.0, 0
        bar = tqdm(loader, desc=f'epoch {epoch}', leave=False)
        for batch in bar:
            x, y = _split_batch(batch, modality)
            optimizer.zero_grad()
            loss = F.cross_entropy(model(x)['logits'], y)
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * y.shape[0]
            seen += y.shape[0]
            bar.set_description(f'epoch {epoch} loss {loss.item():.4f}')
        scheduler.step()

        val_acc = accuracy(model, val_data if val_data is not None else train_data, modality=modality)
        record = {'epoch': epoch, 'lr': lr, 'train_loss': total_loss / seen, 'val_accuracy': val_acc}
        history.append(record)
        improved = val_acc > best_acc
        log(f'Epoch {epoch}: loss {flt2str(record["train_loss"], ":.4f")}, '
            f'val acc {flt2str(val_acc)}, lr {lr:.5f}',
            color=Color.green if improved else None)
        if improved:
            best_acc = val_acc
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if checkpoint_base:
            save_weights(model, f'{checkpoint_base}.{epoch}')
            if improved:
                save_weights(model, f'{checkpoint_base}.best')
            prune_ckpts(checkpoint_base, cfg.keep_checkpoints)

    model.load_state_dict(best_state)
    model.eval()
    logger.info('Best validation accuracy %.2f over %d epochs', best_acc, cfg.epochs)
    return model, history


class TensorPairs(Dataset):
    """(x, label) pairs over in-memory arrays."""

    def __init__(self, x: np.ndarray, labels):
        self.x = torch.as_tensor(np.asarray(x), dtype=torch.float32)
        self.labels = torch.as_tensor(np.asarray(labels, dtype=np.int64))
        if self.x.shape[0] != self.labels.shape[0]:
            raise TridentError(f'{self.x.shape[0]} inputs for {self.labels.shape[0]} labels')

    def __len__(self):
        return self.labels.shape[0]

    def __getitem__(self, idx):
        return self.x[idx], self.labels[idx]
