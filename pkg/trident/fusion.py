"""
Decision-level (late) and feature-level (gated multimodal unit) fusion of
two or three modalities. Both fusion modules are registered as
architectures so they persist in the same weight files as the unimodal
models.
"""
import dataclasses
import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from trident.errors import ShapeError, TridentError
from trident.model_zoo import register_arch

logger = logging.getLogger(__name__)

MODALITIES = ('audio', 'visual', 'rf')


@dataclasses.dataclass(frozen=True)
class FusionWeights:
    raw: Tuple[float, ...]

    def __post_init__(self):
        raw = tuple(float(r) for r in self.raw)
        if len(raw) not in (2, 3):
            raise TridentError(f'fusion weights take 2 or 3 entries, got {len(raw)}')
        if any(r < 0 or not math.isfinite(r) for r in raw):
            raise TridentError(f'fusion weights must be finite and non-negative, got {raw}')
        object.__setattr__(self, 'raw', raw)

    def __len__(self):
        return len(self.raw)


def normalize_weights(w: FusionWeights) -> Tuple[float, ...]:
    total = sum(w.raw)
    if total <= 0:
        raise TridentError('degenerate fusion weights: all weights are zero')
    return tuple(r / total for r in w.raw)


def late_fuse(preds: Sequence[np.ndarray], w: FusionWeights) -> np.ndarray:
    """
    Weighted sum of per-modality distributions, (2,) or (batch, 2) each,
    with the normalized weights in modality order.
    """
    if len(preds) != len(w):
        raise TridentError(f'late fusion got {len(preds)} predictions for {len(w)} weights')
    normalized = normalize_weights(w)
    preds = [np.asarray(p, dtype=np.float64) for p in preds]
    for p in preds[1:]:
        if p.shape != preds[0].shape:
            raise ShapeError(preds[0].shape, p.shape, what='prediction')
    return sum(wi * p for wi, p in zip(normalized, preds))


@register_arch('late_fusion')
class LateFusion(nn.Module):
    """
    Learnable late fusion. The raw weights are exp of free parameters, so
    they stay positive and the normalization is always defined.
    """
    arch = 'late_fusion'

    def __init__(self, modalities=MODALITIES):
        super().__init__()
        modalities = list(modalities)
        if len(modalities) not in (2, 3):
            raise TridentError(f'fusion takes 2 or 3 modalities, got {modalities}')
        self.modalities = modalities
        self.input_spec = (len(modalities), 2)
        self.config = {'modalities': modalities}
        self.log_weights = nn.Parameter(torch.zeros(len(modalities)))

    @property
    def weights(self) -> FusionWeights:
        return FusionWeights(tuple(torch.exp(self.log_weights.detach()).double().tolist()))

    def forward(self, probs: torch.Tensor):
        """probs: (batch, k, 2) unimodal distributions in modality order."""
        if tuple(probs.shape[1:]) != self.input_spec:
            raise ShapeError(('batch',) + self.input_spec, tuple(probs.shape), what='late fusion input')
        normalized = F.softmax(self.log_weights, dim=0)
        fused = torch.einsum('k,bkc->bc', normalized.to(probs.dtype), probs)
        return {"probs": fused, "logits": torch.log(fused.clamp_min(1e-12))}


@register_arch('gmu_fusion')
class GmuFusion(nn.Module):
    """
    Gated multimodal unit: g = sigmoid(W_g [x_1, .., x_k] + b_g) split into
    k blocks of width d, y_i = tanh(W_y^i x_i + b_y^i), y = sum_i g_i * y_i,
    followed by a linear head and softmax.
    """
    arch = 'gmu_fusion'

    def __init__(self, feature_dims=(32, 2048, 2048), hidden_dim=64, modalities=None):
        super().__init__()
        feature_dims = [int(d) for d in feature_dims]
        if len(feature_dims) not in (2, 3):
            raise TridentError(f'fusion takes 2 or 3 modalities, got {len(feature_dims)} feature widths')
        modalities = list(modalities) if modalities else list(MODALITIES[:len(feature_dims)])
        self.modalities = modalities
        self.feature_dims = feature_dims
        self.hidden_dim = int(hidden_dim)
        self.input_spec = (sum(feature_dims),)
        self.config = {'feature_dims': feature_dims, 'hidden_dim': self.hidden_dim,
                       'modalities': modalities}
        k = len(feature_dims)
        self.gate = nn.Linear(sum(feature_dims), k * self.hidden_dim)
        self.transforms = nn.ModuleList([nn.Linear(d, self.hidden_dim) for d in feature_dims])
        self.head = nn.Linear(self.hidden_dim, 2)

    def forward(self, features: List[torch.Tensor]):
        if len(features) != len(self.feature_dims):
            raise TridentError(f'GMU expects {len(self.feature_dims)} feature vectors, got {len(features)}')
        for x, d in zip(features, self.feature_dims):
            if x.dim() != 2 or x.shape[1] != d:
                raise ShapeError(('batch', d), tuple(x.shape), what='GMU feature')
        gates = torch.sigmoid(self.gate(torch.cat(features, dim=1)))
        gates = gates.view(gates.shape[0], len(self.feature_dims), self.hidden_dim)
        transformed = torch.stack([torch.tanh(t(x)) for t, x in zip(self.transforms, features)], dim=1)
        fused = (gates * transformed).sum(dim=1)
        logits = self.head(fused)
        return {"logits": logits, "probs": F.softmax(logits, dim=-1), "fused": fused, "gates": gates}


# GMU parameters travel as the module itself
GmuParams = GmuFusion


def gmu_forward(features: Sequence[np.ndarray], p: GmuFusion) -> Tuple[np.ndarray, np.ndarray]:
    """(fused y, probs) for (batch, d_m) or (d_m,) feature arrays."""
    single = np.asarray(features[0]).ndim == 1
    dtype = next(p.parameters()).dtype
    tensors = [torch.as_tensor(np.atleast_2d(np.asarray(f)), dtype=dtype) for f in features]
    with torch.no_grad():
        out = p(tensors)
    fused, probs = out['fused'].numpy(), out['probs'].numpy()
    if single:
        return fused[0], probs[0]
    return fused, probs


def _labels_tensor(labels):
    labels = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    if labels.numel() == 0:
        raise TridentError('fusion training data is empty')
    return labels


def fit_late_weights(probs: np.ndarray, labels, epochs=50, lr=0.05, modalities=None) -> LateFusion:
    """
    Learns late fusion weights by full-batch gradient descent on the
    negative log-likelihood of the fused distribution. `probs` is
    (samples, k, 2).
    """
    labels = _labels_tensor(labels)
    probs = torch.as_tensor(np.asarray(probs), dtype=torch.float64)
    modalities = modalities or list(MODALITIES[:probs.shape[1]])
    fusion = LateFusion(modalities).double()
    optimizer = torch.optim.Adam(fusion.parameters(), lr=lr)
    for _ in range(epochs):
        optimizer.zero_grad()
        loss = F.nll_loss(fusion(probs)['logits'], labels)
        loss.backward()
        optimizer.step()
    logger.info('Late fusion weights %s', fusion.weights.raw)
    return fusion.float()


def fit_gmu(gmu: GmuFusion, features: Sequence[np.ndarray], labels,
            epochs=50, lr=0.01, batch_size=64, seed=0) -> Tuple[GmuFusion, List[float]]:
    """Trains a GMU in place on fixed features; returns it with the per-epoch mean loss."""
    labels = _labels_tensor(labels)
    dtype = next(gmu.parameters()).dtype
    tensors = [torch.as_tensor(np.asarray(f), dtype=dtype) for f in features]
    if any(t.shape[0] != labels.shape[0] for t in tensors):
        raise TridentError('feature and label counts differ')
    optimizer = torch.optim.Adam(gmu.parameters(), lr=lr)
    generator = torch.Generator().manual_seed(seed)
    history = []
    gmu.train()
    for _ in range(epochs):
        order = torch.randperm(labels.shape[0], generator=generator)
        total = 0.0
        for start in range(0, labels.shape[0], batch_size):
            idx = order[start:start + batch_size]
            optimizer.zero_grad()
            loss = F.cross_entropy(gmu([t[idx] for t in tensors])['logits'], labels[idx])
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
        history.append(total / labels.shape[0])
    gmu.eval()
    return gmu, history


def collect_outputs(models: Dict[str, nn.Module], loader, desc='collect') -> Dict[str, object]:
    """
    Runs the frozen unimodal models over a loader of modality batches and
    gathers their predictions (samples, k, 2), features per modality and labels.
    """
    modalities = list(models)
    for model in models.values():
        model.eval()
    probs, features, labels = [], {m: [] for m in modalities}, []
    with torch.no_grad():
        for batch in tqdm(loader, desc=desc, leave=False):
            step_probs = []
            for m in modalities:
                out = models[m](batch[m])
                step_probs.append(out['probs'])
                features[m].append(out['features'].numpy())
            probs.append(torch.stack(step_probs, dim=1).numpy())
            labels.append(batch['label'].numpy())
    if not labels:
        raise TridentError('fusion training data is empty')
    return {'modalities': modalities,
            'probs': np.concatenate(probs),
            'features': [np.concatenate(features[m]) for m in modalities],
            'labels': np.concatenate(labels)}


def train_late_weights(frozen_models: Dict[str, nn.Module], train_data, epochs=50, lr=0.05) -> LateFusion:
    outputs = collect_outputs(frozen_models, train_data, desc='late fusion')
    return fit_late_weights(outputs['probs'], outputs['labels'], epochs, lr, outputs['modalities'])


def train_gmu(frozen_models: Dict[str, nn.Module], p_init: GmuFusion, train_data,
              epochs=50, lr=0.01, batch_size=64, seed=0) -> GmuFusion:
    outputs = collect_outputs(frozen_models, train_data, desc='gmu fusion')
    gmu, history = fit_gmu(p_init, outputs['features'], outputs['labels'], epochs, lr, batch_size, seed)
    if history:
        logger.info('GMU loss %.4f -> %.4f over %d epochs', history[0], history[-1], len(history))
    return gmu
