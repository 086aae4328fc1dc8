"""
Detection systems: one unimodal classifier, or two to three frozen
classifiers joined by late or GMU fusion. Every system answers a batch of
model-ready tensors (`predict_batch`) or one raw sample, features included
(`detect`).
"""
import contextlib
import logging
from typing import Dict, List, Sequence

import numpy as np
import torch

from trident.audio_features import mfcc_tensor
from trident.core_types import MultiModalSample
from trident.dataset import rf_layout, video_layout
from trident.errors import TridentError
from trident.fusion import GmuFusion, LateFusion
from trident.model_zoo import Classifier
from trident.rf_features import stft_spectrogram
from trident.video_features import load_frame_stack

logger = logging.getLogger(__name__)


def _stage(clock, name):
    return clock.stage(name) if clock is not None else contextlib.nullcontext()


def sample_inputs(sample: MultiModalSample, modalities: Sequence[str], clock=None) -> Dict[str, torch.Tensor]:
    """Model-ready batch of one sample; frames and spectrograms are produced here when the sample lacks them."""
    inputs = {}
    if 'audio' in modalities:
        with _stage(clock, 'audio_features'):
            inputs['audio'] = torch.from_numpy(mfcc_tensor(sample.audio))[None]
    if 'visual' in modalities:
        with _stage(clock, 'video_features'):
            stack = sample.video if sample.video is not None else load_frame_stack(*sample.frames)
            inputs['visual'] = torch.from_numpy(video_layout(stack))[None]
    if 'rf' in modalities:
        with _stage(clock, 'rf_features'):
            spec = sample.rf if sample.rf is not None else stft_spectrogram(sample.iq)
            inputs['rf'] = torch.from_numpy(rf_layout(spec))[None]
    return inputs


def batch_inputs(samples: Sequence[MultiModalSample], modalities: Sequence[str]) -> Dict[str, torch.Tensor]:
    singles = [sample_inputs(s, modalities) for s in samples]
    return {m: torch.cat([s[m] for s in singles]) for m in modalities}


class DetectionSystem:
    kind = ''

    def __init__(self, models: Dict[str, Classifier]):
        if not models:
            raise TridentError('a detection system needs at least one model')
        self.models = dict(models)
        self.modalities = tuple(self.models)
        for model in self.models.values():
            model.eval()

    @property
    def name(self):
        archs = '+'.join(f'{m}_{self.models[m].arch}' for m in self.modalities)
        return f'{self.kind}:{archs}'

    def forward_all(self, inputs: Dict[str, torch.Tensor], clock=None) -> Dict[str, dict]:
        outputs = {}
        with torch.no_grad(), _stage(clock, 'model_forward'):
            for m in self.modalities:
                if m not in inputs:
                    raise TridentError(f"batch lacks modality '{m}'")
                outputs[m] = self.models[m](inputs[m])
        return outputs

    def combine(self, outputs: Dict[str, dict]) -> torch.Tensor:
        raise NotImplementedError

    def predict_batch(self, batch: Dict[str, torch.Tensor]) -> np.ndarray:
        """(batch, 2) distributions over (absent, present)."""
        outputs = self.forward_all(batch)
        with torch.no_grad():
            return self.combine(outputs).numpy()

    def detect(self, sample: MultiModalSample, clock=None) -> np.ndarray:
        inputs = sample_inputs(sample, self.modalities, clock)
        outputs = self.forward_all(inputs, clock)
        with torch.no_grad(), _stage(clock, 'fusion'):
            probs = self.combine(outputs)
        return probs[0].numpy()


class UnimodalSystem(DetectionSystem):
    kind = 'unimodal'

    def __init__(self, modality, model: Classifier):
        super().__init__({modality: model})
        self.modality = modality

    def combine(self, outputs):
        return outputs[self.modality]['probs']

    def detect(self, sample, clock=None):
        inputs = sample_inputs(sample, self.modalities, clock)
        return self.combine(self.forward_all(inputs, clock))[0].numpy()


class LateFusionSystem(DetectionSystem):
    kind = 'late'

    def __init__(self, models: Dict[str, Classifier], fusion: LateFusion):
        missing = [m for m in fusion.modalities if m not in models]
        if missing:
            raise TridentError(f'late fusion needs models for {missing}')
        super().__init__({m: models[m] for m in fusion.modalities})
        self.fusion = fusion.eval()

    def combine(self, outputs):
        probs = torch.stack([outputs[m]['probs'] for m in self.modalities], dim=1)
        return self.fusion(probs)['probs']


class GmuFusionSystem(DetectionSystem):
    kind = 'gmu'

    def __init__(self, models: Dict[str, Classifier], gmu: GmuFusion):
        missing = [m for m in gmu.modalities if m not in models]
        if missing:
            raise TridentError(f'GMU fusion needs models for {missing}')
        super().__init__({m: models[m] for m in gmu.modalities})
        self.gmu = gmu.eval()

    def combine(self, outputs):
        return self.gmu([outputs[m]['features'] for m in self.modalities])['probs']


def build_system(kind, models: Dict[str, Classifier], fusion_module=None) -> DetectionSystem:
    if kind == 'unimodal':
        (modality, model), = models.items()
        return UnimodalSystem(modality, model)
    if kind == 'late':
        return LateFusionSystem(models, fusion_module)
    if kind == 'gmu':
        return GmuFusionSystem(models, fusion_module)
    raise TridentError(f"unknown fusion kind '{kind}', choose from unimodal/late/gmu")


def modality_combinations(modalities: Sequence[str] = ('audio', 'visual', 'rf')) -> List[tuple]:
    """Every dual-modal pair followed by the tri-modal set, in modality order."""
    modalities = tuple(modalities)
    pairs = [(a, b) for i, a in enumerate(modalities) for b in modalities[i + 1:]]
    return pairs + ([modalities] if len(modalities) == 3 else [])
