"""
The four unimodal classifiers. Every model maps a conforming batch to a
dict with "logits", "probs" (softmax over absent/present) and "features"
(the activations the classifier layer reads), so fusion can use either the
predictions or the penultimate embeddings.
"""
import logging
import math
from typing import Dict, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from luna.registry import lookup, setup_registry
from trident.core_types import FRAMES_PER_STACK, IMAGE_SIZE
from trident.errors import ShapeError, TridentError

logger = logging.getLogger(__name__)

register_arch, ARCHITECTURES = setup_registry('architectures')

MODALITY_ARCHS = {
    'audio': ('audio_lenet', 'audio_vgg19'),
    'visual': ('resnet10_3d', 'mobilenet_3d'),
    'rf': ('resnet10_3d', 'mobilenet_3d'),
}
MODALITY_FRAMES = {'visual': FRAMES_PER_STACK, 'rf': 1}


def scaled(width, shrink):
    return max(1, int(round(width * shrink)))


def init_weights(module):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity='relu')
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm3d)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5))
            nn.init.zeros_(m.bias)


class Classifier(nn.Module):
    arch = ''

    def __init__(self, input_spec: Tuple[int, ...], feature_dim: int, config: Dict):
        super().__init__()
        self.input_spec = tuple(input_spec)
        self.feature_dim = feature_dim
        self.config = dict(config)
        self.classifier = nn.Linear(feature_dim, 2)

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def check_input(self, x: torch.Tensor):
        if tuple(x.shape[1:]) != self.input_spec or x.dim() != len(self.input_spec) + 1:
            raise ShapeError(('batch',) + self.input_spec, tuple(x.shape), what=f'{self.arch} input')

    def forward(self, x):
        self.check_input(x)
        features = self.extract(x)
        logits = self.classifier(features)
        return {"logits": logits, "probs": F.softmax(logits, dim=-1), "features": features}


class ConvBlock2d(nn.Sequential):
    def __init__(self, in_channels, out_channels, kernel_size):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )


@register_arch('audio_lenet')
class AudioLeNet(Classifier):
    arch = 'audio_lenet'
    widths = (8, 16, 24, 32)

    def __init__(self, shrink=1.0):
        widths = [scaled(w, shrink) for w in self.widths]
        super().__init__((1, 40, 40), widths[-1], {'shrink': shrink})
        blocks = []
        in_channels = 1
        for i, w in enumerate(widths):
            blocks.append(ConvBlock2d(in_channels, w, 5 if i == 0 else 3))
            in_channels = w
        self.blocks = nn.Sequential(*blocks)
        init_weights(self)

    def extract(self, x):
        # 40 -> 20 -> 10 -> 5 -> 2
        return F.adaptive_avg_pool2d(self.blocks(x), 1).flatten(1)


@register_arch('audio_vgg19')
class AudioVGG19(Classifier):
    arch = 'audio_vgg19'
    # (out_channels, pool after) per 3x3 conv, two convs per block
    layout = ((64, False), (64, True),
              (128, False), (128, True),
              (128, False), (256, False),
              (256, False), (256, True),
              (256, False), (512, False),
              (512, False), (512, False),
              (512, False), (512, False),
              (512, False), (512, True))

    def __init__(self, shrink=1.0):
        layers = []
        in_channels = 1
        for width, pool in self.layout:
            out_channels = scaled(width, shrink)
            layers += [nn.Conv2d(in_channels, out_channels, 3, padding=1), nn.ReLU(inplace=True)]
            if pool:
                layers.append(nn.MaxPool2d(2))
            in_channels = out_channels
        super().__init__((1, 40, 40), in_channels, {'shrink': shrink})
        self.backbone = nn.Sequential(*layers)
        init_weights(self)

    def extract(self, x):
        return F.adaptive_avg_pool2d(self.backbone(x), 1).flatten(1)


class Bottleneck3D(nn.Module):
    """1x1x1 reduce, 3x3x3, 1x1x1 expand, with a 1x1x1 projection on the shortcut."""

    def __init__(self, in_channels, out_channels, spatial_stride):
        super().__init__()
        mid = max(1, out_channels // 4)
        stride = (1, spatial_stride, spatial_stride)
        self.conv1 = nn.Conv3d(in_channels, mid, 1, bias=False)
        self.bn1 = nn.BatchNorm3d(mid)
        self.conv2 = nn.Conv3d(mid, mid, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(mid)
        self.conv3 = nn.Conv3d(mid, out_channels, 1, bias=False)
        self.bn3 = nn.BatchNorm3d(out_channels)
        self.downsample = nn.Sequential(
            nn.Conv3d(in_channels, out_channels, 1, stride=stride, bias=False),
            nn.BatchNorm3d(out_channels),
        )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return F.relu(out + self.downsample(x))


def _check_frames(n_frames):
    if n_frames not in (FRAMES_PER_STACK, 1):
        raise TridentError(f'unsupported n_frames {n_frames}, expected {FRAMES_PER_STACK} or 1')


@register_arch('resnet10_3d')
class ResNet10_3D(Classifier):
    arch = 'resnet10_3d'
    stages = ((256, 1), (512, 2), (1024, 2), (2048, 2))

    def __init__(self, n_frames=FRAMES_PER_STACK, shrink=1.0):
        _check_frames(n_frames)
        stem = scaled(64, shrink)
        widths = [scaled(w, shrink) for w, _ in self.stages]
        super().__init__((3, n_frames, IMAGE_SIZE, IMAGE_SIZE), widths[-1],
                         {'n_frames': n_frames, 'shrink': shrink})
        self.stem = nn.Sequential(
            nn.Conv3d(3, stem, (1, 7, 7), stride=(1, 2, 2), padding=(0, 3, 3), bias=False),
            nn.MaxPool3d((1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
            nn.BatchNorm3d(stem),
            nn.ReLU(inplace=True),
        )
        blocks = []
        in_channels = stem
        for width, (_, stride) in zip(widths, self.stages):
            blocks.append(Bottleneck3D(in_channels, width, stride))
            in_channels = width
        self.blocks = nn.Sequential(*blocks)
        # 112 -> 56 -> 28 -> 28 -> 14 -> 7 -> 4
        self.pool = nn.AvgPool3d((n_frames, 4, 4))
        init_weights(self)

    def extract(self, x):
        return self.pool(self.blocks(self.stem(x))).flatten(1)


class MBConv3D(nn.Sequential):
    def __init__(self, in_channels, out_channels, spatial_stride=1):
        super().__init__(
            nn.Conv3d(in_channels, out_channels, 3, stride=(1, spatial_stride, spatial_stride),
                      padding=1, bias=False),
            nn.BatchNorm3d(out_channels),
            nn.ReLU(inplace=True),
        )


@register_arch('mobilenet_3d')
class MobileNet3D(Classifier):
    arch = 'mobilenet_3d'
    # (in, out, spatial stride)
    layout = ((32, 64, 1), (64, 128, 2),
              (128, 128, 1), (128, 256, 2),
              (256, 256, 1), (256, 512, 2),
              (512, 512, 1), (512, 512, 1),
              (512, 512, 1), (512, 512, 1),
              (512, 512, 1), (512, 1024, 2),
              (1024, 1024, 1))

    def __init__(self, n_frames=FRAMES_PER_STACK, shrink=1.0):
        _check_frames(n_frames)
        super().__init__((3, n_frames, IMAGE_SIZE, IMAGE_SIZE), scaled(1024, shrink),
                         {'n_frames': n_frames, 'shrink': shrink})
        self.stem = MBConv3D(3, scaled(32, shrink), spatial_stride=2)
        self.blocks = nn.Sequential(*[MBConv3D(scaled(i, shrink), scaled(o, shrink), s)
                                      for i, o, s in self.layout])
        init_weights(self)

    def extract(self, x):
        return F.adaptive_avg_pool3d(self.blocks(self.stem(x)), 1).flatten(1)


def build_audio_lenet(shrink=1.0) -> AudioLeNet:
    return AudioLeNet(shrink=shrink)


def build_audio_vgg19(shrink=1.0) -> AudioVGG19:
    return AudioVGG19(shrink=shrink)


def build_resnet10_3d(n_frames=FRAMES_PER_STACK, shrink=1.0) -> ResNet10_3D:
    return ResNet10_3D(n_frames=n_frames, shrink=shrink)


def build_mobilenet_3d(n_frames=FRAMES_PER_STACK, shrink=1.0) -> MobileNet3D:
    return MobileNet3D(n_frames=n_frames, shrink=shrink)


def build_model(arch, **config) -> nn.Module:
    try:
        model_cls = lookup('architectures', arch)
    except KeyError as e:
        raise TridentError(str(e)) from None
    return model_cls(**config)


def build_for_modality(modality, arch, shrink=1.0) -> Classifier:
    if arch not in MODALITY_ARCHS.get(modality, ()):
        raise TridentError(f"architecture '{arch}' does not serve modality '{modality}', "
                           f"choose from {MODALITY_ARCHS.get(modality, ())}")
    if modality == 'audio':
        return build_model(arch, shrink=shrink)
    return build_model(arch, n_frames=MODALITY_FRAMES[modality], shrink=shrink)


def forward(model: Classifier, batch) -> Tuple[np.ndarray, np.ndarray]:
    """(probs, features) as numpy arrays for a batch in evaluation mode."""
    x = torch.as_tensor(np.asarray(batch), dtype=next(model.parameters()).dtype)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(x)
    model.train(was_training)
    return out['probs'].numpy(), out['features'].numpy()
