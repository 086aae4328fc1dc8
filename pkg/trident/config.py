import dataclasses
import os
from typing import List, Tuple

import yaml

from luna.program_args import ProgramArgs
from trident.augmentation import SCENARIO_PRESETS
from trident.core_types import SEGMENTS_PER_RECORDING
from trident.errors import ConfigurationError
from trident.fusion import MODALITIES
from trident.model_zoo import MODALITY_ARCHS
from trident.rf_features import SYNTH_IQ_RATE
from trident.synth_data import check_segments_per_file

MODES = ('synth-data', 'preprocess', 'train', 'fuse', 'evaluate', 'augment-calibrate', 'benchmark', 'report')
SCENARIOS = ('none',) + tuple(SCENARIO_PRESETS)
FUSION_KINDS = ('none', 'late', 'gmu')
DATA_ENV = 'TRIDENT_DATA_DIR'


def default_data_root():
    return os.environ.get(DATA_ENV, 'data')


def _check_choice(name, value, choices):
    if value not in choices:
        raise ConfigurationError(f"{name}='{value}' is not one of {list(choices)}")


def _check_range(name, value, low, high):
    if not low <= value <= high:
        raise ConfigurationError(f'{name}={value} outside [{low}, {high}]')


@dataclasses.dataclass
class DataSection:
    root: str = ''
    manifest: str = 'manifest.tsv'
    files: int = 10
    segments_per_file: int = SEGMENTS_PER_RECORDING
    difficulty: float = 0.5
    class_balance: float = 0.5
    daylight_fraction: float = 0.5
    urban_fraction: float = 0.5
    los_fraction: float = 0.5
    iq_rate: float = SYNTH_IQ_RATE
    frame_size: int = 224
    split_ratios: List[float] = dataclasses.field(default_factory=lambda: [0.77, 0.11, 0.12])
    short_clips: bool = False
    # preprocess writes the first spectrogram of each recording as a PNG
    spectrogram_png: bool = True

    def validate(self):
        if self.files < 1:
            raise ConfigurationError('data.files must be positive')
        check_segments_per_file(self.segments_per_file, self.short_clips, name='data.segments_per_file')
        for name in ('difficulty', 'class_balance', 'daylight_fraction', 'urban_fraction', 'los_fraction'):
            _check_range(f'data.{name}', getattr(self, name), 0.0, 1.0)
        if len(self.split_ratios) != 3:
            raise ConfigurationError('data.split_ratios takes three fractions (train, val, test)')


@dataclasses.dataclass
class ModelsSection:
    audio: str = 'audio_lenet'
    visual: str = 'resnet10_3d'
    rf: str = 'resnet10_3d'
    shrink: float = 1.0

    def validate(self):
        for modality in MODALITIES:
            _check_choice(f'models.{modality}', getattr(self, modality), MODALITY_ARCHS[modality])
        _check_range('models.shrink', self.shrink, 1e-3, 1.0)


@dataclasses.dataclass
class FusionSection:
    kind: str = 'late'
    modalities: List[str] = dataclasses.field(default_factory=lambda: list(MODALITIES))
    hidden_dim: int = 64
    epochs: int = 50
    lr: float = 0.05
    gmu_lr: float = 0.01
    batch_size: int = 64

    def validate(self):
        _check_choice('fusion.kind', self.kind, FUSION_KINDS)
        if len(self.modalities) not in (2, 3) or len(set(self.modalities)) != len(self.modalities):
            raise ConfigurationError(f'fusion.modalities takes 2 or 3 distinct modalities, got {self.modalities}')
        for m in self.modalities:
            _check_choice('fusion.modalities', m, MODALITIES)
        if self.epochs < 1 or self.hidden_dim < 1:
            raise ConfigurationError('fusion.epochs and fusion.hidden_dim must be positive')


@dataclasses.dataclass
class AugmentSection:
    probes: int = 20
    mcd_tolerance: float = 0.5
    ssim_tolerance: float = 0.02

    def validate(self):
        if self.probes < 20:
            raise ConfigurationError(f'augment.probes={self.probes}, calibration needs at least 20')


@dataclasses.dataclass
class TrainSection:
    epochs: int = 20
    batch_size: int = 32
    lr_max: float = 0.01
    lr_min: float = 0.001
    betas: List[float] = dataclasses.field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    keep_checkpoints: int = 2

    def validate(self):
        if not 0 < self.lr_min < self.lr_max:
            raise ConfigurationError('train needs 0 < lr_min < lr_max')
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError('train.epochs and train.batch_size must be positive')


@dataclasses.dataclass
class EvalSection:
    split: str = 'test'
    scenario: str = 'none'
    batch_size: int = 32
    timing: bool = False
    confusion_png: bool = True

    def validate(self):
        _check_choice('eval.split', self.split, ('train', 'val', 'test'))
        _check_choice('eval.scenario', self.scenario, SCENARIOS)
        if self.scenario != 'none' and self.split != 'test':
            raise ConfigurationError('degradation scenarios apply to the test split only')


@dataclasses.dataclass
class BenchSection:
    iterations: int = 30
    warmup: int = 5
    samples: int = 8
    single_lane: bool = True

    def validate(self):
        if self.iterations < 30 or self.warmup < 5:
            raise ConfigurationError('bench needs iterations >= 30 and warmup >= 5')


SECTIONS = {
    'data': DataSection,
    'models': ModelsSection,
    'fusion': FusionSection,
    'augment': AugmentSection,
    'train': TrainSection,
    'eval': EvalSection,
    'bench': BenchSection,
}


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = dataclasses.field(default_factory=DataSection)
    models: ModelsSection = dataclasses.field(default_factory=ModelsSection)
    fusion: FusionSection = dataclasses.field(default_factory=FusionSection)
    augment: AugmentSection = dataclasses.field(default_factory=AugmentSection)
    train: TrainSection = dataclasses.field(default_factory=TrainSection)
    eval: EvalSection = dataclasses.field(default_factory=EvalSection)
    bench: BenchSection = dataclasses.field(default_factory=BenchSection)

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    @property
    def data_root(self):
        return self.data.root or default_data_root()

    @property
    def manifest_path(self):
        return os.path.join(self.data_root, self.data.manifest)

    @property
    def cache_dir(self):
        return os.path.join(self.data_root, 'cache')

    @property
    def models_dir(self):
        return os.path.join(self.data_root, 'models')

    @property
    def reports_dir(self):
        return os.path.join(self.data_root, 'reports')

    def arch_of(self, modality):
        return getattr(self.models, modality)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc) -> 'RunConfig':
        doc = doc or {}
        if not isinstance(doc, dict):
            raise ConfigurationError('a run config is a mapping of sections')
        unknown = [k for k in doc if k not in SECTIONS and k != 'seed']
        if unknown:
            raise ConfigurationError(f'unknown config section(s) {unknown}, expected {["seed"] + list(SECTIONS)}')
        kwargs = {}
        for name, section_cls in SECTIONS.items():
            values = doc.get(name) or {}
            if not isinstance(values, dict):
                raise ConfigurationError(f'config section [{name}] must be a mapping')
            fields = {f.name for f in dataclasses.fields(section_cls)}
            bad = sorted(set(values) - fields)
            if bad:
                raise ConfigurationError(f'unknown key(s) {bad} in config section [{name}]')
            kwargs[name] = section_cls(**values)
        if 'seed' in doc:
            kwargs['seed'] = int(doc['seed'])
        return cls(**kwargs).validate()

    @classmethod
    def from_yaml(cls, path) -> 'RunConfig':
        if not os.path.isfile(path):
            raise ConfigurationError(f'config file not found: {path}')
        with open(path, 'r', encoding='utf8') as f:
            try:
                doc = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigurationError(f'{path}: {e}') from None
        return cls.from_dict(doc)

    def dump(self, path):
        with open(path, 'w', encoding='utf8') as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)
        return path


class Config(ProgramArgs):
    _modes = MODES
    _help = {
        'config': 'YAML run config; flags given on the command line override it',
        'seed': 'seed for every random stream of the run',
        'out': f'data root (synth-data writes it, later subcommands read it); defaults to ${DATA_ENV} or ./data',
        'files': 'number of synthetic recordings',
        'segments': 'segments of 0.25 s per synthetic recording',
        'short_clips': 'allow recordings shorter than 10 s (fewer than 40 segments)',
        'difficulty': 'synthetic class overlap in [0, 1], 0 is trivially separable',
        'iq_rate': 'I/Q sample rate of the recordings in samples per second',
        'modality': 'modality of the unimodal model to train, evaluate or benchmark',
        'arch': 'architecture for --modality, defaults to the [models] section',
        'shrink': 'channel width multiplier of every model',
        'fusion': 'system to evaluate or fuse: none (unimodal), late or gmu',
        'modalities': 'comma-separated modalities joined by fusion',
        'scenario': 'test-time degradation: none, low_noise or high_noise',
        'split': 'manifest split to evaluate',
        'epochs': 'training epochs',
        'batch_size': 'training batch size',
        'iterations': 'timed benchmark iterations (>= 30)',
        'warmup': 'discarded benchmark iterations (>= 5)',
        'single_lane': 'pin torch to one thread',
        'timing': 'include per-detection time in evaluation reports',
        'overwrite': 'redo preprocessing of recordings already cached',
    }

    # flag -> (section, field) in the run config
    _targets = {
        'seed': (None, 'seed'),
        'out': ('data', 'root'),
        'files': ('data', 'files'),
        'segments': ('data', 'segments_per_file'),
        'short_clips': ('data', 'short_clips'),
        'difficulty': ('data', 'difficulty'),
        'iq_rate': ('data', 'iq_rate'),
        'shrink': ('models', 'shrink'),
        'fusion': ('fusion', 'kind'),
        'scenario': ('eval', 'scenario'),
        'split': ('eval', 'split'),
        'epochs': ('train', 'epochs'),
        'batch_size': ('train', 'batch_size'),
        'iterations': ('bench', 'iterations'),
        'warmup': ('bench', 'warmup'),
        'single_lane': ('bench', 'single_lane'),
        'timing': ('eval', 'timing'),
    }

    def __init__(self):
        super().__init__()
        self.config = ''
        self.seed = 0
        self.out = ''

        # synthetic data
        self.files = 10
        self.segments = SEGMENTS_PER_RECORDING
        self.short_clips = False
        self.difficulty = 0.5
        self.iq_rate = SYNTH_IQ_RATE

        # models
        self.modality = 'audio'
        self.arch = ''
        self.shrink = 1.0
        self.fusion = 'late'
        self.modalities = 'audio,visual,rf'

        # evaluation and training
        self.scenario = 'none'
        self.split = 'test'
        self.epochs = 20
        self.batch_size = 32

        # benchmark
        self.iterations = 30
        self.warmup = 5
        self.single_lane = True
        self.timing = False
        self.overwrite = False

        self._explicit = set()

    def _check_args(self):
        _check_choice('--modality', self.modality, MODALITIES)
        _check_choice('--fusion', self.fusion, FUSION_KINDS)
        _check_choice('--scenario', self.scenario, SCENARIOS)
        _check_choice('--split', self.split, ('train', 'val', 'test'))
        if self.arch:
            _check_choice('--arch', self.arch, MODALITY_ARCHS[self.modality])
        for m in self.modality_list:
            _check_choice('--modalities', m, MODALITIES)

    @property
    def modality_list(self) -> Tuple[str, ...]:
        return tuple(m.strip() for m in self.modalities.split(',') if m.strip())

    def run_config(self) -> RunConfig:
        """The YAML config (or defaults) with every explicit flag applied on top."""
        run = RunConfig.from_yaml(self.config) if self.config else RunConfig()
        for key, (section, field) in self._targets.items():
            if key not in self._explicit:
                continue
            target = run if section is None else getattr(run, section)
            setattr(target, field, getattr(self, key))
        if 'arch' in self._explicit and self.arch:
            setattr(run.models, self.modality, self.arch)
        if 'modalities' in self._explicit:
            run.fusion.modalities = list(self.modality_list)
        return run.validate()
