import dataclasses
import glob
import itertools
import json
import logging
import os
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas
from tabulate import tabulate
from tqdm import tqdm

from luna import Color, chunks, create_folder, log, log_section, set_seed, single_lane
from trident.augmentation import (AugmentationConfig, augment_sample, calibrate_scenario,
                                  get_preset)
from trident.bench import benchmark_latency
from trident.config import Config
from trident.core_types import (FRAMES_PER_STACK, SEGMENT_SECONDS, Lighting, Location, ManifestEntry,
                                PresenceFlag, Split, load_manifest)
from trident.dataset import (MultiModalDataset, RecordingCache, iter_samples, load_split, make_loader,
                             preprocess_manifest, probe_samples, raw_samples)
from trident.errors import ConfigurationError, TridentError
from trident.fusion import MODALITIES, GmuFusion, train_gmu, train_late_weights
from trident.metrics import (ConfusionMatrix, MetricsReport, export_confusion_png, metrics_from_confusion,
                             report_to_text, write_confusion_csv, write_json)
from trident.model_zoo import Classifier, build_for_modality
from trident.rf_features import export_spectrogram_png
from trident.synth_data import SynthConfig, generate_dataset
from trident.systems import DetectionSystem, batch_inputs, build_system, modality_combinations
from trident.trainer import TrainConfig, train_unimodal
from trident.weights import load_best, model_path, save_weights

logger = logging.getLogger(__name__)

SLICE_ATTRIBUTES = (('lighting', Lighting), ('location', Location))
FUSION_ARCHS = {'late': 'late_fusion', 'gmu': 'gmu_fusion'}


def evaluate_predictions(labels, predicted, tags=None) -> Tuple[MetricsReport, ConfusionMatrix]:
    """
    Metrics of presence predictions, sliced by lighting and location. A
    slice is omitted, with a warning, when condition tags are missing.
    """
    labels = np.asarray(labels).astype(bool)
    predicted = np.asarray(predicted).astype(bool)
    cm = ConfusionMatrix.from_predictions(labels, predicted)
    report = metrics_from_confusion(cm)
    if tags is None or any(t is None for t in tags):
        logger.warning('condition tags missing, per-condition slices omitted')
        return report, cm
    for attribute, enum_cls in SLICE_ATTRIBUTES:
        values = np.array([getattr(t, attribute).value for t in tags])
        for member in enum_cls:
            mask = values == member.value
            if mask.any():
                sub = ConfusionMatrix.from_predictions(labels[mask], predicted[mask])
                report.slices[member.value] = metrics_from_confusion(sub)
    return report, cm


def _predict_clean(system: DetectionSystem, caches, batch_size):
    dataset = MultiModalDataset(caches, system.modalities)
    probs = [system.predict_batch(batch)
             for batch in tqdm(make_loader(dataset, batch_size), desc='evaluate', leave=False)]
    return probs, dataset.labels(), dataset.tags()


def _predict_degraded(system: DetectionSystem, caches, cfg: AugmentationConfig, batch_size):
    if 'rf' not in system.modalities and cfg.rf_snr_db is not None:
        cfg = dataclasses.replace(cfg, rf_snr_db=None)
    probs, labels, tags = [], [], []
    for cache in tqdm(caches, desc=f'evaluate ({cfg.scenario or "degraded"})', leave=False):
        degraded = [augment_sample(s, cfg) for s in iter_samples(cache, with_iq=cfg.rf_snr_db is not None)]
        for chunk in chunks(degraded, batch_size):
            probs.append(system.predict_batch(batch_inputs(chunk, system.modalities)))
        labels += [int(s.label) for s in degraded]
        tags += [s.tags for s in degraded]
    return probs, np.asarray(labels, dtype=np.int64), tags


def evaluate(system: DetectionSystem,
             test: Sequence[RecordingCache],
             scenario: Optional[AugmentationConfig] = None,
             batch_size=32,
             timing=False) -> Tuple[MetricsReport, ConfusionMatrix]:
    """
    Runs `system` over every segment of `test`. With a scenario each sample
    is degraded, with its own seeded streams, before features reach the models.
    """
    if not test or sum(len(c) for c in test) == 0:
        raise TridentError('empty split: nothing to evaluate')
    start = time.perf_counter()
    if scenario is None:
        probs, labels, tags = _predict_clean(system, test, batch_size)
    else:
        probs, labels, tags = _predict_degraded(system, test, scenario, batch_size)
    elapsed = time.perf_counter() - start
    probs = np.concatenate(probs)
    predicted = probs.argmax(axis=1) == int(PresenceFlag.PRESENT)
    report, cm = evaluate_predictions(labels, predicted, tags)
    if timing:
        report.detection_time_ms = 1e3 * elapsed / len(labels)
    return report, cm


def evaluate_real_and_noisy(system: DetectionSystem, test: Sequence[RecordingCache],
                            scenarios: Dict[str, AugmentationConfig], batch_size=32) -> Dict[str, MetricsReport]:
    """One report on the clean test data ('real'), then one per scenario."""
    reports = {'real': evaluate(system, test, None, batch_size)[0]}
    for name, cfg in scenarios.items():
        reports[name] = evaluate(system, test, cfg, batch_size)[0]
    return reports


def results_table(rows: Dict[str, Dict[str, MetricsReport]]) -> pandas.DataFrame:
    """System rows, (column, metric) columns in the Acc/Prec/Rec/F1/F1-M layout."""
    records = {}
    for system, columns in rows.items():
        record = {}
        for column, report in columns.items():
            for key, label in (('accuracy', 'Acc'), ('precision', 'Prec'), ('recall', 'Rec'),
                               ('f1', 'F1'), ('macro_f1', 'F1-M')):
                record[(column, label)] = round(getattr(report, key), 2)
        records[system] = record
    table = pandas.DataFrame.from_dict(records, orient='index')
    table.columns = pandas.MultiIndex.from_tuples(table.columns)
    return table


def fit_fusion(kind, models: Dict[str, Classifier], train: Sequence[RecordingCache],
               epochs=50, lr=0.05, gmu_lr=0.01, hidden_dim=64, batch_size=64, seed=0):
    """Trains the fusion parameters over the frozen unimodal models."""
    modalities = [m for m in MODALITIES if m in models]
    loader = make_loader(MultiModalDataset(train, modalities), batch_size=batch_size)
    frozen = {m: models[m] for m in modalities}
    if kind == 'late':
        return train_late_weights(frozen, loader, epochs, lr)
    if kind == 'gmu':
        set_seed(seed)
        gmu = GmuFusion([models[m].feature_dim for m in modalities], hidden_dim, modalities)
        return train_gmu(frozen, gmu, loader, epochs, gmu_lr, batch_size, seed)
    raise ConfigurationError(f"unknown fusion kind '{kind}', choose from late/gmu")


def fusion_sweep(models_by_modality: Dict[str, Dict[str, Classifier]],
                 train: Sequence[RecordingCache],
                 test: Sequence[RecordingCache],
                 scenarios: Dict[str, AugmentationConfig],
                 kinds=('late', 'gmu'),
                 seed=0,
                 **fusion_kwargs) -> pandas.DataFrame:
    """
    Fits and evaluates every dual-modal and tri-modal combination of the
    trained architectures under each fusion kind. One row per system.
    """
    present = tuple(m for m in MODALITIES if m in models_by_modality)
    rows = []
    for combo in modality_combinations(present):
        for archs in itertools.product(*[sorted(models_by_modality[m]) for m in combo]):
            models = {m: models_by_modality[m][a] for m, a in zip(combo, archs)}
            for kind in kinds:
                module = fit_fusion(kind, models, train, seed=seed, **fusion_kwargs)
                reports = evaluate_real_and_noisy(build_system(kind, models, module), test, scenarios)
                row = {'group': '+'.join(combo), 'archs': '+'.join(archs), 'fusion': kind}
                for column, report in reports.items():
                    row[f'{column}_accuracy'] = report.accuracy
                    row[f'{column}_f1'] = report.f1
                rows.append(row)
                log(f'{row["group"]} [{row["archs"]}] {kind}: ' +
                    ', '.join(f'{c} {r.accuracy:.2f}' for c, r in reports.items()))
    return pandas.DataFrame(rows)


def best_per_group(table: pandas.DataFrame, column) -> pandas.DataFrame:
    """The row with the highest `column` in every modality group."""
    return table.loc[table.groupby('group', sort=False)[column].idxmax()].reset_index(drop=True)


def dataset_summary(entries: Sequence[ManifestEntry], segments: Dict[str, int]):
    """
    Per split and class: files, audio segments, video frames, RF
    spectrograms and duration; plus the test segments broken down by
    lighting and location per class.
    """
    composition = []
    for split in Split:
        for label in (PresenceFlag.PRESENT, PresenceFlag.ABSENT):
            chosen = [e for e in entries if e.split == split and e.label == label]
            n = sum(segments.get(e.sample_id, 0) for e in chosen)
            composition.append({'split': split.value, 'class': label.token, 'files': len(chosen),
                                'audio_segments': n, 'video_frames': FRAMES_PER_STACK * n,
                                'rf_spectrograms': n, 'duration_s': n * SEGMENT_SECONDS})
    breakdown = []
    for label in (PresenceFlag.PRESENT, PresenceFlag.ABSENT):
        row = {'class': label.token}
        for attribute, enum_cls in SLICE_ATTRIBUTES:
            for member in enum_cls:
                row[member.value] = sum(segments.get(e.sample_id, 0) for e in entries
                                        if e.split == Split.TEST and e.label == label
                                        and getattr(e, attribute) == member)
        breakdown.append(row)
    return pandas.DataFrame(composition), pandas.DataFrame(breakdown)


def render_table(table: pandas.DataFrame, index=False) -> str:
    return tabulate(table, headers='keys', tablefmt='github', showindex=index, floatfmt='.2f')


class Task:
    def __init__(self, config: Config):
        self.config = config
        # every section is validated here, before any subcommand writes a file
        self.run = config.run_config()

    @property
    def seed(self):
        return self.run.seed

    def _entries(self) -> List[ManifestEntry]:
        return load_manifest(self.run.manifest_path)

    def _report_path(self, name):
        return os.path.join(self.run.reports_dir, name)

    def model_name(self, modality):
        return f'{modality}-{self.run.arch_of(modality)}'

    def fusion_name(self, kind, modalities):
        return f'{kind}-' + '+'.join(self.model_name(m) for m in modalities)

    def synth_data(self):
        data = self.run.data
        cfg = SynthConfig(n_files=data.files, segments_per_file=data.segments_per_file,
                          difficulty=data.difficulty, class_balance=data.class_balance,
                          daylight_fraction=data.daylight_fraction, urban_fraction=data.urban_fraction,
                          los_fraction=data.los_fraction, iq_rate=data.iq_rate,
                          frame_size=data.frame_size, split_ratios=tuple(data.split_ratios), seed=self.seed,
                          short_clips=data.short_clips)
        path = generate_dataset(cfg, self.run.data_root)
        log(f'Manifest written to {path}', color=Color.green)

    def preprocess(self):
        entries = self._entries()
        counts = preprocess_manifest(entries, self.run.cache_dir, self.run.data.iq_rate,
                                     overwrite=self.config.overwrite)
        composition, breakdown = dataset_summary(entries, counts)
        text = render_table(composition) + '\n\n' + render_table(breakdown) + '\n'
        create_folder(self.run.reports_dir)
        with open(self._report_path('dataset_summary.txt'), 'w', encoding='utf8') as f:
            f.write(text)
        if self.run.data.spectrogram_png:
            self._export_spectrograms(entries)
        log_section('Dataset')
        log(text)

    def _export_spectrograms(self, entries):
        folder = self._report_path('spectrograms')
        create_folder(folder)
        for cache in load_split(entries, self.run.cache_dir):
            if len(cache):
                export_spectrogram_png(cache.spectrogram(0), os.path.join(folder, f'{cache.entry.sample_id}.png'))
        logger.info('Spectrogram previews written to %s', folder)

    def train(self):
        modality = self.config.modality
        arch = self.run.arch_of(modality)
        tc = self.run.train
        cfg = TrainConfig(epochs=tc.epochs, batch_size=tc.batch_size, lr_max=tc.lr_max, lr_min=tc.lr_min,
                          betas=tuple(tc.betas), eps=tc.eps, seed=self.seed, keep_checkpoints=tc.keep_checkpoints)
        entries = self._entries()
        train_data = MultiModalDataset(load_split(entries, self.run.cache_dir, Split.TRAIN), (modality,))
        val_data = MultiModalDataset(load_split(entries, self.run.cache_dir, Split.VAL), (modality,))
        set_seed(self.seed)
        model = build_for_modality(modality, arch, shrink=self.run.models.shrink)
        log_section(f'Training {self.model_name(modality)} on {len(train_data)} segments')
        with single_lane(self.run.bench.single_lane):
            _, history = train_unimodal(model, train_data, cfg, val_data=val_data,
                                        checkpoint_base=model_path(self.run.models_dir, self.model_name(modality)),
                                        modality=modality)
        write_json({'model': self.model_name(modality), 'seed': self.seed, 'history': history},
                   self._report_path(f'train-{self.model_name(modality)}.json'))

    def load_unimodal(self, modality) -> Classifier:
        arch = self.run.arch_of(modality)
        return load_best(self.run.models_dir, self.model_name(modality), arch=arch)

    def fuse(self):
        fc = self.run.fusion
        if fc.kind == 'none':
            raise ConfigurationError('fuse needs --fusion late or --fusion gmu')
        modalities = [m for m in MODALITIES if m in fc.modalities]
        models = {m: self.load_unimodal(m) for m in modalities}
        train = load_split(self._entries(), self.run.cache_dir, Split.TRAIN)
        with single_lane(self.run.bench.single_lane):
            module = fit_fusion(fc.kind, models, train, epochs=fc.epochs, lr=fc.lr, gmu_lr=fc.gmu_lr,
                                hidden_dim=fc.hidden_dim, batch_size=fc.batch_size, seed=self.seed)
        path = save_weights(module, model_path(self.run.models_dir, self.fusion_name(fc.kind, modalities)) + '.best')
        log(f'Fusion weights written to {path}', color=Color.green)

    def build_system(self) -> DetectionSystem:
        fc = self.run.fusion
        if fc.kind == 'none':
            modality = self.config.modality
            return build_system('unimodal', {modality: self.load_unimodal(modality)})
        modalities = [m for m in MODALITIES if m in fc.modalities]
        models = {m: self.load_unimodal(m) for m in modalities}
        module = load_best(self.run.models_dir, self.fusion_name(fc.kind, modalities), arch=FUSION_ARCHS[fc.kind])
        return build_system(fc.kind, models, module)

    def scenario_config(self, scenario, caches) -> AugmentationConfig:
        """The calibrated config stored beside the reports, calibrating it first when missing."""
        path = self._report_path(f'augment-{scenario}.json')
        if os.path.isfile(path):
            with open(path, 'r', encoding='utf8') as f:
                cfg = AugmentationConfig.from_dict(json.load(f))
            if cfg.seed == self.seed:
                return cfg
            logger.warning('%s was calibrated with seed %d, recalibrating', path, cfg.seed)
        ac = self.run.augment
        probes = probe_samples(caches, ac.probes, seed=self.seed)
        cfg = calibrate_scenario(get_preset(scenario), probes, seed=self.seed,
                                 mcd_tolerance=ac.mcd_tolerance, ssim_tolerance=ac.ssim_tolerance)
        write_json(cfg.to_dict(), path)
        return cfg

    def augment_calibrate(self):
        scenario = self.run.eval.scenario
        if scenario == 'none':
            raise ConfigurationError('augment-calibrate needs --scenario low_noise or high_noise')
        path = self._report_path(f'augment-{scenario}.json')
        if os.path.isfile(path):
            os.remove(path)
        caches = load_split(self._entries(), self.run.cache_dir, Split.TEST)
        cfg = self.scenario_config(scenario, caches)
        c = cfg.calibration
        log(f'{scenario}: MCD {c["mcd_mean"]:.3f} ± {c["mcd_std"]:.3f} dB, '
            f'SSIM {c["ssim_mean"]:.4f} ± {c["ssim_std"]:.4f}, RF SNR {cfg.rf_snr_db} dB', color=Color.green)

    def evaluate(self):
        ec = self.run.eval
        # weights first: a missing model fails before any data is touched
        system = self.build_system()
        caches = load_split(self._entries(), self.run.cache_dir, Split(ec.split))
        scenario = self.scenario_config(ec.scenario, caches) if ec.scenario != 'none' else None
        with single_lane(self.run.bench.single_lane):
            report, cm = evaluate(system, caches, scenario, batch_size=ec.batch_size, timing=ec.timing)
        tag = f'{system.name.replace(":", "-")}-{ec.split}-{ec.scenario}'
        doc = {'system': system.name, 'split': ec.split, 'scenario': ec.scenario, 'seed': self.seed,
               'metrics': report.to_dict(include_timing=ec.timing)}
        write_json(doc, self._report_path(f'eval-{tag}.json'))
        with open(self._report_path(f'eval-{tag}.txt'), 'w', encoding='utf8') as f:
            f.write(f'# {system.name} on {ec.split}, scenario {ec.scenario}, seed {self.seed}\n')
            f.write(report_to_text(report, include_timing=ec.timing))
        write_confusion_csv(cm, self._report_path(f'eval-{tag}.csv'))
        if ec.confusion_png:
            export_confusion_png(cm, self._report_path(f'eval-{tag}.png'), title=ec.scenario)
        log(f'{system.name} [{ec.scenario}]: acc {report.accuracy:.2f}, prec {report.precision:.2f}, '
            f'rec {report.recall:.2f}, f1 {report.f1:.2f}, f1-m {report.macro_f1:.2f}',
            color=Color.yellow if report.degenerate else Color.green)

    def benchmark(self):
        bc = self.run.bench
        system = self.build_system()
        tests = [e for e in self._entries() if e.split == Split.TEST]
        samples = []
        for entry in tests:
            samples += raw_samples(entry, self.run.data.iq_rate)
            if len(samples) >= bc.samples:
                break
        report = benchmark_latency(system, samples[:bc.samples], bc.iterations, bc.warmup, lane=bc.single_lane)
        tag = system.name.replace(':', '-')
        write_json(report.to_dict(), self._report_path(f'bench-{tag}.json'))
        with open(self._report_path(f'bench-{tag}.txt'), 'w', encoding='utf8') as f:
            f.write(report.to_text())
        log(report.to_text())

    def report(self):
        rows = {}
        for path in sorted(glob.glob(self._report_path('eval-*.json'))):
            with open(path, 'r', encoding='utf8') as f:
                doc = json.load(f)
            column = 'real' if doc['scenario'] == 'none' else doc['scenario']
            rows.setdefault(doc['system'], {})[column] = MetricsView(doc['metrics'])
        if not rows:
            raise TridentError(f'no evaluation reports in {self.run.reports_dir}')
        text = render_table(results_table(rows), index=True) + '\n'
        with open(self._report_path('summary.txt'), 'w', encoding='utf8') as f:
            f.write(text)
        log_section('Results')
        log(text)


class MetricsView:
    """Read-only metric access to a stored report document."""

    def __init__(self, doc):
        self.doc = doc

    def __getattr__(self, key):
        try:
            return self.doc[key]
        except KeyError:
            raise AttributeError(key) from None
