import dataclasses
import itertools
import os

import numpy as np
import pytest

from trident.core_types import (AudioSegment, Lighting, LineOfSight, Location, ManifestEntry, PresenceFlag,
                                Split, label_from_frames, load_manifest, split_dataset, write_manifest)
from trident.errors import ManifestError, ShapeError, TridentError


def entry(i, label, split=Split.TRAIN):
    return ManifestEntry(sample_id=f'r{i:03d}', audio_path=f'a/{i}.wav', frames_dir=f'f/{i}',
                         iq_path=f'q/{i}.iq', label=label, lighting=Lighting.DAYLIGHT,
                         location=Location.URBAN, los=LineOfSight.LOS, split=split)


def test_label_from_frames_examples():
    assert label_from_frames([0] * 7) == PresenceFlag.ABSENT
    assert label_from_frames([0, 0, 1, 0, 0, 0, 0]) == PresenceFlag.PRESENT


@pytest.mark.parametrize('length', range(1, 11))
def test_label_from_frames_is_or_fold(length):
    for bits in itertools.product((0, 1), repeat=length):
        assert int(label_from_frames(bits)) == int(any(bits))


def test_label_from_frames_empty():
    with pytest.raises(TridentError, match='no frames'):
        label_from_frames([])


def test_presence_flag_report_boundary():
    assert PresenceFlag.PRESENT.class_index == 0
    assert PresenceFlag.ABSENT.class_index == 1
    assert PresenceFlag.from_token('drone') is PresenceFlag.PRESENT
    with pytest.raises(ValueError):
        PresenceFlag.from_token('bird')


def test_audio_segment_contract():
    AudioSegment(np.zeros(11025))
    with pytest.raises(ShapeError):
        AudioSegment(np.zeros(11024))
    with pytest.raises(TridentError):
        AudioSegment(np.full(11025, 1.5))


def test_manifest_round_trip(tiny_root, tiny_entries, tmp_path):
    assert len(tiny_entries) == 12
    copy = tmp_path / 'copy.tsv'
    # paths outside the new manifest's directory are written absolute
    write_manifest(tiny_entries, str(copy))
    assert load_manifest(str(copy)) == tiny_entries


def test_manifest_three_lines(tmp_path):
    for i in range(3):
        (tmp_path / f'{i}.wav').write_bytes(b'')
        (tmp_path / f'{i}.iq').write_bytes(b'')
        os.makedirs(tmp_path / f'f{i}')
    rows = [f'r{i}\t{i}.wav\tf{i}\t{i}.iq\tdrone\tdaylight\turban\tlos\ttrain' for i in range(3)]
    path = tmp_path / 'm.tsv'
    path.write_text('\n'.join(rows) + '\n')
    entries = load_manifest(str(path))
    assert [e.sample_id for e in entries] == ['r0', 'r1', 'r2']
    assert entries[0].audio_path == str(tmp_path / '0.wav')


def test_manifest_bad_enum_names_line(tmp_path):
    path = tmp_path / 'm.tsv'
    path.write_text('# header\n'
                    'r0\ta.wav\tf\tq.iq\tdrone\tnoon\turban\tlos\ttrain\n')
    with pytest.raises(ManifestError, match='noon') as info:
        load_manifest(str(path), check_paths=False)
    assert info.value.line_no == 2


def test_manifest_missing_file(tmp_path):
    with pytest.raises(ManifestError, match='m.tsv'):
        load_manifest(str(tmp_path / 'm.tsv'))


def full_size_entries(drone=159, no_drone=118):
    return ([entry(i, PresenceFlag.PRESENT) for i in range(drone)] +
            [entry(drone + i, PresenceFlag.ABSENT) for i in range(no_drone)])


def counts(partition):
    return tuple(len(partition[s]) for s in (Split.TRAIN, Split.VAL, Split.TEST))


def test_split_file_counts():
    entries = full_size_entries()
    assert counts(split_dataset(entries, (212 / 277, 32 / 277, 33 / 277))) == (212, 32, 33)
    # largest remainder per class: 122/18/19 drone, 91/13/14 no drone
    assert counts(split_dataset(entries, (0.77, 0.11, 0.12))) == (213, 31, 33)


def test_split_one_class():
    entries = [entry(i, PresenceFlag.PRESENT) for i in range(10)]
    assert counts(split_dataset(entries, (0.8, 0.1, 0.1))) == (8, 1, 1)


def test_split_is_deterministic_partition():
    entries = full_size_entries(30, 20)
    first = split_dataset(entries, seed=5)
    second = split_dataset(entries, seed=5)
    assert first == second
    ids = [e.sample_id for part in first.values() for e in part]
    assert sorted(ids) == sorted(e.sample_id for e in entries)
    for split, part in first.items():
        assert all(e.split == split for e in part)
    other = split_dataset(entries, seed=6)
    assert [e.sample_id for e in other[Split.TEST]] != [e.sample_id for e in first[Split.TEST]]


def test_split_per_class_floor_or_ceil():
    entries = full_size_entries(41, 17)
    ratios = (0.7, 0.2, 0.1)
    partition = split_dataset(entries, ratios, seed=2)
    for label, size in ((PresenceFlag.PRESENT, 41), (PresenceFlag.ABSENT, 17)):
        for split, ratio in zip((Split.TRAIN, Split.VAL, Split.TEST), ratios):
            n = sum(e.label == label for e in partition[split])
            assert np.floor(ratio * size) <= n <= np.ceil(ratio * size)


def test_split_errors():
    with pytest.raises(TridentError, match='insufficient files'):
        split_dataset([entry(0, PresenceFlag.PRESENT), entry(1, PresenceFlag.PRESENT)])
    with pytest.raises(TridentError):
        split_dataset(full_size_entries(5, 5), (0.5, 0.5, 0.1))


def test_entry_tags():
    e = dataclasses.replace(entry(0, PresenceFlag.ABSENT), lighting=Lighting.SUNSET)
    assert e.tags.lighting == Lighting.SUNSET
    assert e.tags.los == LineOfSight.LOS
