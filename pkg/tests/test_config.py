import pytest
import yaml

from trident.config import Config, RunConfig
from trident.errors import ConfigurationError


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_defaults_validate():
    run = RunConfig().validate()
    assert run.data.split_ratios == [0.77, 0.11, 0.12]
    assert run.eval.scenario == 'none'
    assert run.fusion.modalities == ['audio', 'visual', 'rf']


def test_yaml_round_trip(tmp_path):
    run = RunConfig.from_dict({'seed': 4, 'data': {'files': 3, 'frame_size': 48},
                               'eval': {'scenario': 'high_noise'}})
    path = run.dump(str(tmp_path / 'run.yaml'))
    again = RunConfig.from_yaml(path)
    assert again == run
    assert again.seed == 4 and again.data.frame_size == 48


def test_unknown_keys_and_sections():
    with pytest.raises(ConfigurationError, match=r"unknown key\(s\) \['epoch'\]"):
        RunConfig.from_dict({'train': {'epoch': 3}})
    with pytest.raises(ConfigurationError, match='unknown config section'):
        RunConfig.from_dict({'optimizer': {}})
    with pytest.raises(ConfigurationError, match='must be a mapping'):
        RunConfig.from_dict({'train': 3})


def test_section_rules():
    with pytest.raises(ConfigurationError, match='test split only'):
        RunConfig.from_dict({'eval': {'scenario': 'low_noise', 'split': 'val'}})
    with pytest.raises(ConfigurationError, match='lr_min < lr_max'):
        RunConfig.from_dict({'train': {'lr_min': 0.1}})
    with pytest.raises(ConfigurationError, match='2 or 3 distinct'):
        RunConfig.from_dict({'fusion': {'modalities': ['audio']}})
    with pytest.raises(ConfigurationError, match='at least 20'):
        RunConfig.from_dict({'augment': {'probes': 5}})
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({'models': {'audio': 'resnet10_3d'}})
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({'bench': {'iterations': 10}})
    with pytest.raises(ConfigurationError, match='short_clips'):
        RunConfig.from_dict({'data': {'segments_per_file': 4}})
    assert RunConfig.from_dict({'data': {'segments_per_file': 4, 'short_clips': True}}).data.segments_per_file == 4


def test_missing_and_broken_file(tmp_path):
    with pytest.raises(ConfigurationError, match='not found'):
        RunConfig.from_yaml(str(tmp_path / 'nope.yaml'))
    broken = tmp_path / 'broken.yaml'
    broken.write_text('data: [1, 2\n')
    with pytest.raises(ConfigurationError):
        RunConfig.from_yaml(str(broken))


def test_flags_override_file(tmp_path):
    path = write_yaml(tmp_path / 'run.yaml', {'seed': 1, 'train': {'epochs': 7, 'batch_size': 16}})
    config = Config()._parse_args(['train', '--config', path, '--epochs', '3'])
    run = config.run_config()
    assert run.train.epochs == 3
    assert run.train.batch_size == 16
    # flags left at their defaults do not mask the file
    assert run.seed == 1


def test_flag_targets():
    config = Config()._parse_args(['evaluate', '--fusion', 'gmu', '--modalities', 'audio,rf',
                                   '--modality', 'visual', '--arch', 'mobilenet_3d', '--single-lane', 'false'])
    run = config.run_config()
    assert run.fusion.kind == 'gmu'
    assert run.fusion.modalities == ['audio', 'rf']
    assert run.models.visual == 'mobilenet_3d'
    assert run.bench.single_lane is False
    assert run.arch_of('visual') == 'mobilenet_3d'


def test_bad_flags():
    with pytest.raises(ConfigurationError):
        Config()._parse_args(['train', '--modality', 'lidar'])
    with pytest.raises(ConfigurationError):
        Config()._parse_args(['train', '--modality', 'audio', '--arch', 'resnet10_3d'])
    with pytest.raises(ValueError):
        Config()._parse_args(['train', '--timing', 'maybe'])
    with pytest.raises(SystemExit):
        Config()._parse_args(['train', '--no-such-flag', '1'])


def test_short_clip_flags():
    config = Config()._parse_args(['synth-data', '--segments', '4', '--short-clips', 'true'])
    assert config.run_config().data.segments_per_file == 4
    with pytest.raises(ConfigurationError, match='short_clips'):
        Config()._parse_args(['synth-data', '--segments', '4']).run_config()
