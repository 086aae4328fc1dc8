import logging
import sys

from luna import Color, log, log_config, ram_write, set_seed
from trident.config import Config
from trident.errors import ConfigurationError, TridentError

logger = logging.getLogger(__name__)

USAGE_ERROR = 1
RUNTIME_ERROR = 2


def parse(argv=None, prog='trident'):
    """The parsed Config, or the exit code of a usage error."""
    try:
        return Config()._parse_args(argv, prog=prog)
    except SystemExit as e:
        # argparse exits 0 for --help, 2 for bad arguments
        return 0 if not e.code else USAGE_ERROR
    except (TridentError, ValueError) as e:
        log(f'usage error: {e}', color=Color.red)
        return USAGE_ERROR


def main(argv=None, prog='trident'):
    config = parse(argv, prog)
    if isinstance(config, int):
        return config

    logging.getLogger().setLevel(logging.WARNING)
    log_config('trident', 'c')
    log(config)
    sys.stdout.flush()
    set_seed(config.seed)
    ram_write('config', config)

    try:
        config.run_config()
    except ConfigurationError as e:
        log(f'ConfigurationError: {e}', color=Color.red)
        # a bad file is a runtime failure, bad flags are a usage error
        return RUNTIME_ERROR if config.config else USAGE_ERROR

    from trident.task import Task
    try:
        task = Task(config)
        {
            'synth-data': task.synth_data,
            'preprocess': task.preprocess,
            'train': task.train,
            'fuse': task.fuse,
            'evaluate': task.evaluate,
            'augment-calibrate': task.augment_calibrate,
            'benchmark': task.benchmark,
            'report': task.report,
        }[config.mode]()
    except TridentError as e:
        log(f'{type(e).__name__}: {e}', color=Color.red)
        return RUNTIME_ERROR
    return 0
