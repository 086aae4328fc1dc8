import os
import arrow
from inspect import isfunction

from .pretty_printing import paint

__log_path__ = "logs"
globals()["__default_target__"] = 'c'
globals()["__logger__"] = None


def log_config(filename,
               default_target,
               log_path=__log_path__,
               append=False,
               ):
    """
    Route later `log` calls. `default_target` is any of 'c' (console),
    'f' (file) or both. The file is only created on the first write, so
    configuring a file target for a run that never logs leaves no trace.
    """
    assert default_target in ['c', 'f', 'cf', 'fc']
    log_time = arrow.now().format('MMMDD_HH-mm-ss')

    def __lazy():
        if not os.path.exists(log_path):
            os.makedirs(log_path, exist_ok=True)
        return open("{}/{}.{}.txt".format(log_path, filename, log_time),
                    "a" if append else "w",
                    encoding='utf8')
    globals()["__logger__"] = __lazy
    globals()["__default_target__"] = default_target


def log(*info, target=None, color=None):
    if target is None:
        target = globals()["__default_target__"]
    assert target in ['c', 'f', 'cf', 'fc']
    if len(info) == 1:
        info_str = str(info[0])
    else:
        info_str = " ".join(map(str, info))
    if 'c' in target:
        if isfunction(color):
            print(color(info_str))
        elif isinstance(color, str):
            print(paint(info_str, color))
        else:
            print(info_str)
    if 'f' in target:
        logger = globals()["__logger__"]
        if logger is None:
            return
        if isfunction(logger):
            logger = logger()
            globals()["__logger__"] = logger
        logger.write("{}\n".format(info_str))
        logger.flush()


def log_section(title, target=None):
    log("=" * 72, target=target)
    log(title, target=target, color='cyan')
    log("=" * 72, target=target)
