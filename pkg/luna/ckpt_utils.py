import logging
import os
import re

logger = logging.getLogger(__name__)


def checkpoint_paths(path, pattern=r'checkpoint@(\d+)\.pt'):
    """Retrieves all checkpoints found in `path` directory.
    Checkpoints are identified by matching filename to the specified pattern. If
    the pattern contains groups, the result will be sorted by the first group in
    descending order.
    """
    if not os.path.isdir(path):
        return []
    pt_regexp = re.compile(pattern)
    entries = []
    for i, f in enumerate(sorted(os.listdir(path))):
        m = pt_regexp.fullmatch(f)
        if m is not None:
            idx = int(m.group(1)) if len(m.groups()) > 0 else i
            entries.append((idx, m.group(0)))
    return [os.path.join(path, x[1]) for x in sorted(entries, reverse=True)]


# model_path = /aaa/bbb/ccc/model
# find:
#    /aaa/bbb/ccc/model.1
#    /aaa/bbb/ccc/model.2
#  * /aaa/bbb/ccc/model.best

def fetch_best_ckpt_name(model_path):
    """The `.best` file if present, else the latest epoch, else None."""
    model_name = model_path + '.best'
    if os.path.exists(model_name):
        logger.info("Found checkpoint %s", model_name)
        return model_name
    model_name = fetch_last_ckpt_name(model_path)
    if model_name is not None:
        logger.warning("Best checkpoint not found, use latest %s instead", model_name)
    return model_name


def fetch_last_ckpt_name(model_path):
    model_folder, model_file = os.path.split(model_path)
    files = checkpoint_paths(model_folder or '.', r'{}\.(\d+)'.format(re.escape(model_file)))
    return files[0] if files else None


def prune_ckpts(model_path, keep):
    """Delete all but the `keep` latest epoch checkpoints of `model_path`."""
    model_folder, model_file = os.path.split(model_path)
    files = checkpoint_paths(model_folder or '.', r'{}\.(\d+)'.format(re.escape(model_file)))
    for stale in files[keep:]:
        os.remove(stale)
