"""
Process-wide scratch values shared across modules without threading them
through call signatures: the running config, and counters such as how many
times a code path ran during one evaluation. `ram_reset` clears them between
runs (and between tests).
"""

__global_ram = {}


def ram_write(k, v):
    __global_ram[k] = v


def ram_inc(k):
    __global_ram[k] = __global_ram.get(k, 0) + 1


def ram_read(k, default=None):
    return __global_ram.get(k, default)


def ram_reset(prefix=None):
    if prefix is None:
        __global_ram.clear()
        return
    for key in [key for key in __global_ram if key.startswith(prefix)]:
        __global_ram.pop(key)
