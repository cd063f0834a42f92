import math
import logging

import numpy as np
import psutil
from mplite import TaskManager, Task

from momentlite import config

log = logging.getLogger(__name__)


def label_key(label):
    """
    sort key for category labels: integers ascending first, then strings.
    Labels are opaque, so mixed vocabularies must still sort deterministically.
    """
    if isinstance(label, bool):
        raise TypeError(f"bool is not a valid label: {label}")
    if isinstance(label, int):
        return (0, label, "")
    if isinstance(label, str):
        return (1, 0, label)
    raise TypeError(f"expected label as int or str, got {type(label)}")


def sorted_labels(labels):
    return sorted(set(labels), key=label_key)


def rounded(value, decimals=None):
    """ rounds floats (also inside lists, tuples and dicts) for emission. """
    if decimals is None:
        decimals = config.FLOAT_DECIMALS
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isinf(v):
            return None
        return round(v, decimals) + 0.0  # avoids -0.0
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, dict):
        return {k: rounded(v, decimals) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [rounded(v, decimals) for v in value]
    return value


def quantile_edges(values, n=5):
    """
    returns n+1 edges that split `values` into n quantile bins.

    Edges may repeat when the values are discrete; the bins in between
    are then empty.
    """
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"expected n as a positive integer, got {n}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot compute quantiles of an empty sequence")
    return [float(q) for q in np.quantile(arr, np.linspace(0.0, 1.0, n + 1))]


def worker_count(threads=None):
    """ threads=None means all available cores. """
    if threads is None:
        return max(psutil.cpu_count() or 1, 1)
    if not isinstance(threads, int) or threads < 1:
        raise ValueError(f"expected threads as an integer >= 1, got {threads}")
    return threads


def parallel_map(f, jobs, cpu_count=1, work_size=0):
    """
    executes f(key, *args) for every (key, args) in jobs.

    Returns {key: result}. Runs in-process when cpu_count is 1 or when the
    work size is below SINGLE_PROCESSING_LIMIT, otherwise uses mplite.
    The caller reduces the results in its own (sorted) key order, so the
    number of workers never changes the outcome.
    """
    jobs = list(jobs)
    if cpu_count <= 1 or len(jobs) < 2 or work_size < config.SINGLE_PROCESSING_LIMIT:
        return dict(f(key, *args) for key, args in jobs)

    n_cpus = min(cpu_count, len(jobs))
    log.info(f"running {len(jobs)} tasks of {f.__name__} on {n_cpus} processes")
    tasks = [Task(f, key, *args) for key, args in jobs]
    with TaskManager(cpu_count=n_cpus) as tm:
        results = tm.execute(tasks)
    errs = [r for r in results if isinstance(r, str)]
    if errs:
        msg = '\n'.join(errs)
        raise Exception(f"multiprocessing error:{msg}")
    return dict(results)


def silent(iterable, **kwargs):
    """ stand-in for tqdm when no progress bar is wanted. """
    return iterable
