import os
import math

import numpy as np
import pytest

from momentlite import config
from momentlite.utils import label_key, sorted_labels, rounded, quantile_edges, worker_count, parallel_map, silent


def test_label_key():
    assert sorted_labels(["b", 10, "a", 2, 2]) == [2, 10, "a", "b"]
    with pytest.raises(TypeError):
        label_key(True)
    with pytest.raises(TypeError):
        label_key(1.0)


def test_rounded():
    assert rounded(1.23456789) == 1.234568
    assert rounded(math.inf) is None
    assert math.copysign(1.0, rounded(-0.0000001)) == 1.0
    assert rounded(np.float32(0.5)) == 0.5
    assert type(rounded(np.int64(3))) is int
    assert rounded({"a": (0.1 + 0.2, None, True)}) == {"a": [0.3, None, True]}
    assert rounded("text") == "text"


def test_quantile_edges():
    assert quantile_edges([1, 2, 3, 4, 5], n=4) == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert quantile_edges([7, 7, 7], n=2) == [7.0, 7.0, 7.0]
    with pytest.raises(ValueError):
        quantile_edges([], n=5)
    with pytest.raises(ValueError):
        quantile_edges([1, 2], n=0)


def test_worker_count():
    assert worker_count() >= 1
    assert worker_count(3) == 3
    for bad in (0, -1, 1.5):
        with pytest.raises(ValueError):
            worker_count(bad)


def square(key, value):
    return key, value * value


def test_parallel_map_in_process():
    jobs = [(k, (k,)) for k in range(5)]
    assert parallel_map(square, jobs) == {0: 0, 1: 1, 2: 4, 3: 9, 4: 16}
    assert parallel_map(square, []) == {}


def test_parallel_map_with_processes(monkeypatch):
    monkeypatch.setattr(config, "SINGLE_PROCESSING_LIMIT", 0)
    jobs = [(f"video_{k}", (k,)) for k in range(8)]
    assert parallel_map(square, jobs, cpu_count=2, work_size=8) == parallel_map(square, jobs)


def worker_pid(key):
    return key, os.getpid()


def test_processing_limit_is_read_at_call_time(monkeypatch):
    jobs = [(k, ()) for k in range(4)]
    assert set(parallel_map(worker_pid, jobs, cpu_count=2, work_size=4).values()) == {os.getpid()}
    monkeypatch.setattr(config, "SINGLE_PROCESSING_LIMIT", 0)
    assert os.getpid() not in parallel_map(worker_pid, jobs, cpu_count=2, work_size=4).values()


def test_rounding_follows_float_decimals(monkeypatch):
    assert rounded(0.123456789) == 0.123457
    monkeypatch.setattr(config, "FLOAT_DECIMALS", 2)
    assert rounded([0.123456789, {"a": 1.005}]) == [0.12, {"a": round(1.005, 2)}]


def test_silent():
    items = [1, 2, 3]
    assert silent(items, desc="ignored", total=3) is items
