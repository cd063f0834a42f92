import logging

import momentlite  # noqa: F401

log = logging.getLogger()
log.setLevel(logging.INFO)


def test_loggers():
    names = [name for name in logging.root.manager.loggerDict if name.startswith("momentlite")]
    assert "momentlite.nms" in names
    assert "momentlite.evaluation" in names
    for name in names:
        assert logging.getLogger(name).name == name
