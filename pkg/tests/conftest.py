import os
import sys

import pytest

DOUBLES_DIR = os.path.join(os.path.dirname(__file__), "doubles")


@pytest.fixture
def codec_double_cmd():
    def build(mode, *dims):
        return [sys.executable, os.path.join(DOUBLES_DIR, "codec_double.py"), mode,
                *(str(d) for d in dims)]
    return build


@pytest.fixture
def model_double_cmd():
    def build(mode, h, w, c, thresholds=None):
        cmd = [sys.executable, os.path.join(DOUBLES_DIR, "model_double.py"), mode,
               str(h), str(w), str(c)]
        if thresholds is not None:
            cmd.append(",".join(repr(float(t)) for t in thresholds))
        return cmd
    return build
