"""Python access to the ehrdr C++ core."""

import json as _json

from ._core import *  # noqa: F401,F403
from ._core import pair_stats as _pair_stats, run_pipeline as _run_pipeline


def pair_stats(path):
    """Per-source statistics of a pairs file as a dict."""
    return _json.loads(_pair_stats(str(path)))


def run_pipeline(configs, overrides=None, from_stage="chunk", to_stage="eval"):
    """Run the pipeline from config files; returns the evaluation report dict."""
    return _json.loads(_run_pipeline([str(c) for c in configs], overrides or {}, from_stage, to_stage))
