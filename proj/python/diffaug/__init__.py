"""Diffusion-based sim2real augmentation toolkit."""

import json

from ._core import (
    Schedule,
    average_precision,
    config_hash,
    iou,
    linear_schedule,
    q_sample,
    run_cli,
)
from ._core import dataset_summary as _dataset_summary
from ._core import mix as _mix
from ._core import render_toy as _render_toy
from ._core import resize as _resize

__all__ = [
    "Schedule",
    "average_precision",
    "config_hash",
    "dataset_summary",
    "iou",
    "linear_schedule",
    "mix",
    "q_sample",
    "render_toy",
    "resize",
    "run_cli",
]


def _decoded(summary):
    summary["provenance"] = json.loads(summary["provenance"])
    return summary


def render_toy(domain, n, out, seed=1, side=32):
    return _decoded(_render_toy(domain, n, str(out), seed, side))


def dataset_summary(path):
    return _decoded(_dataset_summary(str(path)))


def mix(base, augment, out):
    return _decoded(_mix(str(base), str(augment), str(out)))


def resize(data, side, out):
    return _decoded(_resize(str(data), side, str(out)))
