# SPDX-License-Identifier: Apache-2.0
"""Python access to the dynmoe core: configs, FLOPs model, checkpoints and the CLI."""

import json

from . import _dynmoe
from ._dynmoe import (
    ConfigError,
    InputError,
    MissingArtifactError,
    NumericError,
    StateError,
    coupled_group_argmin,
    target_rze,
)

__all__ = [
    "ConfigError",
    "InputError",
    "MissingArtifactError",
    "NumericError",
    "StateError",
    "Model",
    "aggregate_records",
    "config_hash",
    "coupled_group_argmin",
    "main",
    "resolve_config",
    "speedup_table",
    "target_rze",
]


def main(args):
    """Run a CLI subcommand in-process and return its exit status."""
    return _dynmoe.cli_main([str(a) for a in args])


def resolve_config(path="", overrides=()):
    """Fully resolved run config as a dict."""
    return json.loads(_dynmoe.resolve_config(str(path), list(overrides)))


def config_hash(path="", overrides=()):
    """Hex digest identifying the resolved run config."""
    return _dynmoe.config_hash(str(path), list(overrides))


def speedup_table(lengths, r_ze_values=(0.5,), config=None):
    """Rows of (length, r_ze, prefill_speedup, decode_speedup)."""
    text = "" if config is None else json.dumps(config)
    return _dynmoe.speedup_table(text, [float(x) for x in lengths], [float(r) for r in r_ze_values])


def aggregate_records(records_csv, key):
    """Grouped means of a token_records.csv as dicts."""
    fields = ("group", "count", "r_ze", "entropy", "delta_logp")
    return [dict(zip(fields, row)) for row in _dynmoe.aggregate_records(str(records_csv), key)]


class Model:
    """A loaded checkpoint."""

    def __init__(self, path):
        self._m = _dynmoe.Model.load(str(path))

    @property
    def config(self):
        return json.loads(self._m.config)

    @property
    def parameter_count(self):
        return self._m.parameter_count

    def logits(self, tokens, mask=None):
        return self._m.logits([list(map(int, row)) for row in tokens], mask)

    def evaluate(self, corpus_csv, mask=None):
        return json.loads(self._m.evaluate(str(corpus_csv), mask))

    def save(self, path):
        self._m.save(str(path))
