"""Textual explanations of frozen image classifiers."""

import json as _json

from ._vislex import (
    ArgumentError,
    ArtifactError,
    ConfigError,
    ContextError,
    ContractViolation,
    FormatError,
    NumericError,
    bow_cosine,
    default_min_count,
    default_stopwords,
    jensen_shannon,
    meteor_lite,
    nucleus_filter,
    pipeline_commands,
    rouge_l,
    select_problematic,
    word_profile,
)
from . import _vislex


def detect_spurious(counts, class_terms, label=""):
    return _json.loads(_vislex.detect_spurious(dict(counts), list(class_terms), label))


def generate_synthetic(spec):
    return _vislex.generate_synthetic(_json.dumps(spec))


def default_config():
    return _json.loads(_vislex.default_config())


def load_config(path):
    return _json.loads(_vislex.load_config(str(path)))


def config_digest(config):
    return _vislex.config_digest(_json.dumps(config))


def run_command(name, config):
    """Runs one pipeline command against config["output_dir"]."""
    return _json.loads(_vislex.run_command(name, _json.dumps(config)))
