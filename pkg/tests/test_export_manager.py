"""
Tests for export_manager.py
--------------------------
Validates the result envelope and multi-format export functionality.
"""

import json
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from emitter_types import InvalidParameterError
from export_manager import (
    PLOT_CSV_HEADER,
    ResultEnvelope,
    export_analysis,
    export_plot_csv,
    export_plot_svg,
    export_to_json,
    export_to_markdown,
    export_to_text,
    make_envelope,
    to_jsonable,
)
from regime_classifier import DrivingRegime

SCHEMA_PATH = Path(__file__).resolve().parents[1] / "schemas" / "result-envelope.v1.json"

SAMPLE_ENVELOPE = make_envelope(
    "classify",
    {"temperature": [5.0, 20.0], "gamma_hz": 109e6},
    {
        "regime": DrivingRegime.COHERENT_PI2_ONLY,
        "slope_m": np.float64(0.55),
        "class_probabilities": {"overdamped": 0.0, "coherent_pi2_only": 0.6},
        "curve": np.linspace(0.0, 1.0, 20),
    },
    ["classify-5K.csv", "classify.json"],
)


def test_envelope_defaults_and_sorting():
    envelope = make_envelope("report", {}, {}, ["b.csv", "a.csv"])
    assert envelope.schema_version == "1"
    assert envelope.artifacts == ["a.csv", "b.csv"]


def test_envelope_rejects_unknown_fields_and_versions():
    with pytest.raises(ValidationError):
        ResultEnvelope(command="x", extra_field=1)
    with pytest.raises(ValidationError):
        ResultEnvelope(command="x", schema_version="2")


def test_to_jsonable_converts_numpy_and_enums():
    data = to_jsonable({"a": np.float32(1.5), "b": np.arange(3), "c": DrivingRegime.OVERDAMPED,
                        "d": float("nan"), "e": np.bool_(True)})
    assert data == {"a": 1.5, "b": [0, 1, 2], "c": "overdamped", "d": None, "e": True}


def test_export_to_json_is_canonical():
    """Identical envelopes give byte-identical JSON with sorted keys."""
    first = export_to_json(SAMPLE_ENVELOPE)
    second = export_to_json(make_envelope(
        "classify", dict(reversed(list(SAMPLE_ENVELOPE.inputs.items()))), SAMPLE_ENVELOPE.result,
        list(reversed(SAMPLE_ENVELOPE.artifacts)),
    ))
    assert first == second
    assert first.endswith("\n")
    payload = json.loads(first)
    assert list(payload) == sorted(payload)
    assert payload["result"]["regime"] == "coherent_pi2_only"


def test_json_schema_matches_envelope_fields():
    schema = json.loads(SCHEMA_PATH.read_text())
    payload = json.loads(export_to_json(SAMPLE_ENVELOPE))
    assert set(payload) <= set(schema["properties"])
    assert set(schema["required"]) <= set(payload)
    assert schema["additionalProperties"] is False


def test_export_to_markdown():
    """Markdown export should list inputs, results and artifacts."""
    md = export_to_markdown(SAMPLE_ENVELOPE)

    assert "# Result: classify" in md
    assert "## Inputs" in md
    assert "- **regime:** coherent_pi2_only" in md
    assert "### class_probabilities" in md
    assert "[20 values]" in md
    assert "`classify-5K.csv`" in md


def test_export_to_text():
    """Text export should generate plain text with all sections."""
    text = export_to_text(SAMPLE_ENVELOPE)

    assert "RESULT: CLASSIFY" in text
    assert "INPUTS" in text
    assert "slope_m: 0.55" in text
    assert "ARTIFACTS" in text


def test_export_analysis_dispatch():
    assert export_analysis(SAMPLE_ENVELOPE, "JSON") == export_to_json(SAMPLE_ENVELOPE)
    assert export_analysis(SAMPLE_ENVELOPE, "md") == export_to_markdown(SAMPLE_ENVELOPE)
    assert export_analysis(SAMPLE_ENVELOPE, "txt") == export_to_text(SAMPLE_ENVELOPE)


def test_export_analysis_invalid_format():
    """Unsupported formats should raise InvalidParameterError."""
    with pytest.raises(InvalidParameterError, match="Unsupported export format"):
        export_analysis(SAMPLE_ENVELOPE, "xml")


def test_plot_csv_columns():
    csv = export_plot_csv([0.0, 1.0], [1.0, 2.0], [0.5, 1.5], [1.5, 2.5])
    lines = csv.splitlines()
    assert lines[0] == PLOT_CSV_HEADER
    assert lines[1] == "0.0,1.0,0.5,1.5"
    assert len(lines) == 3


def test_plot_csv_without_band_repeats_y():
    csv = export_plot_csv([0.0], [0.1])
    assert csv.splitlines()[1] == "0.0,0.1,0.1,0.1"


def test_plot_csv_length_mismatch():
    with pytest.raises(InvalidParameterError):
        export_plot_csv([0.0, 1.0], [1.0])


def test_plot_svg_is_deterministic():
    x = np.linspace(0.0, 1.0, 11)
    first = export_plot_svg(x, x ** 2, x ** 2 - 0.1, x ** 2 + 0.1, xlabel="t", ylabel="g2")
    second = export_plot_svg(x, x ** 2, x ** 2 - 0.1, x ** 2 + 0.1, xlabel="t", ylabel="g2")
    assert first.lstrip().startswith("<?xml")
    assert first == second
