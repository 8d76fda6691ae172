"""
export_manager.py — Multi-format export for analysis results
------------------------------------------------------------
Every command's outcome travels in a versioned result envelope, written
as canonical JSON (sorted keys, no timestamps) plus Markdown and plain
text summaries. Curves go to CSV plot-data files with confidence-band
columns, and optionally to a static SVG.
"""

import dataclasses
import io
import json
import logging
import math
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from emitter_types import InvalidParameterError

logger = logging.getLogger("coherence.export")

SCHEMA_VERSION = "1"
PLOT_CSV_HEADER = "x,y,band_lo,band_hi"


# ============================================================
# RESULT ENVELOPE
# ============================================================

class ResultEnvelope(BaseModel):
    """Versioned wrapper around one command's inputs, result and written files."""

    model_config = ConfigDict(extra="forbid")

    schema_version: str = Field(default=SCHEMA_VERSION, pattern=r"^1$")
    command: str = Field(..., min_length=1, json_schema_extra={"examples": ["diffusion-rate"]})
    inputs: Dict[str, Any] = Field(default_factory=dict)
    result: Dict[str, Any] = Field(default_factory=dict)
    artifacts: List[str] = Field(default_factory=list)


def to_jsonable(value: Any) -> Any:
    """Convert results (numpy values, enums, dataclasses) into plain JSON data.

    Non-finite floats become None so the output stays strict JSON.
    """
    if hasattr(value, "to_dict") and callable(value.to_dict):
        return to_jsonable(value.to_dict())
    if isinstance(value, BaseModel):
        return to_jsonable(value.model_dump())
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(dataclasses.asdict(value))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return number if math.isfinite(number) else None
    if isinstance(value, complex):
        return [to_jsonable(value.real), to_jsonable(value.imag)]
    return value


def make_envelope(command: str, inputs: Dict[str, Any], result: Any,
                  artifacts: Optional[List[str]] = None) -> ResultEnvelope:
    return ResultEnvelope(
        command=command,
        inputs=to_jsonable(inputs),
        result=to_jsonable(result),
        artifacts=sorted(artifacts or []),
    )


# ============================================================
# JSON EXPORT
# ============================================================

def export_to_json(envelope: ResultEnvelope) -> str:
    """Canonical JSON: identical envelopes give byte-identical text."""
    payload = to_jsonable(envelope.model_dump())
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False) + "\n"


# ============================================================
# MARKDOWN EXPORT
# ============================================================

def _scalar_items(data: Dict[str, Any]):
    for key in sorted(data):
        value = data[key]
        if isinstance(value, dict):
            continue
        if isinstance(value, list) and len(value) > 8:
            yield key, f"[{len(value)} values]"
        else:
            yield key, value


def _nested_items(data: Dict[str, Any]):
    for key in sorted(data):
        if isinstance(data[key], dict):
            yield key, data[key]


def export_to_markdown(envelope: ResultEnvelope) -> str:
    """
    Export a result envelope to Markdown.

    Args:
        envelope: result of one command

    Returns:
        Markdown string with inputs, results and artifacts
    """
    md_parts = [
        f"# Result: {envelope.command}",
        "",
        f"**Schema version:** {envelope.schema_version}",
        "",
        "## Inputs",
        "",
    ]
    for key, value in _scalar_items(envelope.inputs):
        md_parts.append(f"- **{key}:** {value}")
    md_parts.append("")

    md_parts.append("## Result")
    md_parts.append("")
    for key, value in _scalar_items(envelope.result):
        md_parts.append(f"- **{key}:** {value}")
    for section, values in _nested_items(envelope.result):
        md_parts.append("")
        md_parts.append(f"### {section}")
        md_parts.append("")
        for key, value in _scalar_items(values):
            md_parts.append(f"- **{key}:** {value}")
    md_parts.append("")

    if envelope.artifacts:
        md_parts.append("## Artifacts")
        md_parts.append("")
        for artifact in envelope.artifacts:
            md_parts.append(f"- `{artifact}`")
        md_parts.append("")
    return "\n".join(md_parts)


# ============================================================
# PLAIN TEXT EXPORT
# ============================================================

def export_to_text(envelope: ResultEnvelope) -> str:
    """Export a result envelope to plain text."""
    text_parts = [
        "=" * 70,
        f"RESULT: {envelope.command.upper()}",
        "=" * 70,
        "",
        "-" * 70,
        "INPUTS",
        "-" * 70,
    ]
    for key, value in _scalar_items(envelope.inputs):
        text_parts.append(f"  {key}: {value}")
    text_parts.append("")
    text_parts.append("-" * 70)
    text_parts.append("RESULT")
    text_parts.append("-" * 70)
    for key, value in _scalar_items(envelope.result):
        text_parts.append(f"  {key}: {value}")
    for section, values in _nested_items(envelope.result):
        text_parts.append(f"  [{section}]")
        for key, value in _scalar_items(values):
            text_parts.append(f"    {key}: {value}")
    if envelope.artifacts:
        text_parts.append("")
        text_parts.append("-" * 70)
        text_parts.append("ARTIFACTS")
        text_parts.append("-" * 70)
        for artifact in envelope.artifacts:
            text_parts.append(f"  • {artifact}")
    text_parts.append("=" * 70)
    return "\n".join(text_parts) + "\n"


# ============================================================
# PLOT DATA
# ============================================================

def export_plot_csv(x, y, band_lo=None, band_hi=None) -> str:
    """CSV plot data; without a band both band columns repeat y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lo = y if band_lo is None else np.asarray(band_lo, dtype=float)
    hi = y if band_hi is None else np.asarray(band_hi, dtype=float)
    if not (x.shape == y.shape == lo.shape == hi.shape):
        raise InvalidParameterError("plot columns must have equal length")
    rows = [PLOT_CSV_HEADER]
    rows.extend(f"{a!r},{b!r},{c!r},{d!r}" for a, b, c, d in zip(x.tolist(), y.tolist(), lo.tolist(), hi.tolist()))
    return "\n".join(rows) + "\n"


def export_plot_svg(x, y, band_lo=None, band_hi=None, *, xlabel: str = "x", ylabel: str = "y",
                    title: str = "") -> str:
    """Static SVG of a curve and its band; deterministic output."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "coherence", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        if band_lo is not None and band_hi is not None:
            ax.fill_between(x, band_lo, band_hi, color="#1A5490", alpha=0.25, linewidth=0)
        ax.plot(x, y, color="#0D3B66", linewidth=1.2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buffer.getvalue()


# ============================================================
# MAIN EXPORT FUNCTION
# ============================================================

def export_analysis(envelope: ResultEnvelope, format: str) -> str:
    """
    Export a result envelope to the requested format.

    Args:
        envelope: result of one command
        format: 'json', 'markdown' or 'text'

    Raises:
        InvalidParameterError: If format is not supported
    """
    format_lower = format.lower()

    if format_lower == "json":
        return export_to_json(envelope)
    elif format_lower in ("markdown", "md"):
        return export_to_markdown(envelope)
    elif format_lower in ("text", "txt"):
        return export_to_text(envelope)
    else:
        raise InvalidParameterError(f"Unsupported export format: {format}. Supported formats: json, markdown, text")
