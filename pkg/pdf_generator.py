"""
pdf_generator.py — PDF summary of coherence analysis results
-------------------------------------------------------------
Lays out one section per result envelope (inputs, headline values,
artifacts) on letter pages. Output is invariant: rerunning on the same
envelopes gives the same bytes.
"""

from reportlab.lib.pagesizes import LETTER
from reportlab.pdfgen import canvas
from reportlab.lib.units import inch
from reportlab.lib import colors
import logging
from typing import Any, Dict, List, Sequence
from textwrap import wrap

from export_manager import ResultEnvelope

logger = logging.getLogger("coherence.pdf")

# ============================================================
# CONFIGURATION — LAYOUT SETTINGS
# ============================================================

LAYOUT = {
    "title": "Emitter Coherence Report",
    "subtitle": "Photon correlation, spectral diffusion and driving regimes",
    "footer_note": "Generated by the emitter coherence toolkit",
    "accent_color": colors.HexColor("#0D3B66"),
}

MAX_LIST_ITEMS = 6


# ============================================================
# DRAWING HELPERS
# ============================================================

def _draw_header(pdf_canvas: canvas.Canvas, width: float, height: float):
    accent = LAYOUT["accent_color"]
    pdf_canvas.setFillColor(accent)
    pdf_canvas.rect(0, height - 1.0 * inch, width, 1.0 * inch, fill=True, stroke=False)
    pdf_canvas.setFillColor(colors.white)
    pdf_canvas.setFont("Helvetica-Bold", 16)
    pdf_canvas.drawString(1 * inch, height - 0.75 * inch, LAYOUT["title"])
    pdf_canvas.setFont("Helvetica", 10)
    pdf_canvas.drawString(1 * inch, height - 0.95 * inch, LAYOUT["subtitle"])
    pdf_canvas.setFillColor(colors.black)


def _draw_footer(pdf_canvas: canvas.Canvas, width: float):
    pdf_canvas.setFont("Helvetica-Oblique", 9)
    pdf_canvas.setFillColor(colors.grey)
    pdf_canvas.drawString(1 * inch, 0.7 * inch, LAYOUT["footer_note"])
    pdf_canvas.drawRightString(width - 0.5 * inch, 0.7 * inch, f"Page {pdf_canvas.getPageNumber()}")
    pdf_canvas.setFillColor(colors.black)


def _new_page(pdf_canvas: canvas.Canvas) -> float:
    _draw_footer(pdf_canvas, LETTER[0])
    pdf_canvas.showPage()
    _draw_header(pdf_canvas, *LETTER)
    return LETTER[1] - 1.5 * inch


def _draw_section(pdf_canvas: canvas.Canvas, title: str, y_position: float) -> float:
    if y_position < 1.5 * inch:
        y_position = _new_page(pdf_canvas)
    pdf_canvas.setFont("Helvetica-Bold", 13)
    pdf_canvas.setFillColor(LAYOUT["accent_color"])
    pdf_canvas.drawString(1 * inch, y_position, title)
    pdf_canvas.setFillColor(colors.black)
    return y_position - 18


def _draw_paragraph(pdf_canvas: canvas.Canvas, text: str, y_position: float, max_width=500, line_height=14) -> float:
    lines = wrap(text, width=int(max_width / 7)) or [""]
    for line in lines:
        if y_position < 1 * inch:
            y_position = _new_page(pdf_canvas)
        pdf_canvas.setFont("Helvetica", 11)
        pdf_canvas.drawString(1 * inch, y_position, line)
        y_position -= line_height
    return y_position - 6


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, list):
        if len(value) > MAX_LIST_ITEMS:
            return f"[{len(value)} values]"
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{k}: {_format_value(v)}" for k, v in sorted(value.items())) + "}"
    return str(value)


def _summary_lines(data: Dict[str, Any]) -> List[str]:
    return [f"{key}: {_format_value(data[key])}" for key in sorted(data)]


# ============================================================
# MAIN GENERATOR
# ============================================================

def generate_pdf_report(envelopes: Sequence[ResultEnvelope], output_path: str) -> str:
    """Write a multi-section PDF with one section per result envelope."""
    logger.info(f"Generating PDF report → {output_path}")
    pdf_canvas = canvas.Canvas(output_path, pagesize=LETTER, invariant=True)
    width, height = LETTER

    _draw_header(pdf_canvas, width, height)
    y_position = height - 1.4 * inch

    pdf_canvas.setFont("Helvetica-Bold", 14)
    pdf_canvas.drawString(1 * inch, y_position, f"Results: {len(envelopes)} command(s)")
    y_position -= 25

    for envelope in envelopes:
        y_position = _draw_section(pdf_canvas, envelope.command, y_position)
        if envelope.inputs:
            y_position = _draw_paragraph(pdf_canvas, "Inputs", y_position)
            for line in _summary_lines(envelope.inputs):
                y_position = _draw_paragraph(pdf_canvas, f"  {line}", y_position)
        y_position = _draw_paragraph(pdf_canvas, "Result", y_position)
        for line in _summary_lines(envelope.result):
            y_position = _draw_paragraph(pdf_canvas, f"  {line}", y_position)
        for artifact in envelope.artifacts:
            y_position = _draw_paragraph(pdf_canvas, f"• {artifact}", y_position)

    _draw_footer(pdf_canvas, width)
    pdf_canvas.save()
    logger.info(f"PDF report saved successfully → {output_path}")
    return output_path
