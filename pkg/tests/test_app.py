"""
Integration tests for app.py
----------------------------
Uses FastAPI TestClient to simulate API requests and validate responses.
"""

import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app import app
from bloch_dynamics import g2_resonant
from emitter_types import EmitterParams

client = TestClient(app)

GAMMA_HZ = 109e6


def power_entries(slope, offset_hz=0.5 * GAMMA_HZ, slope_sigma=0.14):
    """Four entries whose dephasing fit has the given slope and slope error."""
    rabi = [100e6, 200e6, 300e6, 400e6]
    spread = sum((r - 250e6) ** 2 for r in rabi)
    return [
        {
            "power_w": i * 1e-6,
            "rabi_hz": r,
            "rabi_sigma_hz": 5e6,
            "gamma_perp_hz": offset_hz + slope * r,
            "gamma_perp_sigma_hz": slope_sigma * math.sqrt(spread),
        }
        for i, r in enumerate(rabi, start=1)
    ]


# ============================================================
# SYSTEM ROUTES
# ============================================================

def test_root_endpoint():
    """GET / should describe the service."""
    res = client.get("/")
    assert res.status_code == 200
    assert "coherence" in res.json()["message"]


def test_api_info():
    """GET /api should list the endpoints and units."""
    body = client.get("/api").json()
    assert body["endpoints"]["g2"] == "POST /g2"
    assert "pdf" in body["supported_outputs"]


def test_health_check():
    """GET /health should return ok."""
    res = client.get("/health")
    assert res.status_code == 200
    assert res.json() == {"status": "ok", "service": "emitter-coherence"}


# ============================================================
# MODEL ROUTES
# ============================================================

def test_g2_without_diffusion():
    """POST /g2 should return an antibunched oscillatory curve."""
    payload = {
        "emitter": {"gamma_hz": GAMMA_HZ, "gamma_c_hz": 20e6, "omega_hz": 300e6},
        "tau_s": [0.0, 1e-9, 2e-9, 50e-9],
    }
    res = client.post("/g2", json=payload)
    assert res.status_code == 200
    data = res.json()["data"]
    assert abs(data["g2"][0]) < 1e-9
    assert data["g2"][-1] == pytest.approx(1.0, abs=1e-6)
    assert data["regime"] == "oscillatory"
    assert data["contrast_reduction"] == 1.0


def test_g2_with_diffusion_reduces_contrast():
    """A finite detuning spread lowers the oscillation contrast."""
    payload = {
        "emitter": {"gamma_c_hz": 20e6, "omega_hz": 300e6},
        "sigma_fwhm_hz": 400e6,
        "tau_s": [0.0, 1e-9],
        "kernel": "bloch",
    }
    res = client.post("/g2", json=payload)
    assert res.status_code == 200
    assert 0.0 < res.json()["data"]["contrast_reduction"] < 1.0


def test_g2_rejects_negative_rabi_frequency():
    """Field constraints are enforced before any numerics run."""
    res = client.post("/g2", json={"emitter": {"omega_hz": -1.0}, "tau_s": [0.0]})
    assert res.status_code == 422


def test_diffusion_rate():
    """POST /diffusion-rate should return the lower bound in Hz."""
    payload = {"scan_speed_hz_per_s": 890e6, "ftl_linewidth_hz": 109e6, "single_scan_linewidth_hz": 112e6}
    res = client.post("/diffusion-rate", json=payload)
    assert res.status_code == 200
    assert res.json()["data"]["diffusion_rate_hz"] == pytest.approx(8.39, abs=0.01)


def test_diffusion_rate_invalid_input():
    """Toolkit validation errors map to 400."""
    payload = {"scan_speed_hz_per_s": 890e6, "ftl_linewidth_hz": 0.0, "single_scan_linewidth_hz": 112e6}
    res = client.post("/diffusion-rate", json=payload)
    assert res.status_code == 400


# ============================================================
# CLASSIFIER ROUTES
# ============================================================

def test_classify_json_response():
    """POST /classify should return the regime report."""
    payload = {"temperature_k": 20.0, "entries": power_entries(0.55), "gamma_hz": GAMMA_HZ}
    res = client.post("/classify", json=payload)
    assert res.status_code == 200
    body = res.json()
    assert body["status"] == "success"
    assert body["data"]["regime"] == "coherent_pi2_only"
    assert body["data"]["slope_m"] == pytest.approx(0.55, abs=1e-9)


def test_classify_markdown_response():
    """Markdown output comes back as text."""
    payload = {"temperature_k": 20.0, "entries": power_entries(0.55), "requested_output": "markdown"}
    res = client.post("/classify", json=payload)
    assert res.status_code == 200
    assert res.headers["content-type"].startswith("text/markdown")
    assert "classify" in res.text


def test_classify_pdf_response():
    """POST /classify with PDF output should return a PDF file."""
    payload = {"temperature_k": 5.0, "entries": power_entries(0.0, slope_sigma=0.1), "requested_output": "pdf"}
    res = client.post("/classify", json=payload)
    assert res.status_code == 200
    assert res.headers["content-type"] == "application/pdf"
    assert res.content.startswith(b"%PDF")


def test_classify_needs_two_entries():
    """A single power point cannot be fitted."""
    payload = {"temperature_k": 5.0, "entries": power_entries(0.0)[:1]}
    res = client.post("/classify", json=payload)
    assert res.status_code == 422


def test_classify_batch_with_bracket():
    """POST /classify/batch should classify each series and bracket the temperatures."""
    payload = {
        "series": [
            {"temperature_k": 5.0, "entries": power_entries(0.0, slope_sigma=0.1), "gamma_hz": GAMMA_HZ},
            {"temperature_k": 20.0, "entries": power_entries(0.55), "gamma_hz": GAMMA_HZ},
            {"temperature_k": 30.0, "entries": power_entries(2.3, slope_sigma=0.6), "gamma_hz": GAMMA_HZ},
        ]
    }
    res = client.post("/classify/batch", json=payload)
    assert res.status_code == 200
    body = res.json()
    assert body["status"] == "completed"
    assert (body["total"], body["successful"], body["failed"]) == (3, 3, 0)
    assert body["bracket"]["warmest_coherent_k"] == 20.0
    assert body["bracket"]["coldest_incoherent_k"] == 30.0


def test_classify_batch_reports_failed_series():
    """A degenerate series fails on its own without sinking the batch."""
    flat = power_entries(0.0)
    for entry in flat:
        entry["rabi_hz"] = 100e6
    payload = {
        "series": [
            {"temperature_k": 5.0, "entries": power_entries(0.0, slope_sigma=0.1)},
            {"temperature_k": 10.0, "entries": flat},
        ]
    }
    body = client.post("/classify/batch", json=payload).json()
    assert (body["successful"], body["failed"]) == (1, 1)
    assert body["results"][1]["status"] == "error"


# ============================================================
# CORRELATION UPLOAD
# ============================================================

def test_correlation_fit_upload():
    """POST /correlation/fit should recover Ω and Γ⊥ from a clean histogram."""
    params = EmitterParams.from_hz(GAMMA_HZ, 20e6, 300e6)
    tau = np.arange(-125, 126) * 160e-12
    counts = 1000.0 * g2_resonant(params, tau)
    csv_text = "tau_s,counts\n" + "\n".join(f"{t!r},{c!r}" for t, c in zip(tau, counts)) + "\n"

    res = client.post(
        "/correlation/fit",
        files={"file": ("g2.csv", csv_text.encode(), "text/csv")},
        data={"gamma_hz": str(GAMMA_HZ)},
    )
    assert res.status_code == 200
    data = res.json()["data"]
    assert data["regime"] == "oscillatory"
    assert data["omega_hz"] == pytest.approx(300e6, rel=1e-3)
    assert data["gamma_perp_hz"] == pytest.approx(0.5 * GAMMA_HZ + 20e6, rel=1e-3)


def test_correlation_fit_bad_csv():
    """Malformed uploads are rejected with 400."""
    res = client.post("/correlation/fit", files={"file": ("g2.csv", b"time,counts\n0,1\n", "text/csv")})
    assert res.status_code == 400


# ============================================================
# ANALYTICS
# ============================================================

def test_analytics_and_cache_clear():
    """GET /analytics reports counters; DELETE /cache empties the caches."""
    client.post("/g2", json={"emitter": {"omega_hz": 300e6}, "sigma_fwhm_hz": 100e6, "tau_s": [0.0]})
    body = client.get("/analytics").json()
    assert body["total_requests"] >= 1
    assert body["uptime_seconds"] >= 0

    res = client.delete("/cache")
    assert res.status_code == 200
    assert client.get("/analytics").json()["cache_stats"]["size"] == 0
