"""
app.py — FastAPI entrypoint for the emitter coherence toolkit
-------------------------------------------------------------
HTTP access to the same analyses the CLI runs.

Endpoints:
  POST   /g2                →  model g²(τ) with spectral diffusion
  POST   /diffusion-rate    →  lower bound on the diffusion rate
  POST   /classify          →  driving regime of one power series
  POST   /classify/batch    →  several temperatures + coherence bracket
  POST   /correlation/fit   →  fit Ω, Γ⊥ to an uploaded histogram CSV
  GET    /analytics         →  cache statistics and uptime
  DELETE /cache             →  clear numeric caches
  GET    /, /api, /health   →  service information
"""

import asyncio
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from fastapi import BackgroundTasks, FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.gzip import GZipMiddleware
from fastapi.responses import FileResponse, PlainTextResponse
from pydantic import BaseModel, Field

from bloch_dynamics import lambda_pair
from cache_manager import clear_cache, get_cache_stats
from data_io import load_correlation_csv
from emitter_types import (
    DetuningDistribution, EmitterParams, InvalidParameterError, NumericalError, to_angular,
)
from export_manager import export_analysis, make_envelope
from fit_engine import fit_g2
from linewidth_models import diffusion_rate
from pdf_generator import generate_pdf_report
from regime_classifier import PowerEntry, PowerSeries, classify, coherence_temperature_bracket
from spectral_diffusion import CorrelationKernel, QuadratureSpec, contrast_reduction, g2_diffused

# ============================================================
# App Setup
# ============================================================

app = FastAPI(
    title="Emitter Coherence Toolkit",
    description="""
## Optical coherence of a resonantly driven two-level emitter

- Second-order correlation g²(τ) with quasi-static spectral diffusion
- Correlation-curve fitting for Rabi frequency and dephasing rate
- Driving-regime classification from power series
- Spectral diffusion rate estimate

All frequencies in requests and responses are ordinary frequencies in Hz.
    """,
    version="1.0.0",
    docs_url="/docs",
    redoc_url="/redoc",
)

app.add_middleware(GZipMiddleware, minimum_size=1000)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("coherence.api")

# CPU-bound numerics run off the event loop
executor = ThreadPoolExecutor(max_workers=4)

APP_START_TIME = time.time()
REQUEST_COUNT = 0

MAX_BATCH = 10
MAX_CURVE_POINTS = 20001


# ============================================================
# Pydantic Models for Request Validation
# ============================================================

OutputFormat = Literal["json", "markdown", "text", "pdf"]


class EmitterRequest(BaseModel):
    gamma_hz: float = Field(109e6, gt=0, description="decay rate Γ/2π (defaults to the Fourier limit)")
    gamma_c_hz: float = Field(0.0, ge=0, json_schema_extra={"example": 30e6})
    omega_hz: float = Field(..., ge=0, json_schema_extra={"example": 300e6})
    delta_hz: float = Field(0.0, json_schema_extra={"example": 0.0})

    def to_params(self) -> EmitterParams:
        return EmitterParams.from_hz(self.gamma_hz, self.gamma_c_hz, self.omega_hz, self.delta_hz)


class G2Request(BaseModel):
    emitter: EmitterRequest
    sigma_fwhm_hz: float = Field(0.0, ge=0, description="FWHM of the detuning distribution")
    tau_s: List[float] = Field(..., min_length=1, max_length=MAX_CURVE_POINTS)
    kernel: CorrelationKernel = CorrelationKernel.SUBSTITUTION
    quadrature_nodes: int = Field(64, ge=3, le=512)

    model_config = {
        "json_schema_extra": {
            "examples": [{
                "emitter": {"gamma_hz": 109e6, "gamma_c_hz": 30e6, "omega_hz": 300e6},
                "sigma_fwhm_hz": 100e6,
                "tau_s": [0.0, 1e-9, 2e-9, 5e-9],
            }]
        }
    }


class DiffusionRateRequest(BaseModel):
    scan_speed_hz_per_s: float = Field(..., json_schema_extra={"example": 890e6})
    ftl_linewidth_hz: float = Field(..., json_schema_extra={"example": 109e6})
    single_scan_linewidth_hz: float = Field(..., json_schema_extra={"example": 112e6})


class PowerEntryRequest(BaseModel):
    power_w: float = Field(..., ge=0)
    rabi_hz: float
    rabi_sigma_hz: float = Field(..., gt=0)
    gamma_perp_hz: float
    gamma_perp_sigma_hz: float = Field(..., gt=0)


class ClassifyRequest(BaseModel):
    temperature_k: float = Field(..., gt=0, json_schema_extra={"example": 5.0})
    entries: List[PowerEntryRequest] = Field(..., min_length=2)
    gamma_hz: Optional[float] = Field(None, gt=0, description="decay rate Γ/2π; Fourier limit when omitted")
    requested_output: OutputFormat = "json"

    def to_series(self) -> PowerSeries:
        entries = [
            PowerEntry(
                power=e.power_w,
                omega=to_angular(e.rabi_hz),
                omega_sigma=to_angular(e.rabi_sigma_hz),
                gamma_perp=to_angular(e.gamma_perp_hz),
                gamma_perp_sigma=to_angular(e.gamma_perp_sigma_hz),
            )
            for e in sorted(self.entries, key=lambda e: e.power_w)
        ]
        return PowerSeries(temperature=self.temperature_k, entries=entries)


class BatchClassifyRequest(BaseModel):
    series: List[ClassifyRequest] = Field(..., min_length=1, max_length=MAX_BATCH)


class AnalysisResponse(BaseModel):
    status: str
    data: Dict[str, Any]


class BatchClassifyResponse(BaseModel):
    status: str
    results: List[Dict[str, Any]]
    bracket: Optional[Dict[str, Any]]
    processing_time_seconds: float
    total: int
    successful: int
    failed: int


class AnalyticsResponse(BaseModel):
    total_requests: int
    cache_stats: Dict[str, int]
    uptime_seconds: float


# ============================================================
# Helpers
# ============================================================

async def _run(func, *args):
    """Run numerics in the thread pool, mapping toolkit errors to HTTP codes."""
    global REQUEST_COUNT
    REQUEST_COUNT += 1
    loop = asyncio.get_running_loop()
    try:
        return await loop.run_in_executor(executor, func, *args)
    except InvalidParameterError as error:
        logger.warning(f"Validation error: {error}")
        raise HTTPException(status_code=400, detail=str(error))
    except NumericalError as error:
        logger.error(f"Numerical failure: {error}")
        raise HTTPException(status_code=500, detail=f"Numerical failure: {error}")


def _export(command: str, inputs: Dict[str, Any], result: Any, output: str, background_tasks: BackgroundTasks):
    envelope = make_envelope(command, inputs, result)
    if output == "pdf":
        with tempfile.NamedTemporaryFile(delete=False, suffix=".pdf") as temp_file:
            pdf_path = temp_file.name
        generate_pdf_report([envelope], pdf_path)
        background_tasks.add_task(os.remove, pdf_path)
        filename = f"{command}.pdf"
        return FileResponse(pdf_path, media_type="application/pdf", filename=filename,
                            headers={"Content-Disposition": f'attachment; filename="{filename}"'})
    if output in ("markdown", "text"):
        media = "text/markdown" if output == "markdown" else "text/plain"
        return PlainTextResponse(export_analysis(envelope, output), media_type=media)
    return {"status": "success", "data": envelope.result}


# ============================================================
# Routes
# ============================================================

@app.get("/", tags=["System"], summary="Welcome")
async def root():
    return {
        "message": "Emitter coherence toolkit API",
        "usage": "POST /g2, /classify or /correlation/fit with JSON or CSV bodies",
        "documentation": "/docs",
    }


@app.get("/api", tags=["System"], summary="API Information")
async def api_info():
    return {
        "name": "Emitter Coherence Toolkit",
        "version": "1.0.0",
        "endpoints": {
            "g2": "POST /g2",
            "diffusion_rate": "POST /diffusion-rate",
            "classify": "POST /classify",
            "classify_batch": "POST /classify/batch",
            "correlation_fit": "POST /correlation/fit",
            "analytics": "GET /analytics",
            "health": "GET /health",
        },
        "units": "Hz (ordinary frequency), seconds, watts, kelvin",
        "supported_outputs": ["json", "markdown", "text", "pdf"],
        "max_batch": MAX_BATCH,
    }


@app.get("/health", tags=["System"], summary="Health Check")
async def health_check():
    return {"status": "ok", "service": "emitter-coherence"}


@app.post("/g2", tags=["Correlation"], summary="Model g2(tau)", response_model=AnalysisResponse)
async def model_g2(request: G2Request):
    """g²(τ) averaged over a Gaussian detuning distribution, plus the damping regime."""

    def compute():
        params = request.emitter.to_params()
        dist = DetuningDistribution.from_fwhm_hz(request.sigma_fwhm_hz) if request.sigma_fwhm_hz > 0 \
            else DetuningDistribution(sigma=0.0)
        quad = QuadratureSpec(node_count=request.quadrature_nodes)
        tau = np.asarray(request.tau_s, dtype=float)
        g2 = np.atleast_1d(g2_diffused(params, dist, tau, quad, kernel=request.kernel))
        pair = lambda_pair(params)
        return {
            "tau_s": tau.tolist(),
            "g2": g2.tolist(),
            "regime": pair.regime.value,
            "lambda": pair.to_dict(),
            "contrast_reduction": contrast_reduction(params, dist, quad, kernel=request.kernel),
        }

    data = await _run(compute)
    logger.info(f"g2 evaluated at {len(request.tau_s)} delays")
    return {"status": "success", "data": make_envelope("simulate-g2", request.model_dump(mode="json"), data).result}


@app.post("/diffusion-rate", tags=["Models"], summary="Spectral diffusion rate", response_model=AnalysisResponse)
async def estimate_diffusion_rate(request: DiffusionRateRequest):
    rate = await _run(diffusion_rate, request.scan_speed_hz_per_s, request.ftl_linewidth_hz,
                      request.single_scan_linewidth_hz)
    return {"status": "success", "data": {"diffusion_rate_hz": rate, "lower_bound": True}}


def _classify(request: ClassifyRequest):
    gamma = None if request.gamma_hz is None else to_angular(request.gamma_hz)
    return classify(request.to_series(), gamma)


@app.post("/classify", tags=["Classifier"], summary="Driving regime of a power series", responses={
    200: {"description": "Regime report"},
    400: {"description": "Invalid series"},
    500: {"description": "Numerical failure"},
})
async def classify_series(request: ClassifyRequest, background_tasks: BackgroundTasks):
    """
    Fit Γ⊥ against Ω for one temperature and classify the slope.

    Use ``requested_output`` = ``markdown``, ``text`` or ``pdf`` for a
    formatted report instead of JSON.
    """
    report = await _run(_classify, request)
    inputs = request.model_dump(mode="json", exclude={"requested_output"})
    return _export("classify", inputs, report, request.requested_output, background_tasks)


@app.post("/classify/batch", tags=["Classifier"], summary="Classify several temperatures",
          response_model=BatchClassifyResponse)
async def classify_batch(request: BatchClassifyRequest):
    """Classify each series concurrently and bracket the loss of coherent driving."""
    start_time = time.time()

    async def process_single(item: ClassifyRequest, index: int):
        try:
            report = await _run(_classify, item)
            return index, report, {"index": index, "status": "success", "data": report.to_dict()}
        except HTTPException as e:
            logger.error(f"Error classifying series {index}: {e.detail}")
            return index, None, {"index": index, "status": "error", "error": e.detail}

    outcomes = await asyncio.gather(*(process_single(item, i) for i, item in enumerate(request.series)))
    reports = [report for _, report, _ in outcomes if report is not None]
    results = [entry for _, _, entry in outcomes]
    bracket = coherence_temperature_bracket(reports).to_dict() if reports else None
    successful = len(reports)
    processing_time = time.time() - start_time
    logger.info(f"Batch classification completed: {successful} successful, "
                f"{len(results) - successful} failed, {processing_time:.2f}s")
    return {
        "status": "completed",
        "results": results,
        "bracket": bracket,
        "processing_time_seconds": round(processing_time, 2),
        "total": len(results),
        "successful": successful,
        "failed": len(results) - successful,
    }


@app.post("/correlation/fit", tags=["Correlation"], summary="Fit an uploaded correlation histogram",
          response_model=AnalysisResponse)
async def fit_correlation(
    file: UploadFile = File(..., description="CSV with header tau_s,counts"),
    gamma_hz: float = Form(109e6, gt=0),
    sigma_fwhm_hz: float = Form(0.0, ge=0),
    kernel: CorrelationKernel = Form(CorrelationKernel.SUBSTITUTION),
):
    content = await file.read()
    with tempfile.NamedTemporaryFile(delete=False, suffix=".csv") as temp_file:
        temp_file.write(content)
        csv_path = temp_file.name

    def compute():
        curve = load_correlation_csv(csv_path)
        sigma = DetuningDistribution.from_fwhm_hz(sigma_fwhm_hz).sigma if sigma_fwhm_hz > 0 else 0.0
        return fit_g2(curve, {"gamma": to_angular(gamma_hz), "sigma": sigma}, kernel=kernel)

    try:
        result = await _run(compute)
    finally:
        os.remove(csv_path)
    logger.info(f"Fitted correlation histogram {file.filename}: regime {result.regime.value}")
    inputs = {"filename": file.filename, "gamma_hz": gamma_hz, "sigma_fwhm_hz": sigma_fwhm_hz, "kernel": kernel}
    return {"status": "success", "data": make_envelope("fit-g2", inputs, result).result}


@app.get("/analytics", tags=["System"], summary="System Analytics", response_model=AnalyticsResponse)
async def get_analytics():
    return {
        "total_requests": REQUEST_COUNT,
        "cache_stats": get_cache_stats(),
        "uptime_seconds": round(time.time() - APP_START_TIME, 2),
    }


@app.delete("/cache", tags=["System"], summary="Clear Cache")
async def clear_system_cache():
    """Clear memoized quadrature rules and waiting-time tables."""
    clear_cache()
    logger.info("Cache cleared via API request")
    return {"status": "success", "message": "Cache cleared successfully"}
