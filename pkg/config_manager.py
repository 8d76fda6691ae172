"""
config_manager.py — Toolkit configuration
-----------------------------------------
A flat TOML file of documented keys, validated into a frozen pydantic
model. Only the output directory can be overridden from the environment
(``COHERENCE_OUTPUT_DIR``).

Example::

    ftl_linewidth_hz = 109e6
    quadrature_scheme = "gauss_hermite"
    quadrature_nodes = 64
    seed = 20240601
    output_dir = "results"
"""

import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from emitter_types import FTL_LINEWIDTH_HZ, DataFormatError, InvalidParameterError, to_angular
from spectral_diffusion import QuadratureScheme, QuadratureSpec

logger = logging.getLogger("coherence.config")

OUTPUT_DIR_ENV = "COHERENCE_OUTPUT_DIR"


class Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    ftl_linewidth_hz: float = Field(FTL_LINEWIDTH_HZ, gt=0)
    decay_rate_hz: Optional[float] = Field(None, gt=0, description="explicit Γ/2π; overrides ftl_linewidth_hz")
    quadrature_scheme: QuadratureScheme = QuadratureScheme.GAUSS_HERMITE
    quadrature_nodes: int = Field(64, ge=3)
    quadrature_range_sigmas: float = Field(8.0, gt=0)
    quadrature_rtol: float = Field(1e-8, gt=0)
    quadrature_auto_refine: bool = True
    solver_xtol: float = Field(1e-8, gt=0)
    solver_ftol: float = Field(1e-10, gt=0)
    solver_max_iter: int = Field(500, gt=0)
    ode_rtol: float = Field(1e-9, gt=0)
    ode_atol: float = Field(1e-12, gt=0)
    sigma_level: float = Field(2.0, gt=0)
    bin_width_s: float = Field(160e-12, gt=0)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    output_dir: Path = Path("results")

    def decay_rate(self) -> float:
        """Γ in rad/s."""
        return to_angular(self.decay_rate_hz if self.decay_rate_hz is not None else self.ftl_linewidth_hz)

    def quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(
            node_count=self.quadrature_nodes,
            scheme=self.quadrature_scheme,
            range_sigmas=self.quadrature_range_sigmas,
            rtol=self.quadrature_rtol,
            auto_refine=self.quadrature_auto_refine,
        )

    def solver_options(self) -> dict:
        return {"xtol": self.solver_xtol, "ftol": self.solver_ftol, "max_iter": self.solver_max_iter}

    def require_seed(self, override: Optional[int] = None) -> int:
        """The seed for a stochastic command: ``override`` first, then the config."""
        seed = override if override is not None else self.seed
        if seed is None:
            raise InvalidParameterError("this command is stochastic: set 'seed' in the config or pass --seed")
        if not 0 <= seed < 2 ** 64:
            raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        return int(seed)


def _with_env(values: dict) -> dict:
    override = os.getenv(OUTPUT_DIR_ENV)
    if override:
        values = {**values, "output_dir": override}
    return values


def load_config(path: Optional[Union[str, Path]] = None) -> Config:
    """
    Load configuration from a TOML file, or defaults when ``path`` is None.

    Raises:
        DataFormatError: unreadable TOML or nested tables
        InvalidParameterError: unknown keys or out-of-range values
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as handle:
                values = tomllib.load(handle)
        except FileNotFoundError:
            raise InvalidParameterError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise DataFormatError(f"{path}: {exc}") from None
        nested = [k for k, v in values.items() if isinstance(v, dict)]
        if nested:
            raise DataFormatError(f"{path}: config keys must be flat, found table(s): {', '.join(nested)}")

    try:
        config = Config(**_with_env(values))
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        raise InvalidParameterError(f"invalid configuration: {problems}") from None
    logger.debug("configuration: %s", config.model_dump())
    return config
