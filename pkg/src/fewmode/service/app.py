"""HTTP service wrapping the command runner.

POST /run/{command} takes an ExperimentConfig as JSON, executes the
command synchronously and returns the output listing with checksums and
a result summary.  Outputs land in the config's output_dir on the host
running the service.  Errors come back as a structured record whose
`kind` mirrors the CLI exit codes: config, numerical or io.
"""

from __future__ import annotations

from enum import Enum
from typing import Any, Literal

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

import fewmode
from fewmode.config import ExperimentConfig
from fewmode.errors import ConfigurationError, NumericalError
from fewmode.runner import run_command


class CommandName(str, Enum):
    ANALYZE_FORCING = "analyze-forcing"
    SIMULATE = "simulate"
    MALLIAVIN = "malliavin"
    TAIL = "tail"
    ERGODIC = "ergodic"
    DENSITY = "density"
    GRADIENT = "gradient"


class OutputFile(BaseModel):
    name: str
    sha256: str


class RunResponse(BaseModel):
    command: str
    status: Literal["ok"] = "ok"
    output_dir: str
    outputs: list[OutputFile]
    summary: dict[str, Any]


class ErrorRecord(BaseModel):
    kind: Literal["config", "numerical", "io"]
    message: str
    details: list[str] = []


def _error_response(status_code: int, kind: str, message: str, details=None) -> JSONResponse:
    record = ErrorRecord(kind=kind, message=message, details=details or [])
    return JSONResponse(status_code=status_code, content={"error": record.model_dump()})


def create_app() -> FastAPI:
    app = FastAPI(
        title="fewmode",
        version=fewmode.__version__,
        description="Spectral Galerkin vorticity simulation and noise-spread diagnostics",
    )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": fewmode.__version__}

    @app.post("/run/{command}", response_model=RunResponse)
    def run(command: CommandName, config: ExperimentConfig):
        try:
            outcome = run_command(command.value, config)
        except ConfigurationError as err:
            return _error_response(422, "config", str(err), err.details)
        except NumericalError as err:
            return _error_response(500, "numerical", str(err))
        except OSError as err:
            return _error_response(500, "io", str(err))
        return RunResponse(
            command=outcome.command,
            output_dir=outcome.output_dir,
            outputs=[OutputFile(name=n, sha256=h) for n, h in outcome.outputs],
            summary=outcome.summary,
        )

    return app


app = create_app()
