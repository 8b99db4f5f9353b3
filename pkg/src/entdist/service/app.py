"""FastAPI application wrapping the core package."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..exceptions import EntdistError
from . import core
from .models import (RunRequest, RunResponse, RwaSolveRequest, RwaSolveResponse,
                     ValidateTopologyRequest, ValidateTopologyResponse,
                     VersionResponse)


def create_app() -> FastAPI:
    app = FastAPI(title="entdist", description="Entanglement-distribution "
                  "control plane and simulator")

    @app.post("/topology/validate", response_model=ValidateTopologyResponse)
    def validate_topology(req: ValidateTopologyRequest) -> ValidateTopologyResponse:
        return core.validate_topology_op(req)

    @app.post("/rwa/solve", response_model=RwaSolveResponse)
    def rwa_solve(req: RwaSolveRequest) -> RwaSolveResponse:
        try:
            return core.rwa_solve_op(req)
        except EntdistError as err:
            raise HTTPException(status_code=400, detail=str(err)) from err

    @app.post("/simulation/run", response_model=RunResponse)
    def simulation_run(req: RunRequest) -> RunResponse:
        try:
            return core.run_op(req)
        except EntdistError as err:
            raise HTTPException(status_code=400, detail=str(err)) from err

    @app.get("/version", response_model=VersionResponse)
    def version() -> VersionResponse:
        return core.version_op()

    return app


app = create_app()
