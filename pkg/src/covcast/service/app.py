"""HTTP front end: one POST endpoint per handler plus a health probe.

Configuration problems map to status 400 with ``kind = "config"``, input
data problems to 400 with ``kind = "data"``, and numerical failures to 500;
clients (including the bundled CLI) use ``kind`` to pick exit codes.
"""

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, DataError, NumericsError
from . import handlers
from .schemas import (
    BacktestRequest,
    BacktestResponse,
    BenchmarkRequest,
    BenchmarkResponse,
    FitRequest,
    FitResponse,
    ForecastRequest,
    ForecastResponse,
    HealthResponse,
    ReportRequest,
    ReportResponse,
    SimulateRequest,
    SimulateResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="covcast", version=__version__)

    @app.exception_handler(ConfigError)
    async def _config_error(request: Request, exc: ConfigError):
        return JSONResponse(status_code=400, content={"kind": "config", "message": str(exc)})

    @app.exception_handler(DataError)
    async def _data_error(request: Request, exc: DataError):
        return JSONResponse(status_code=400, content={"kind": "data", "message": str(exc)})

    @app.exception_handler(NumericsError)
    async def _numerics_error(request: Request, exc: NumericsError):
        return JSONResponse(status_code=500, content={"kind": "numerics", "message": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest) -> SimulateResponse:
        return handlers.handle_simulate(req)

    @app.post("/benchmark", response_model=BenchmarkResponse)
    def benchmark(req: BenchmarkRequest) -> BenchmarkResponse:
        return handlers.handle_benchmark(req)

    @app.post("/backtest", response_model=BacktestResponse)
    def backtest(req: BacktestRequest) -> BacktestResponse:
        return handlers.handle_backtest(req)

    @app.post("/fit", response_model=FitResponse)
    def fit(req: FitRequest) -> FitResponse:
        return handlers.handle_fit(req)

    @app.post("/forecast", response_model=ForecastResponse)
    def forecast(req: ForecastRequest) -> ForecastResponse:
        return handlers.handle_forecast(req)

    @app.post("/report", response_model=ReportResponse)
    def report(req: ReportRequest) -> ReportResponse:
        return handlers.handle_report(req)

    return app
