"""
Aplicação Principal do MCTP-ANCOVA

Serviço HTTP para testes de contrastes múltiplos e intervalos de confiança
simultâneos em modelos ANCOVA heterocedásticos.
"""

import logging
import os
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from typing import Any, Dict, Mapping, Optional

import numpy as np
import scipy
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, field_validator

from .api.analysis import router as analysis_router
from .api.analysis import status_code_for
from .services.errors import MctpError

# Configuração de logging
logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

VERSION = "1.0.0"
UVICORN_LOG_LEVELS = ("critical", "error", "warning", "info", "debug", "trace")


class ServerSettings(BaseModel):
    """
    Configuração do servidor HTTP

    Lida das variáveis HOST, PORT, RELOAD e LOG_LEVEL; valores inválidos
    falham na inicialização com ValidationError.
    """

    host: str = Field("0.0.0.0", description="Interface de escuta")
    port: int = Field(8000, ge=1, le=65535, description="Porta TCP")
    reload: bool = Field(False, description="Recarrega o servidor quando o código muda")
    log_level: str = Field("info", description="Nível de log do uvicorn")

    @field_validator("log_level")
    def validate_log_level(cls, v):
        v = v.lower()
        if v not in UVICORN_LOG_LEVELS:
            raise ValueError(f"log_level must be one of {list(UVICORN_LOG_LEVELS)}")
        return v

    @classmethod
    def from_env(cls, env: Optional[Mapping[str, str]] = None) -> "ServerSettings":
        env = os.environ if env is None else env
        return cls.model_validate({
            "host": env.get("HOST", "0.0.0.0"),
            "port": env.get("PORT", "8000"),
            "reload": env.get("RELOAD", "false").lower() == "true",
            "log_level": env.get("LOG_LEVEL", "info"),
        })


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Gerencia o ciclo de vida da aplicação
    """
    # Startup
    logger.info("Starting MCTP-ANCOVA service...")
    logger.info(f"numpy {np.__version__}, scipy {scipy.__version__}")
    logger.info("MCTP-ANCOVA service started successfully!")

    yield

    # Shutdown
    logger.info("Shutting down MCTP-ANCOVA service...")


# Criar aplicação FastAPI
app = FastAPI(
    title="MCTP-ANCOVA",
    description="Testes de contrastes múltiplos para ANCOVA com heterocedasticidade",
    version=VERSION,
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan
)

# Configurar CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],  # Em produção, especificar domínios específicos
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Incluir routers
app.include_router(analysis_router)


@app.get("/", response_model=Dict[str, Any])
async def root():
    """
    Endpoint raiz com informações sobre o serviço
    """
    return {
        "service": "MCTP-ANCOVA",
        "version": VERSION,
        "description": "Testes de contrastes múltiplos para ANCOVA com heterocedasticidade",
        "status": "running",
        "endpoints": {
            "docs": "/docs",
            "redoc": "/redoc",
            "health": "/health",
            "analysis": "/api/v1/analysis",
            "analysis_csv": "/api/v1/analysis/csv",
            "stats": "/api/v1/analysis/stats"
        }
    }


@app.get("/health", response_model=Dict[str, Any])
async def health_check():
    """
    Health check geral da aplicação
    """
    return {
        "status": "healthy",
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__}
    }


@app.exception_handler(MctpError)
async def mctp_exception_handler(request, exc: MctpError):
    """
    Erros de análise que escaparam dos endpoints
    """
    logger.error(f"Analysis error: {exc.one_line()}")
    return JSONResponse(
        status_code=status_code_for(exc),
        content={"error": exc.category, "message": exc.message}
    )


@app.exception_handler(Exception)
async def global_exception_handler(request, exc):
    """
    Handler global para exceções não tratadas
    """
    logger.error(f"Unhandled exception: {exc}")
    return JSONResponse(
        status_code=500,
        content={
            "error": "Internal server error",
            "message": "An unexpected error occurred"
        }
    )


def serve(settings: ServerSettings) -> None:
    """Inicia o uvicorn com a aplicação de análise"""
    import uvicorn

    logger.info(f"Starting server on {settings.host}:{settings.port} (reload={settings.reload})")
    uvicorn.run(
        "src.main:app",
        host=settings.host,
        port=settings.port,
        reload=settings.reload,
        log_level=settings.log_level,
        access_log=True,
    )


if __name__ == "__main__":
    serve(ServerSettings.from_env())
