#!/usr/bin/env python3
"""
Script para executar o servidor do MCTP-ANCOVA

Variáveis de ambiente: HOST, PORT, RELOAD e LOG_LEVEL.
"""

import sys

from pydantic import ValidationError

from src.main import ServerSettings, serve


def main() -> int:
    """Valida a configuração do ambiente e inicia o servidor"""
    try:
        settings = ServerSettings.from_env()
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        print(f"error[config]: {field}: {first['msg']}", file=sys.stderr)
        return 2

    print("🚀 Iniciando MCTP-ANCOVA...")
    print(f"📡 Servidor: {settings.host}:{settings.port}")
    print(f"🔄 Reload: {settings.reload}")
    print(f"📝 Log Level: {settings.log_level}")
    print("=" * 50)

    serve(settings)
    return 0


if __name__ == "__main__":
    sys.exit(main())
