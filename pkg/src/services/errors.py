"""
Hierarquia de erros do MCTP-ANCOVA

Cada erro carrega uma categoria (usada no diagnóstico de uma linha da CLI)
e o código de saída correspondente.
"""

from typing import Optional


class MctpError(Exception):
    """Erro base de todas as etapas da análise"""

    category = "error"
    exit_code = 1

    def __init__(self, message: str, detail: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail

    def one_line(self) -> str:
        """Diagnóstico compacto para a CLI"""
        return f"error[{self.category}]: {self.message}"


# Erros de configuração (exit 2)
class ConfigurationError(MctpError):
    category = "config"
    exit_code = 2


class UnknownFactor(ConfigurationError):
    pass


class InvalidGroupCount(ConfigurationError):
    pass


class ModeMismatch(ConfigurationError):
    pass


# Erros de dados (exit 3)
class DataError(MctpError):
    category = "data"
    exit_code = 3


class InputFileError(DataError):
    category = "file"


class SchemaError(DataError):
    category = "schema"


class NonFiniteInput(DataError):
    category = "schema"


class EmptyCell(DataError):
    pass


class NotFullCross(DataError):
    pass


class InvalidContrast(DataError):
    pass


# Falhas numéricas (exit 4)
class NumericalError(MctpError):
    category = "numerical"
    exit_code = 4


class RankDeficient(NumericalError):
    category = "rank"


class LeverageOne(NumericalError):
    category = "rank"


class InsufficientReplication(NumericalError):
    category = "replication"


class DegenerateVariance(NumericalError):
    category = "degeneracy"


class NotPositiveSemidefinite(NumericalError):
    category = "degeneracy"


class NoConvergence(NumericalError):
    category = "convergence"


class AllResidualsZero(NumericalError):
    category = "degeneracy"


class DegenerateBootstrap(NumericalError):
    category = "degeneracy"
