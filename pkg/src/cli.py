"""
Interface de Linha de Comando do MCTP-ANCOVA

Subcomandos:
    analyze   Executa o procedimento sobre um CSV (flags ou --config JSON)
    simulate  Executa um plano de simulação JSON (--dry-run lista a grade)
    example   Grava o conjunto sintético de dois fatores em CSV
    schema    Imprime o JSON Schema do relatório

Códigos de saída: 0 ok, 2 configuração, 3 dados, 4 falha numérica.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from .models.analysis_contract import (
    AnalysisConfig,
    ContrastKind,
    MctpReport,
    MethodName,
    OutputFormat,
    VarianceMode,
)
from .models.simulation_contract import SimulationPlan
from .services.analysis_service import run_analysis
from .services.dataset_service import read_csv
from .services.errors import ConfigurationError, MctpError
from .services.simulation_service import expand_plan, run_plan, synthetic_two_factor_example

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2

# flag da CLI -> campo de AnalysisConfig
ANALYZE_FIELDS = {
    "input": "input_path",
    "response": "response",
    "factors": "factors",
    "covariates": "covariates",
    "contrast": "contrast",
    "contrast_file": "contrast_file",
    "effect": "effect",
    "variance_mode": "variance_mode",
    "method": "method",
    "alpha": "alpha",
    "one_sided": "one_sided",
    "n_boot": "n_boot",
    "seed": "seed",
    "workers": "workers",
    "format": "output_format",
}


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else os.getenv("LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
        force=True,
    )


def _read_json(path: Path) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}")


def _workers_override() -> Optional[int]:
    value = os.getenv("MCTP_WORKERS")
    if not value:
        return None
    try:
        workers = int(value)
    except ValueError:
        raise ConfigurationError(f"MCTP_WORKERS must be a positive integer, got '{value}'")
    if workers < 1:
        raise ConfigurationError(f"MCTP_WORKERS must be a positive integer, got '{value}'")
    return workers


def build_analysis_config(args: argparse.Namespace) -> AnalysisConfig:
    """Combina o arquivo --config com as flags explícitas (flags têm prioridade)"""
    values: Dict[str, Any] = _read_json(args.config) if args.config else {}
    for flag, name in ANALYZE_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    workers = _workers_override()
    if workers is not None:
        values["workers"] = workers
    return AnalysisConfig(**values)


def format_number(value: Optional[float]) -> str:
    """Mesma representação do JSON (repr do float); None vira NA"""
    return "NA" if value is None else repr(float(value))


def render_text(report: MctpReport) -> str:
    """Relatório legível com a tabela de contrastes"""
    lines = [
        f"Method: {report.method.value} ({report.variance_mode.value} variances), "
        f"contrast: {report.contrast_kind.value}, alpha: {format_number(report.alpha)}, seed: {report.seed}",
        "Cells: " + ", ".join(f"{cell} (n={n})" for cell, n in zip(report.cells, report.cell_sizes)),
    ]
    if report.n_boot is not None:
        lines.append(f"Wild bootstrap: {report.n_boot} replicates (Rademacher weights)")
    if report.df_candidates is not None:
        lines.append("df candidates: " + ", ".join(format_number(v) for v in report.df_candidates))
    lines.append(f"df used: {'inf' if report.df_used is None else report.df_used}")
    lines.append(f"Critical value: {'inf' if report.critical_value is None else format_number(report.critical_value)}")
    lines.append("")

    table = pd.DataFrame(
        {
            "Contrast": [row.label for row in report.contrasts],
            "Effect": [format_number(row.effect) for row in report.contrasts],
            "CI_Lower": [format_number(row.ci_lower) for row in report.contrasts],
            "CI_Upper": [format_number(row.ci_upper) for row in report.contrasts],
            "Test statistic": [format_number(row.statistic) for row in report.contrasts],
            "p-value": [format_number(row.p_value) for row in report.contrasts],
            "": ["*" if row.reject else "" for row in report.contrasts],
        }
    )
    lines.append(table.to_string(index=False))

    if report.covariates:
        lines.append("")
        covariates = pd.DataFrame(
            {
                "Covariate": [row.name for row in report.covariates],
                "Estimate": [format_number(row.estimate) for row in report.covariates],
                "Std. error": [format_number(row.std_error) for row in report.covariates],
            }
        )
        lines.append(covariates.to_string(index=False))

    decision = "rejected" if report.global_reject else "not rejected"
    lines.append("")
    lines.append(
        f"Global test: T0 = {format_number(report.global_statistic)}, "
        f"p = {format_number(report.global_p_value)}, H0 {decision}"
    )
    for warning in report.warnings:
        lines.append(f"warning: {warning}")
    for name, count in report.diagnostics.items():
        if count:
            lines.append(f"diagnostic: {name} = {count}")
    return "\n".join(lines) + "\n"


def render_json(report: MctpReport) -> str:
    return json.dumps(report.model_dump(mode="json"), indent=2) + "\n"


def _emit(text: str, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def cmd_analyze(args: argparse.Namespace) -> int:
    config = build_analysis_config(args)
    frame = read_csv(config.input_path)
    contrast_frame = read_csv(config.contrast_file) if config.contrast_file is not None else None
    report = run_analysis(config, frame, contrast_frame=contrast_frame)
    text = render_json(report) if config.output_format == OutputFormat.JSON else render_text(report)
    _emit(text, args.output)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    values = _read_json(args.plan)
    workers = args.workers or _workers_override()
    if workers is not None:
        values["workers"] = workers
    if args.output_dir is not None:
        values["output_dir"] = str(args.output_dir)
    plan = SimulationPlan(**values)

    if args.dry_run:
        grid = pd.DataFrame(expand_plan(plan))
        sys.stdout.write(grid.to_string(index=False) + "\n")
        return EXIT_OK

    report = run_plan(plan)
    sys.stdout.write(report.get_summary() + "\n")
    return EXIT_OK


def cmd_example(args: argparse.Namespace) -> int:
    frame = synthetic_two_factor_example(seed=args.seed)
    _emit(frame.to_csv(index=False), args.output)
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    _emit(json.dumps(MctpReport.model_json_schema(), indent=2) + "\n", args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mctp-ancova",
        description="Multiple contrast tests and simultaneous confidence intervals for heteroscedastic ANCOVA",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    subparsers = parser.add_subparsers(dest="command", required=True)

    analyze = subparsers.add_parser("analyze", help="run the multiple contrast test procedure on a CSV file")
    analyze.add_argument("--config", type=Path, help="JSON file with the analysis configuration")
    analyze.add_argument("--input", type=Path, help="CSV file, one row per subject")
    analyze.add_argument("--response", help="response column")
    analyze.add_argument("--factor", dest="factors", action="append", help="factor column (repeatable)")
    analyze.add_argument("--covariate", dest="covariates", action="append", help="covariate column (repeatable)")
    analyze.add_argument("--contrast", choices=[k.value for k in ContrastKind if k != ContrastKind.KRONECKER_COMPOSITE])
    analyze.add_argument("--contrast-file", type=Path, help="explicit contrast matrix CSV (label column + one column per cell)")
    analyze.add_argument("--effect", nargs="+", help="factorial effect: one factor (main effect) or several (interaction)")
    analyze.add_argument("--variance-mode", choices=[m.value for m in VarianceMode])
    analyze.add_argument("--method", choices=[m.value for m in MethodName])
    analyze.add_argument("--alpha", type=float)
    analyze.add_argument("--one-sided", action="store_true", default=None, help="test T >= c (upper bounds are infinite)")
    analyze.add_argument("--n-boot", type=int)
    analyze.add_argument("--seed", type=int)
    analyze.add_argument("--workers", type=int)
    analyze.add_argument("--format", choices=[f.value for f in OutputFormat])
    analyze.add_argument("--output", type=Path, help="write the report to a file instead of stdout")
    analyze.set_defaults(handler=cmd_analyze)

    simulate = subparsers.add_parser("simulate", help="run a simulation plan")
    simulate.add_argument("plan", type=Path, help="JSON simulation plan")
    simulate.add_argument("--dry-run", action="store_true", help="print the expanded setting grid and exit")
    simulate.add_argument("--output-dir", type=Path)
    simulate.add_argument("--workers", type=int)
    simulate.set_defaults(handler=cmd_simulate)

    example = subparsers.add_parser("example", help="write the synthetic two-factor dataset as CSV")
    example.add_argument("--seed", type=int, default=1)
    example.add_argument("--output", type=Path)
    example.set_defaults(handler=cmd_example)

    schema = subparsers.add_parser("schema", help="print the JSON schema of the analysis report")
    schema.add_argument("--output", type=Path)
    schema.set_defaults(handler=cmd_schema)

    return parser


def _validation_message(error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first.get("loc", ())) or "config"
    return f"error[config]: {location}: {first.get('msg', 'invalid value')}"


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    try:
        return args.handler(args)
    except MctpError as e:
        logger.debug(f"{type(e).__name__}: {e.message}", exc_info=True)
        print(e.one_line(), file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        print(_validation_message(e), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
