#!/usr/bin/env python3
"""
Script para executar a CLI do MCTP-ANCOVA

Exemplos:
    python run_cli.py example --output two_factor_example.csv
    python run_cli.py analyze --input two_factor_example.csv --response bun_day90 \\
        --factor dose --factor sex --covariate bun_baseline --covariate weight_change \\
        --effect dose --contrast grandmean --variance-mode subjectwise --method boot
    python run_cli.py simulate configs/setting3.json --dry-run
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
