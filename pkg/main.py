# main.py
import argparse
import logging
import os
import sys
import tempfile

from app import ExperimentApp
from app.config import ENV_OUTPUT

ENV_LOG_LEVEL = "TICKET_FINDER_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbose: bool = False):
    """Configura o logger raiz: -v força DEBUG; senão usa TICKET_FINDER_LOG_LEVEL (padrão INFO)."""
    level = "DEBUG" if verbose else os.environ.get(ENV_LOG_LEVEL, "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)


def check_output_root() -> bool:
    """Verifica se a raiz de saída (TICKET_FINDER_OUTPUT ou diretório atual) aceita escrita."""
    root = os.environ.get(ENV_OUTPUT, os.getcwd())
    try:
        os.makedirs(root, exist_ok=True)
        with tempfile.TemporaryFile(dir=root):
            pass
    except OSError:
        return False
    return True


if __name__ == "__main__":
    pre_parser = argparse.ArgumentParser(add_help=False)
    pre_parser.add_argument("-v", "--verbose", action="store_true")
    known, _ = pre_parser.parse_known_args()
    setup_logging(known.verbose)

    if not check_output_root():
        print(f"erro: o diretório de saída não aceita escrita. Ajuste {ENV_OUTPUT}.", file=sys.stderr)
        sys.exit(2)
    sys.exit(ExperimentApp().main())
