# app/main_app.py
import logging
import os

from .cli_manager import CLIManager
from .config import ExperimentConfig, resolve_output_dir, save_config
from .reporter import Reporter
from .runner import ExperimentRunner

logger = logging.getLogger(__name__)


class ExperimentApp:
    def __init__(self):
        # Estado da última execução
        self.config: ExperimentConfig | None = None
        self.outcomes = []

        # Inicializar componentes
        self.runner = ExperimentRunner(self)
        self.reporter = Reporter(self)
        self.cli = CLIManager(self)

    def run_experiment(self, config: ExperimentConfig, progress: bool = True) -> str:
        """
        Executa a receita, grava CSV, detalhamentos, gráficos e a configuração usada.

        Returns:
            str: Caminho do CSV de resultados
        """
        self.config = config
        out_dir = os.path.join(resolve_output_dir(config), config.recipe)
        os.makedirs(out_dir, exist_ok=True)
        save_config(config, os.path.join(out_dir, "config.json"))
        self.outcomes = self.runner.run_grid(config, progress=progress)
        return self.reporter.export(self.outcomes, out_dir)

    def main(self, argv: list[str] | None = None) -> int:
        return self.cli.main(argv)
