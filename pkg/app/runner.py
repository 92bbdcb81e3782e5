# app/runner.py
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed

import psutil
from tqdm import tqdm

from .config import ExperimentConfig, resolve_workers
from .recipes import CellOutcome, RecipeContext, build_cells, failed_outcome, run_cell

logger = logging.getLogger(__name__)


class ExperimentRunner:
    """Executa a grade (células x réplicas) em paralelo, isolando falhas por célula."""

    def __init__(self, app):
        self.app = app
        self.completed_count = 0
        self.failed_count = 0

    def run_grid(self, config: ExperimentConfig, progress: bool = True) -> list[CellOutcome]:
        """
        Executa todas as células da receita para todas as sementes.

        Args:
            config (ExperimentConfig): Configuração do experimento
            progress (bool): Mostra barra de progresso

        Returns:
            list[CellOutcome]: Um resultado por (célula, semente), na ordem da grade
        """
        cells = build_cells(config)
        jobs = [(index, cell, seed) for index, cell in enumerate(cells) for seed in config.seeds]
        workers = min(resolve_workers(config), len(jobs))
        context = RecipeContext(config)
        self.completed_count = 0
        self.failed_count = 0
        logger.info("Receita %s: %d células x %d réplicas com %d workers", config.recipe, len(cells),
                    len(config.seeds), workers)

        outcomes: dict[tuple[int, int], CellOutcome] = {}
        with ThreadPoolExecutor(max_workers=workers) as executor:
            future_to_job = {executor.submit(self.run_single_cell, config, cell, seed, context): (index, cell, seed)
                             for index, cell, seed in jobs}
            with tqdm(total=len(jobs), desc=config.recipe, disable=not progress) as bar:
                for future in as_completed(future_to_job):
                    index, cell, seed = future_to_job[future]
                    outcome = outcomes[(index, seed)] = future.result()
                    if outcome.row.error:
                        self.failed_count += 1
                    self.completed_count += 1
                    bar.update(1)

        memory_mb = psutil.Process().memory_info().rss / 2 ** 20
        logger.info("Grade finalizada: %d execuções, %d falhas, memória residente %.0f MB",
                    self.completed_count, self.failed_count, memory_mb)
        return [outcomes[key] for key in sorted(outcomes)]

    def run_single_cell(self, config: ExperimentConfig, cell, seed: int, context: RecipeContext) -> CellOutcome:
        """Executa uma célula; qualquer exceção vira uma linha com a coluna ``error`` preenchida."""
        started = time.perf_counter()
        try:
            return run_cell(config, cell, seed, context)
        except Exception as exc:
            logger.warning("Célula %s (seed %d) falhou: %s", cell.cell_id, seed, exc)
            return failed_outcome(config, cell, seed, exc, time.perf_counter() - started)
