# app/recipes.py
"""
Receitas de experimento: cada receita expande a configuração numa lista de células e
cada célula é executada de forma independente para uma semente.
"""
import itertools
import logging
import threading
import time
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, replace

from earlybird_utils import candidate_quality, early_bird_run
from errors import ConfigError
from mask_utils import sparsity
from metrics_utils import checkpoint_size, network_cost
from network_core import group_of, init_network
from pruning_utils import SCOPES, PruneConfig, dense_ticket, imp, train_ticket
from shapes_tasks import ShapesDataset, build_network, evaluate, load_or_generate, make_task
from transfer_utils import GroupMapping, TransferSpec, pretrain, run_transfer

from .config import ExperimentConfig

logger = logging.getLogger(__name__)

SOURCE_VARIANTS = ("ticket_transfer", "mask_transfer", "cross_task")


@dataclass(frozen=True)
class Cell:
    cell_id: str
    variant: str
    task: str
    p: float = 0.0
    rounds: int = 1
    scope: str = "global"
    rewind_iter: int | float = 0
    groups: tuple[str, ...] = ()
    source_task: str | None = None
    param_fraction: float | None = None


@dataclass
class ResultRow:
    recipe: str
    cell_id: str
    seed: int
    p_target: float
    sparsity_exact: float
    rounds: int
    scope: str
    rewind_iter: int | float
    groups: str
    task: str
    metric_name: str
    metric_value: float
    bytes: int
    macs_adjusted: int
    error: str = ""
    wall_time: float = 0.0
    breakdown_ref: str = ""


@dataclass
class CellOutcome:
    cell: Cell
    row: ResultRow
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModuleSubset:
    groups: tuple[str, ...]
    param_fraction: float


def module_grid(group_sizes: Mapping[str, int], total: int | None = None) -> list[ModuleSubset]:
    """
    Todos os subconjuntos de grupos (incluindo o vazio, a linha de base densa), com a
    fração de parâmetros de cada um.

    Args:
        group_sizes (Mapping[str, int]): Número de parâmetros por grupo, na ordem da rede
        total (int | None): Total de parâmetros da rede (padrão: soma dos grupos)

    Returns:
        list[ModuleSubset]: 2^n subconjuntos, ordenados por tamanho e depois pela ordem dos grupos
    """
    names = list(group_sizes)
    if not 1 <= len(names) <= 6:
        raise ConfigError(f"module_grid aceita de 1 a 6 grupos, recebido {len(names)}")
    total = sum(group_sizes.values()) if total is None else total
    if total <= 0:
        raise ConfigError("Total de parâmetros deve ser positivo.")
    return [ModuleSubset(subset, sum(group_sizes[g] for g in subset) / total)
            for size in range(len(names) + 1)
            for subset in itertools.combinations(names, size)]


def group_sizes(spec) -> dict[str, int]:
    sizes: dict[str, int] = {}
    for pid, tensor in init_network(spec, 0).items():
        sizes[group_of(pid)] = sizes.get(group_of(pid), 0) + tensor.size
    return sizes


def _cell(variant: str, task: str, p: float = 0.0, rounds: int = 1, scope: str = "global",
          rewind_iter=0, groups=(), source_task=None, param_fraction=None) -> Cell:
    parts = [variant, task]
    if source_task:
        parts.append(f"from-{source_task}")
    if variant != "dense":
        parts += [f"p{p:g}", f"T{rounds}", scope, f"j{rewind_iter:g}", "+".join(groups)]
    return Cell("_".join(parts), variant, task, p, rounds, scope, rewind_iter, tuple(groups),
                source_task, param_fraction)


def _default_groups(config: ExperimentConfig, task: str) -> tuple[str, ...]:
    if config.grid.groups:
        return config.grid.groups[0]
    spec = build_network(config.network_size, (task,), config.data.image_size)
    return tuple(spec.group_names())


def _first(grid) -> dict:
    return dict(rounds=grid.rounds[0], scope=grid.scope[0], rewind_iter=grid.rewind_iter[0])


def sparsity_sweep_cells(config: ExperimentConfig, task: str) -> list[Cell]:
    groups = _default_groups(config, task)
    return [_cell("imp", task, p, groups=groups, **_first(config.grid)) for p in config.grid.p]


def resetting_sweep_cells(config: ExperimentConfig, task: str) -> list[Cell]:
    grid = config.grid
    groups = _default_groups(config, task)
    return [_cell("imp", task, grid.p[0], grid.rounds[0], grid.scope[0], j, groups) for j in grid.rewind_iter]


def module_pruning_cells(config: ExperimentConfig, task: str) -> list[Cell]:
    """Um ticket por subconjunto de grupos; o subconjunto vazio é a linha de base densa."""
    spec = build_network(config.network_size, (task,), config.data.image_size)
    cells = []
    for subset in module_grid(group_sizes(spec)):
        if not subset.groups:
            cells.append(_cell("dense", task, param_fraction=0.0))
        else:
            cells.append(_cell("imp", task, config.grid.p[0], groups=subset.groups,
                               param_fraction=subset.param_fraction, **_first(config.grid)))
    return cells


def rounds_sweep_cells(config: ExperimentConfig, task: str) -> list[Cell]:
    grid = config.grid
    groups = _default_groups(config, task)
    return [_cell("imp", task, p, t, grid.scope[0], grid.rewind_iter[0], groups)
            for p in grid.p for t in grid.rounds]


def scope_compare_cells(config: ExperimentConfig, task: str) -> list[Cell]:
    grid = config.grid
    groups = _default_groups(config, task)
    return [_cell("imp", task, p, grid.rounds[0], scope, grid.rewind_iter[0], groups)
            for p in grid.p for scope in SCOPES]


def early_bird_cells(config: ExperimentConfig, task: str) -> list[Cell]:
    grid = config.grid
    groups = _default_groups(config, task)
    cells = []
    for p in grid.p:
        cells.append(_cell("imp", task, p, 1, grid.scope[0], grid.rewind_iter[0], groups))
        cells.append(_cell("early_bird", task, p, 1, grid.scope[0], grid.rewind_iter[0], groups))
    return cells


def convergence_cells(config: ExperimentConfig, task: str) -> list[Cell]:
    return [_cell("imp", task, config.grid.p[0], groups=_default_groups(config, task), **_first(config.grid))]


def transfer_compare_cells(config: ExperimentConfig) -> list[Cell]:
    """IMP direto no alvo contra ticket_transfer e mask_transfer a partir da tarefa fonte."""
    section = config.transfer
    target, source, shared = section.target_task, section.source_task, section.shared_groups
    cells = [_cell("dense", target)]
    for p in config.grid.p:
        cells.append(_cell("imp", target, p, groups=shared, **_first(config.grid)))
        for variant in ("ticket_transfer", "mask_transfer"):
            cells.append(_cell(variant, target, p, groups=shared, source_task=source, **_first(config.grid)))
    return cells


def cross_task_cells(config: ExperimentConfig) -> list[Cell]:
    section = config.transfer
    target, source, shared = section.target_task, section.source_task, section.shared_groups
    cells = [_cell("dense", target)]
    for p in config.grid.p:
        cells.append(_cell("imp", target, p, groups=shared, **_first(config.grid)))
        cells.append(_cell("cross_task", target, p, groups=shared, source_task=source, **_first(config.grid)))
    return cells


PER_TASK_RECIPES = {
    "sparsity_sweep": sparsity_sweep_cells,
    "resetting_sweep": resetting_sweep_cells,
    "module_pruning": module_pruning_cells,
    "rounds_sweep": rounds_sweep_cells,
    "scope_compare": scope_compare_cells,
    "early_bird": early_bird_cells,
    "convergence": convergence_cells,
}
TRANSFER_RECIPES = {
    "transfer_compare": transfer_compare_cells,
    "cross_task": cross_task_cells,
}


def build_cells(config: ExperimentConfig) -> list[Cell]:
    """Expande a receita do config na lista ordenada de células (linha de base densa primeiro)."""
    if config.recipe in TRANSFER_RECIPES:
        return TRANSFER_RECIPES[config.recipe](config)
    if config.recipe not in PER_TASK_RECIPES:
        raise ConfigError(f"Receita desconhecida: '{config.recipe}'")
    cells: list[Cell] = []
    for task in config.tasks:
        task_cells = PER_TASK_RECIPES[config.recipe](config, task)
        if not any(cell.variant == "dense" for cell in task_cells):
            cells.append(_cell("dense", task))
        cells += task_cells
    return cells


class RecipeContext:
    """Recursos compartilhados entre células de uma execução (datasets por semente)."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._lock = threading.Lock()
        self._datasets: dict[int, ShapesDataset] = {}

    def dataset(self, seed: int) -> ShapesDataset:
        with self._lock:
            if seed not in self._datasets:
                self._datasets[seed] = load_or_generate(self.config.data.to_shapes_config(), seed,
                                                        self.config.data.cache_dir)
            return self._datasets[seed]


def _train_config(config: ExperimentConfig):
    train_config = config.train.to_train_config()
    if config.recipe == "convergence" and not train_config.eval_interval:
        train_config = replace(train_config, eval_interval=max(1, train_config.total_iters // 20))
    return train_config


def _prune_config(cell: Cell, train_config) -> PruneConfig:
    return PruneConfig(cell.p, cell.rounds, cell.scope, cell.groups, cell.rewind_iter, train_config.total_iters)


def run_cell(config: ExperimentConfig, cell: Cell, seed: int, context: RecipeContext) -> CellOutcome:
    """
    Executa uma célula para uma semente: obtém o ticket (ou a inicialização transferida),
    treina, avalia e mede esparsidade, bytes e MACs.
    """
    started = time.perf_counter()
    dataset = context.dataset(seed)
    train_config = _train_config(config)
    size, image_size = config.network_size, config.data.image_size
    spec = build_network(size, (cell.task,), image_size)
    task = make_task(cell.task, dataset)
    extras: dict = {}

    if cell.variant in SOURCE_VARIANTS:
        source_spec = build_network(size, (cell.source_task,), image_size)
        source_task = make_task(cell.source_task, dataset)
        mapping = GroupMapping.for_groups(cell.groups, source_spec, spec)
        if cell.variant == "mask_transfer":
            pretrained = pretrain(source_spec, source_task, seed, train_config)
            transfer = TransferSpec("mask_transfer", pretrained, mapping, config.transfer.conv_only, cell.p)
        else:
            source_ticket = imp(source_spec, source_task, _prune_config(cell, train_config), seed, train_config)
            transfer = TransferSpec(cell.variant, source_ticket, mapping, shared_groups=cell.groups)
        result, mask = run_transfer(transfer, task, spec, train_config, seed)
    else:
        if cell.variant == "dense":
            ticket = dense_ticket(spec, seed, train_config, cell.task)
        elif cell.variant == "imp":
            ticket = imp(spec, task, _prune_config(cell, train_config), seed, train_config)
        elif cell.variant == "early_bird":
            eb_config = config.early_bird.to_config(cell.p, cell.scope, cell.groups, cell.rewind_iter)
            outcome = early_bird_run(spec, task, eb_config, seed, train_config, track_final=True)
            ticket = outcome.ticket
            extras["iou"] = [[p.iteration, p.iou_prev, p.iou_final] for p in outcome.report.points]
            extras["stop_iteration"] = outcome.stop_iteration
            extras["total_iters"] = train_config.total_iters
            qualities = candidate_quality(outcome, task, spec, train_config, seed, config.early_bird.quality_candidates)
            extras["candidate_quality"] = [[q.iteration, q.metric] for q in qualities]
        else:
            raise ConfigError(f"Variante desconhecida: '{cell.variant}'")
        extras["rounds"] = [asdict(record) for record in ticket.rounds]
        result = train_ticket(ticket, task, spec, train_config, seed)
        mask = ticket.mask

    evaluation = evaluate(result.params, mask, task, "val", spec)
    report = sparsity(mask)
    cost = network_cost(spec, result.params, mask, head=cell.task)
    extras["eval_rows"] = [asdict(row) for row in evaluation.rows]
    extras["layers"] = [[layer.param_id, layer.sparsity] for layer in report.layers
                        if layer.param_id in mask.maskable_ids]
    extras["history"] = [[h.iteration, h.epoch, h.loss, h.metric] for h in result.history]
    extras["val_loss"] = evaluation.loss
    extras["higher_is_better"] = task.spec.higher_is_better
    row = ResultRow(
        recipe=config.recipe, cell_id=cell.cell_id, seed=seed, p_target=cell.p,
        sparsity_exact=report.network_sparsity, rounds=cell.rounds, scope=cell.scope,
        rewind_iter=cell.rewind_iter, groups="+".join(cell.groups), task=cell.task,
        metric_name=evaluation.metric_name, metric_value=evaluation.value,
        bytes=checkpoint_size(result.params, mask), macs_adjusted=cost.adjusted_macs,
        wall_time=time.perf_counter() - started,
    )
    logger.info("Célula %s (seed %d): %s=%.4f, esparsidade=%.4f", cell.cell_id, seed,
                evaluation.metric_name, evaluation.value, report.network_sparsity)
    return CellOutcome(cell, row, extras)


def failed_outcome(config: ExperimentConfig, cell: Cell, seed: int, exc: BaseException,
                   wall_time: float = 0.0) -> CellOutcome:
    """Linha de resultado para uma célula que falhou (a grade continua)."""
    row = ResultRow(config.recipe, cell.cell_id, seed, cell.p, float("nan"), cell.rounds, cell.scope,
                    cell.rewind_iter, "+".join(cell.groups), cell.task, "", float("nan"), 0, 0,
                    error=f"{type(exc).__name__}: {exc}", wall_time=wall_time)
    return CellOutcome(cell, row)
