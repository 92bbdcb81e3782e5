# earlybird_utils.py
"""
Detecção de early-bird tickets: máscaras candidatas são sondadas durante o treino e o
treino para quando a IoU entre candidatas consecutivas se estabiliza.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from errors import ConfigError, RangeError, TrainingError
from mask_utils import PruneMask, check_masks_aligned, full_mask, maskable_sparsity
from network_core import NetworkSpec, ParameterSet, init_network
from pruning_utils import SCOPES, Ticket, magnitude_mask, per_round_keep, rewind_masked, train_ticket
from shapes_tasks import Task, evaluate
from training_utils import CheckpointStore, TrainConfig, train

logger = logging.getLogger(__name__)


def mask_iou(first: PruneMask, second: PruneMask) -> float:
    """
    IoU dos conjuntos de zeros das duas máscaras (ids mascaráveis).

    Vale 1.0 quando nenhuma das máscaras tem zeros.
    """
    check_masks_aligned(first, second)
    intersection = union = 0
    for pid in sorted(first.maskable_ids):
        zeros_a = ~first[pid]
        zeros_b = ~second[pid]
        intersection += int(np.count_nonzero(zeros_a & zeros_b))
        union += int(np.count_nonzero(zeros_a | zeros_b))
    return 1.0 if union == 0 else intersection / union


def probe_mask(params: ParameterSet, current_mask: PruneMask, prune_fraction: float,
               scope: str = "global", groups=None) -> PruneMask:
    """Máscara candidata calculada sobre uma cópia; o estado de treino não é tocado."""
    return magnitude_mask(params.copy(), current_mask, prune_fraction, scope, groups)


@dataclass(frozen=True)
class EarlyBirdConfig:
    probe_interval: int | None = None
    iou_threshold: float = 0.95
    stable_window: int = 3
    prune_fraction: float = 0.8
    scope: str = "global"
    groups: tuple[str, ...] | None = None
    rewind_iter: int | float = 0

    def __post_init__(self):
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(self.groups))
        if self.probe_interval is not None and self.probe_interval < 0:
            raise ConfigError(f"probe_interval não pode ser negativo: {self.probe_interval}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError(f"iou_threshold fora de [0, 1]: {self.iou_threshold}")
        if self.stable_window < 1:
            raise ConfigError(f"stable_window deve ser >= 1, recebido {self.stable_window}")
        if not 0.0 < self.prune_fraction < 1.0:
            raise RangeError(f"prune_fraction deve estar em (0, 1), recebido {self.prune_fraction}")
        if self.scope not in SCOPES:
            raise ConfigError(f"Escopo desconhecido: '{self.scope}'")

    def resolved_probe_interval(self, total_iters: int) -> int:
        """Padrão: 5% do treino (no mínimo 1). Zero desativa as sondagens."""
        if self.probe_interval is None:
            return max(1, int(round(0.05 * total_iters)))
        return self.probe_interval


@dataclass(frozen=True)
class IoUPoint:
    iteration: int
    iou_prev: float | None
    iou_final: float | None = None


@dataclass
class MaskIoUReport:
    points: list[IoUPoint] = field(default_factory=list)
    stop_iteration: int | None = None

    @property
    def iterations(self) -> list[int]:
        return [point.iteration for point in self.points]

    def to_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["iteration", "iou_prev", "iou_final"])
            for point in self.points:
                writer.writerow([point.iteration,
                                 "" if point.iou_prev is None else f"{point.iou_prev:.6f}",
                                 "" if point.iou_final is None else f"{point.iou_final:.6f}"])


@dataclass
class EarlyBirdResult:
    ticket: Ticket
    report: MaskIoUReport
    stop_iteration: int
    final_mask: PruneMask | None = None
    candidates: list[tuple[int, PruneMask]] = field(default_factory=list)
    store: CheckpointStore | None = None

    def candidate_ticket(self, iteration: int) -> Ticket:
        """Ticket com a máscara sondada em ``iteration`` e os mesmos pesos de rewind."""
        masks = dict(self.candidates)
        if iteration not in masks:
            raise RangeError(f"Nenhuma sondagem na iteração {iteration}")
        if self.store is None:
            raise ConfigError("Resultado sem snapshots de rewind.")
        mask = masks[iteration]
        weights, opt_state = rewind_masked(self.store, self.ticket.rewind_iter, mask)
        provenance = {**self.ticket.provenance, "creation_iter": iteration}
        return Ticket(mask, weights, opt_state, self.ticket.rewind_iter, provenance)


def early_bird_run(spec: NetworkSpec, task: Task, config: EarlyBirdConfig, seed: int,
                   train_config: TrainConfig, track_final: bool = False,
                   progress: bool = False) -> EarlyBirdResult:
    """
    Treina sondando uma máscara a cada ``probe_interval`` iterações e para quando a IoU
    entre candidatas consecutivas fica >= ``iou_threshold`` por ``stable_window`` sondagens.

    Args:
        spec (NetworkSpec): Rede
        task (Task): Tarefa
        config (EarlyBirdConfig): Regras de sondagem e parada
        seed (int): Semente
        train_config (TrainConfig): Hiperparâmetros de treino
        track_final (bool): Continua até o fim para medir a IoU de cada candidata contra a
            máscara do fim do treino (não muda o ponto de parada)
        progress (bool): Barra de progresso

    Returns:
        EarlyBirdResult: Ticket (última candidata + pesos de rewind), histórico de IoU e
        iteração de parada
    """
    total = train_config.total_iters
    interval = config.resolved_probe_interval(total)
    rewind_iter = train_config.resolve_iteration(config.rewind_iter)
    rate = per_round_keep(config.prune_fraction, 1)
    params = init_network(spec, seed)
    dense_mask = full_mask(params)
    store = CheckpointStore()
    candidates: list[tuple[int, PruneMask]] = []
    report = MaskIoUReport()
    state = {"streak": 0, "stop": None, "stop_mask": None, "last_stable": None}

    def on_iteration(done: int, current: ParameterSet, _opt_state) -> bool:
        if interval == 0 or done % interval:
            return False
        candidate = probe_mask(current, dense_mask, rate, config.scope, config.groups)
        iou_prev = mask_iou(candidates[-1][1], candidate) if candidates else None
        candidates.append((done, candidate))
        report.points.append(IoUPoint(done, iou_prev))
        logger.debug("Sondagem na iteração %d: IoU com a anterior = %s", done, iou_prev)
        if state["stop"] is not None or iou_prev is None:
            return False
        if iou_prev >= config.iou_threshold:
            state["streak"] += 1
            state["last_stable"] = done
        else:
            state["streak"] = 0
        if state["streak"] >= config.stable_window and done >= rewind_iter:
            state["stop"], state["stop_mask"] = done, candidate
            logger.info("Early-bird encontrado na iteração %d de %d", done, total)
            return not track_final
        return False

    try:
        result = train(params, None, task, spec, train_config, seed, store=store,
                       snapshot_iters={0, rewind_iter}, on_iteration=on_iteration, progress=progress)
    except TrainingError as exc:
        raise TrainingError(f"{exc} (última sondagem estável: {state['last_stable']})",
                            iteration=exc.iteration) from exc

    final_mask = None
    if track_final or state["stop"] is None:
        final_mask = (candidates[-1][1] if candidates and candidates[-1][0] == result.final_iteration
                      else probe_mask(result.params, dense_mask, rate, config.scope, config.groups))
    if state["stop"] is None:
        state["stop"], state["stop_mask"] = result.final_iteration, final_mask
        logger.info("Máscara não estabilizou; usando a máscara do fim do treino (iteração %d)",
                    result.final_iteration)
    if track_final:
        report.points = [IoUPoint(point.iteration, point.iou_prev, mask_iou(mask, final_mask))
                         for point, (_, mask) in zip(report.points, candidates)]
    report.stop_iteration = state["stop"]

    weights, opt_state = rewind_masked(store, rewind_iter, state["stop_mask"])
    provenance = {"source_task": task.task_id, "p": config.prune_fraction, "T": 1, "scope": config.scope,
                  "groups": list(config.groups or []), "rewind_iter": rewind_iter, "seed": seed,
                  "creation_iter": state["stop"], "residual": 0}
    ticket = Ticket(state["stop_mask"], weights, opt_state, rewind_iter, provenance)
    return EarlyBirdResult(ticket, report, state["stop"], final_mask, candidates, store)


@dataclass(frozen=True)
class CandidateQuality:
    iteration: int
    metric: float
    sparsity: float


def select_candidates(iterations: list[int], count: int) -> list[int]:
    """Até ``count`` iterações candidatas igualmente espaçadas, sempre incluindo a primeira e a última."""
    if count <= 0 or not iterations:
        return []
    if count >= len(iterations):
        return list(iterations)
    picks = np.unique(np.round(np.linspace(0, len(iterations) - 1, count)).astype(int))
    return [iterations[i] for i in picks]


def candidate_quality(result: EarlyBirdResult, task: Task, spec: NetworkSpec, train_config: TrainConfig,
                      seed: int, count: int = 4) -> list[CandidateQuality]:
    """
    Retreina a partir do rewind cada máscara candidata escolhida e mede a métrica de validação.

    Mostra a partir de que ponto do treino a máscara candidata já rende um bom ticket.

    Args:
        result (EarlyBirdResult): Saída de ``early_bird_run``
        task (Task): Tarefa avaliada
        spec (NetworkSpec): Rede
        train_config (TrainConfig): Hiperparâmetros do retreino
        seed (int): Semente
        count (int): Número máximo de candidatas avaliadas

    Returns:
        list[CandidateQuality]: Uma entrada por candidata escolhida, em ordem de iteração
    """
    qualities = []
    for iteration in select_candidates([it for it, _ in result.candidates], count):
        ticket = result.candidate_ticket(iteration)
        trained = train_ticket(ticket, task, spec, train_config, seed)
        value = evaluate(trained.params, ticket.mask, task, "val", spec).value
        qualities.append(CandidateQuality(iteration, value, maskable_sparsity(ticket.mask)))
        logger.debug("Ticket candidato da iteração %d: métrica %.4f", iteration, value)
    return qualities
