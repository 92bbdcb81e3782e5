# training_utils.py
"""
Laço de treino determinístico compartilhado por poda, early-bird, transferência e
pelo harness.

A ordem dos dados depende apenas de (seed, época): o batch da iteração ``i`` é sempre
o mesmo, o que torna o replay após um rewind bit a bit idêntico.
"""
import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from errors import ConfigError, RangeError, SnapshotMissingError, TrainingError
from mask_utils import PruneMask, full_mask, masked_train_step
from network_core import LrSchedule, NetworkSpec, Objective, OptimizerState, ParameterSet, lr_at
from shapes_tasks import Task, evaluate

logger = logging.getLogger(__name__)

# Hook chamado após cada iteração; devolver True interrompe o treino.
IterationHook = Callable[[int, ParameterSet, OptimizerState], bool | None]


def iteration_index(value: int | float, total_iters: int) -> int:
    """
    Iteração absoluta a partir de um int, de uma fração do treino (float em [0, 1]) ou de
    um float inteiro > 1 (``300.0`` vindo do JSON é a iteração 300).

    Raises:
        RangeError: Fração fora de [0, 1], float não inteiro acima de 1 ou iteração fora de [0, total]
    """
    if isinstance(value, float):
        if 0.0 <= value <= 1.0:
            return int(round(value * total_iters))
        if not value.is_integer():
            raise RangeError(f"Fração de iteração fora de [0, 1]: {value}")
        value = int(value)
    if not 0 <= value <= total_iters:
        raise RangeError(f"Iteração {value} fora de [0, {total_iters}]")
    return int(value)


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int
    batch_size: int = 32
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(0.05))
    momentum: float = 0.9
    weight_decay: float = 5e-4
    eval_interval: int = 0

    def __post_init__(self):
        if self.total_iters < 1:
            raise ConfigError(f"total_iters deve ser >= 1, recebido {self.total_iters}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size deve ser >= 1, recebido {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum deve estar em [0, 1), recebido {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay não pode ser negativo.")
        if self.eval_interval < 0:
            raise ConfigError("eval_interval não pode ser negativo.")

    def resolve_iteration(self, value: int | float) -> int:
        """Ex.: ``0.1`` com 1000 iterações -> 100; ``250`` e ``250.0`` -> 250."""
        return iteration_index(value, self.total_iters)


@dataclass(frozen=True)
class EvalPoint:
    iteration: int
    epoch: float
    loss: float
    metric: float


@dataclass
class TrainResult:
    params: ParameterSet
    opt_state: OptimizerState
    history: list[EvalPoint]
    final_iteration: int
    stopped_early: bool = False


class CheckpointStore:
    """Snapshots (parâmetros, estado do otimizador) indexados pela iteração."""

    def __init__(self):
        self._snapshots: dict[int, tuple[ParameterSet, OptimizerState]] = {}

    def capture(self, iteration: int, params: ParameterSet, opt_state: OptimizerState):
        self._snapshots[iteration] = (params.copy(), opt_state.copy())
        logger.debug("Snapshot capturado na iteração %d", iteration)

    def get(self, iteration: int) -> tuple[ParameterSet, OptimizerState]:
        if iteration not in self._snapshots:
            raise SnapshotMissingError(f"Não há snapshot na iteração {iteration}; "
                                       f"disponíveis: {self.iterations}")
        params, opt_state = self._snapshots[iteration]
        return params.copy(), opt_state.copy()

    def __contains__(self, iteration: int) -> bool:
        return iteration in self._snapshots

    @property
    def iterations(self) -> list[int]:
        return sorted(self._snapshots)


def steps_per_epoch(num_examples: int, batch_size: int) -> int:
    return max(1, num_examples // batch_size)


def epoch_permutation(seed: int, epoch: int, num_examples: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(num_examples)


def batch_indices(seed: int, iteration: int, num_examples: int, batch_size: int) -> np.ndarray:
    """Índices do batch da iteração dada (o último batch incompleto da época é descartado)."""
    steps = steps_per_epoch(num_examples, batch_size)
    epoch, position = divmod(iteration, steps)
    order = epoch_permutation(seed, epoch, num_examples)
    return order[position * batch_size:(position + 1) * batch_size]


def train(params: ParameterSet, mask: PruneMask | None, task: Task, spec: NetworkSpec,
          config: TrainConfig, seed: int, opt_state: OptimizerState | None = None,
          start_iter: int = 0, end_iter: int | None = None, store: CheckpointStore | None = None,
          snapshot_iters: Iterable[int] = (), on_iteration: IterationHook | None = None,
          round_index: int | None = None, progress: bool = False) -> TrainResult:
    """
    Treina com a máscara fixa da iteração ``start_iter`` até ``end_iter``.

    Args:
        params (ParameterSet): Parâmetros iniciais (devem satisfazer a máscara)
        mask (PruneMask | None): Máscara; None equivale a tudo em uns
        task (Task): Tarefa (define cabeça, perda e dados)
        spec (NetworkSpec): Rede
        config (TrainConfig): Hiperparâmetros de treino
        seed (int): Semente da ordem dos dados
        opt_state (OptimizerState | None): Estado do otimizador; não é modificado
        start_iter (int): Primeira iteração (o schedule de LR continua a partir dela)
        end_iter (int | None): Iteração final (padrão: ``config.total_iters``)
        store (CheckpointStore | None): Onde guardar snapshots
        snapshot_iters (Iterable[int]): Iterações a capturar (estado após i passos)
        on_iteration (IterationHook | None): Chamado após cada passo
        round_index (int | None): Rodada de poda, repassada a erros de treino
        progress (bool): Mostra barra de progresso

    Returns:
        TrainResult: Parâmetros finais, estado do otimizador e histórico de avaliação
    """
    end_iter = config.total_iters if end_iter is None else end_iter
    if not 0 <= start_iter <= end_iter:
        raise RangeError(f"Intervalo de treino inválido: {start_iter}..{end_iter}")
    mask = full_mask(params) if mask is None else mask
    if opt_state is None:
        opt_state = OptimizerState.zeros_like(params, config.momentum, config.weight_decay)
    else:
        opt_state = opt_state.copy()
    snapshots = set(snapshot_iters)
    objective = Objective(spec, task.task_id, task.spec.loss)
    inputs, targets = task.inputs("train"), task.targets("train")
    steps = steps_per_epoch(len(inputs), config.batch_size)
    history: list[EvalPoint] = []

    def record(done: int):
        result = evaluate(params, None, task, "val", spec)
        history.append(EvalPoint(done, done / steps, result.loss, result.value))
        logger.debug("Iteração %d: loss=%.4f %s=%.4f", done, result.loss, result.metric_name, result.value)

    done = start_iter
    stopped = False
    iterations = tqdm(range(start_iter, end_iter), desc=f"Treino {task.task_id}", leave=False,
                      disable=not progress)
    for iteration in iterations:
        if store is not None and iteration in snapshots:
            store.capture(iteration, params, opt_state)
        index = batch_indices(seed, iteration, len(inputs), config.batch_size)
        try:
            params = masked_train_step(params, mask, (inputs[index], targets[index]), opt_state,
                                       lr_at(config.schedule, iteration), objective)
        except TrainingError as exc:
            raise TrainingError(f"Treino divergiu na iteração {iteration}"
                                + (f" (rodada {round_index})" if round_index is not None else ""),
                                round_index=round_index, iteration=iteration) from exc
        done = iteration + 1
        if config.eval_interval and done % config.eval_interval == 0:
            record(done)
        if on_iteration is not None and on_iteration(done, params, opt_state):
            stopped = True
            break
    if store is not None and done in snapshots:
        store.capture(done, params, opt_state)
    if config.eval_interval and (not history or history[-1].iteration != done) and done > start_iter:
        record(done)
    return TrainResult(params, opt_state, history, done, stopped)
