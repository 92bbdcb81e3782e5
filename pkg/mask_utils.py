# mask_utils.py
"""
Máscaras binárias de poda alinhadas a um ParameterSet e o contrato de treino
mascarado (posições podadas permanecem exatamente zero durante o treino).
"""
import logging
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from errors import AlignmentError, ContractError, TrainingError, UnknownGroupError
from network_core import (Objective, OptimizerState, ParameterSet, Tensor, group_of,
                          loss_and_grads, sgd_step)

logger = logging.getLogger(__name__)


class PruneMask(Mapping):
    """
    Máscara imutável ``id -> array booleano`` (True = peso mantido).

    Só ids em ``maskable_ids`` podem ter zeros; os demais (bias, saídas das cabeças)
    são sempre todos uns.
    """

    def __init__(self, bits: Mapping[str, Tensor], maskable: Iterable[str]):
        self._bits: dict[str, Tensor] = {}
        for pid, value in bits.items():
            array = np.array(value, dtype=bool)
            array.flags.writeable = False
            self._bits[pid] = array
        self.maskable_ids = frozenset(maskable)
        unknown = self.maskable_ids - self._bits.keys()
        if unknown:
            raise AlignmentError(f"Ids mascaráveis ausentes da máscara: {sorted(unknown)}")
        for pid, array in self._bits.items():
            if pid not in self.maskable_ids and not array.all():
                raise AlignmentError(f"Parâmetro não mascarável com zeros na máscara: '{pid}'")

    def __getitem__(self, pid: str) -> Tensor:
        return self._bits[pid]

    def __iter__(self) -> Iterator[str]:
        return iter(self._bits)

    def __len__(self) -> int:
        return len(self._bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PruneMask):
            return NotImplemented
        return self.equals(other)

    __hash__ = None

    def __repr__(self) -> str:
        return f"PruneMask({len(self)} tensores, {self.num_pruned}/{self.num_elements} podados)"

    @property
    def num_elements(self) -> int:
        return int(sum(b.size for b in self._bits.values()))

    @property
    def num_pruned(self) -> int:
        return int(sum(b.size - np.count_nonzero(b) for b in self._bits.values()))

    def survivors(self, pid: str) -> int:
        return int(np.count_nonzero(self._bits[pid]))

    def equals(self, other: "PruneMask") -> bool:
        if list(self._bits) != list(other) or self.maskable_ids != other.maskable_ids:
            return False
        return all(np.array_equal(b, other[pid]) for pid, b in self._bits.items())

    def refines(self, other: "PruneMask") -> bool:
        """True se esta máscara é <= ``other`` elemento a elemento."""
        check_masks_aligned(self, other)
        return all(not np.any(b & ~other[pid]) for pid, b in self._bits.items())

    def with_bits(self, updates: Mapping[str, Tensor]) -> "PruneMask":
        bits = dict(self._bits)
        for pid, value in updates.items():
            if pid not in bits or np.shape(value) != bits[pid].shape:
                raise AlignmentError(f"Atualização desalinhada para '{pid}'")
            bits[pid] = value
        return PruneMask(bits, self.maskable_ids)

    def check_aligned(self, params: Mapping[str, Tensor]):
        if list(self._bits) != list(params):
            raise AlignmentError("Máscara e parâmetros têm ids diferentes.")
        for pid, bits in self._bits.items():
            if bits.shape != params[pid].shape:
                raise AlignmentError(f"Formato da máscara {bits.shape} difere de {params[pid].shape} em '{pid}'")


def check_masks_aligned(first: PruneMask, second: PruneMask):
    if list(first) != list(second) or first.maskable_ids != second.maskable_ids:
        raise AlignmentError("Máscaras com ids ou conjuntos mascaráveis diferentes.")
    for pid in first:
        if first[pid].shape != second[pid].shape:
            raise AlignmentError(f"Máscaras com formatos diferentes em '{pid}'")


def full_mask(params: ParameterSet) -> PruneMask:
    """Máscara toda em uns (esparsidade zero)."""
    return PruneMask({pid: np.ones(t.shape, dtype=bool) for pid, t in params.items()},
                     params.maskable_ids)


def apply_mask(params: ParameterSet, mask: PruneMask) -> ParameterSet:
    """Produto elemento a elemento; posições podadas viram +0.0."""
    mask.check_aligned(params)
    masked = {pid: (np.where(mask[pid], tensor, tensor.dtype.type(0)) if pid in mask.maskable_ids
                    else tensor)
              for pid, tensor in params.items()}
    return ParameterSet(masked, params.maskable_ids)


def satisfies_mask(params: ParameterSet, mask: PruneMask) -> bool:
    return all(not np.any(params[pid][~mask[pid]]) for pid in mask.maskable_ids)


def zero_masked_momentum(opt_state: OptimizerState, mask: PruneMask):
    """Zera (no lugar) os buffers de momentum nas posições podadas."""
    for pid in mask.maskable_ids:
        buffer = opt_state.buffers[pid]
        opt_state.buffers[pid] = np.where(mask[pid], buffer, buffer.dtype.type(0))


def masked_train_step(params: ParameterSet, mask: PruneMask, batch: tuple[Tensor, Tensor],
                      opt_state: OptimizerState, lr: float, objective: Objective) -> ParameterSet:
    """
    Um passo de SGD seguido da reaplicação da máscara.

    Args:
        params (ParameterSet): Parâmetros que já satisfazem a máscara
        mask (PruneMask): Máscara de poda
        batch (tuple): (entradas, alvos)
        opt_state (OptimizerState): Estado do otimizador (atualizado no lugar)
        lr (float): Taxa de aprendizado
        objective (Objective): Rede, cabeça e perda

    Returns:
        ParameterSet: Parâmetros após o passo, com as posições podadas em zero exato
    """
    mask.check_aligned(params)
    if not satisfies_mask(params, mask):
        raise ContractError("Parâmetros com valores não nulos em posições podadas.")
    inputs, targets = batch
    loss, grads = loss_and_grads(params, objective, inputs, targets)
    if not np.isfinite(loss):
        raise TrainingError(f"Loss não finita ({loss}) no passo de treino.")
    updated = apply_mask(sgd_step(params, grads, opt_state, lr), mask)
    zero_masked_momentum(opt_state, mask)
    return updated


# --------------------------------------------------------------------------- #
# Relatório de esparsidade
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class LayerSparsity:
    param_id: str
    pruned: int
    total: int

    @property
    def sparsity(self) -> float:
        return self.pruned / self.total if self.total else 0.0


@dataclass(frozen=True)
class SparsityReport:
    group_pruned: dict[str, int]
    group_total: dict[str, int]
    layers: list[LayerSparsity] = field(default_factory=list)

    @property
    def pruned(self) -> int:
        return sum(self.group_pruned.values())

    @property
    def total(self) -> int:
        return sum(self.group_total.values())

    @property
    def network_sparsity(self) -> float:
        return self.pruned / self.total if self.total else 0.0

    def group_sparsity(self, group: str) -> float:
        total = self.group_total[group]
        return self.group_pruned[group] / total if total else 0.0


def sparsity(mask: PruneMask, groups: Iterable[str] | None = None) -> SparsityReport:
    """
    Contagem exata de elementos podados por grupo e por tensor.

    Args:
        mask (PruneMask): Máscara
        groups (Iterable[str] | None): Restringe numerador e denominador a estes grupos

    Returns:
        SparsityReport: Contagens e esparsidade da rede
    """
    known = []
    for pid in mask:
        if group_of(pid) not in known:
            known.append(group_of(pid))
    if groups is None:
        selected = known
    else:
        selected = list(groups)
        if not selected:
            raise ContractError("Filtro de grupos vazio.")
        missing = [g for g in selected if g not in known]
        if missing:
            raise UnknownGroupError(f"Grupos desconhecidos: {missing}")
    group_pruned = {g: 0 for g in known if g in selected}
    group_total = dict.fromkeys(group_pruned, 0)
    layers = []
    for pid, bits in mask.items():
        group = group_of(pid)
        if group not in group_pruned:
            continue
        pruned = int(bits.size - np.count_nonzero(bits))
        group_pruned[group] += pruned
        group_total[group] += int(bits.size)
        layers.append(LayerSparsity(pid, pruned, int(bits.size)))
    return SparsityReport(group_pruned, group_total, layers)


def maskable_sparsity(mask: PruneMask, groups: Iterable[str] | None = None) -> float:
    """Fração podada considerando só os tensores mascaráveis dos grupos dados."""
    selected = None if groups is None else set(groups)
    pruned = total = 0
    for pid in mask.maskable_ids:
        if selected is not None and group_of(pid) not in selected:
            continue
        bits = mask[pid]
        pruned += int(bits.size - np.count_nonzero(bits))
        total += int(bits.size)
    return pruned / total if total else 0.0
