# network_core.py
"""
Núcleo de rede neural densa e determinística.

Camadas (dense, conv2d, relu, maxpool2x2, flatten), retropropagação escrita à mão,
SGD com momentum e agendas de taxa de aprendizado com warmup e decaimento em degraus.
Todos os tensores são ``numpy.ndarray`` em float32, com ordem de soma fixa (row-major)
para que duas execuções idênticas produzam resultados bit a bit iguais.
"""
import logging
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from errors import ConfigError, RangeError, ShapeError, SpecError, UsageError

logger = logging.getLogger(__name__)

DTYPE = np.float32
Tensor = np.ndarray

LAYER_KINDS = ("dense", "conv2d", "relu", "maxpool2x2", "flatten")
PARAM_NAMES = ("weight", "bias")


def param_id(group: str, index: int, name: str) -> str:
    """Monta o identificador ``grupo/indice_camada/nome`` de um parâmetro."""
    return f"{group}/{index}/{name}"


def split_param_id(pid: str) -> tuple[str, int, str]:
    """Separa um identificador de parâmetro em (grupo, índice, nome)."""
    parts = pid.split("/")
    if len(parts) != 3 or parts[2] not in PARAM_NAMES:
        raise SpecError(f"Identificador de parâmetro inválido: '{pid}'")
    return parts[0], int(parts[1]), parts[2]


def group_of(pid: str) -> str:
    return pid.split("/", 1)[0]


# --------------------------------------------------------------------------- #
# Especificação da rede
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"Tipo de camada desconhecido: '{self.kind}'")
        if self.kind == "dense" and (self.in_features <= 0 or self.out_features <= 0):
            raise SpecError("Camada dense precisa de in_features e out_features positivos.")
        if self.kind == "conv2d":
            if self.in_channels <= 0 or self.out_channels <= 0:
                raise SpecError("Camada conv2d precisa de canais positivos.")
            if self.kernel <= 0 or self.kernel % 2 == 0:
                raise SpecError(f"Kernel de conv2d deve ser ímpar, recebido {self.kernel}.")

    @classmethod
    def dense(cls, in_features: int, out_features: int) -> "LayerSpec":
        return cls("dense", in_features=in_features, out_features=out_features)

    @classmethod
    def conv2d(cls, in_channels: int, out_channels: int, kernel: int = 3) -> "LayerSpec":
        return cls("conv2d", in_channels=in_channels, out_channels=out_channels, kernel=kernel)

    @classmethod
    def relu(cls) -> "LayerSpec":
        return cls("relu")

    @classmethod
    def maxpool(cls) -> "LayerSpec":
        return cls("maxpool2x2")

    @classmethod
    def flatten(cls) -> "LayerSpec":
        return cls("flatten")

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d")

    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.out_features, self.in_features)
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    def bias_shape(self) -> tuple[int, ...]:
        return (self.out_features if self.kind == "dense" else self.out_channels,)

    def fans(self) -> tuple[int, int]:
        if self.kind == "dense":
            return self.in_features, self.out_features
        area = self.kernel * self.kernel
        return self.in_channels * area, self.out_channels * area

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Formato de saída (sem a dimensão de batch) ou SpecError se não encadear."""
        if self.kind == "dense":
            if tuple(input_shape) != (self.in_features,):
                raise SpecError(f"dense espera entrada ({self.in_features},), recebeu {input_shape}")
            return (self.out_features,)
        if self.kind == "conv2d":
            if len(input_shape) != 3 or input_shape[0] != self.in_channels:
                raise SpecError(f"conv2d espera {self.in_channels} canais, recebeu {input_shape}")
            return (self.out_channels, input_shape[1], input_shape[2])
        if self.kind == "maxpool2x2":
            if len(input_shape) != 3 or input_shape[1] % 2 or input_shape[2] % 2:
                raise SpecError(f"maxpool2x2 exige altura e largura pares, recebeu {input_shape}")
            return (input_shape[0], input_shape[1] // 2, input_shape[2] // 2)
        if self.kind == "flatten":
            return (int(np.prod(input_shape)),)
        return tuple(input_shape)


@dataclass(frozen=True)
class GroupSpec:
    name: str
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.name or "/" in self.name:
            raise SpecError(f"Nome de grupo inválido: '{self.name}'")


@dataclass(frozen=True)
class NetworkSpec:
    """
    Rede como lista ordenada de grupos (o tronco) seguida de cabeças nomeadas.

    O grupo ``backbone`` marca a fronteira do backbone dentro do tronco. Toda cabeça
    consome a saída do último grupo do tronco.
    """
    input_shape: tuple[int, ...]
    groups: tuple[GroupSpec, ...]
    backbone: str
    heads: tuple[tuple[str, tuple[GroupSpec, ...]], ...]

    def __post_init__(self):
        self.validate()

    def validate(self):
        names = [g.name for g in self.groups]
        for _, head_groups in self.heads:
            names.extend(g.name for g in head_groups)
        if len(names) != len(set(names)):
            raise SpecError(f"Nomes de grupo repetidos: {names}")
        if self.backbone not in [g.name for g in self.groups]:
            raise SpecError(f"Grupo backbone '{self.backbone}' não está no tronco.")
        if not self.heads:
            raise SpecError("A rede precisa de pelo menos uma cabeça.")
        head_names = [name for name, _ in self.heads]
        if len(head_names) != len(set(head_names)):
            raise SpecError(f"Nomes de cabeça repetidos: {head_names}")
        shape = self._chain(tuple(self.input_shape), self.groups)
        for name, head_groups in self.heads:
            if not any(layer.has_params for g in head_groups for layer in g.layers):
                raise SpecError(f"A cabeça '{name}' não tem camadas com parâmetros.")
            self._chain(shape, head_groups)

    @staticmethod
    def _chain(shape: tuple[int, ...], groups: Iterable[GroupSpec]) -> tuple[int, ...]:
        for group in groups:
            for layer in group.layers:
                shape = layer.output_shape(shape)
        return shape

    @property
    def head_names(self) -> list[str]:
        return [name for name, _ in self.heads]

    def head_groups(self, head: str) -> tuple[GroupSpec, ...]:
        for name, groups in self.heads:
            if name == head:
                return groups
        raise SpecError(f"Cabeça desconhecida: '{head}'")

    def trunk_output_shape(self) -> tuple[int, ...]:
        return self._chain(tuple(self.input_shape), self.groups)

    def output_shape(self, head: str) -> tuple[int, ...]:
        return self._chain(self.trunk_output_shape(), self.head_groups(head))

    def group_names(self) -> list[str]:
        names = [g.name for g in self.groups]
        for _, head_groups in self.heads:
            names.extend(g.name for g in head_groups)
        return names

    def backbone_groups(self) -> list[str]:
        names = []
        for group in self.groups:
            names.append(group.name)
            if group.name == self.backbone:
                break
        return names

    def path(self, head: str) -> list[GroupSpec]:
        return list(self.groups) + list(self.head_groups(head))

    def layer_entries(self, head: str | None = None) -> Iterator[tuple[str, int, LayerSpec, tuple[int, ...]]]:
        """Percorre (grupo, índice, camada, formato_de_entrada) do tronco e das cabeças."""
        shape = tuple(self.input_shape)
        for group in self.groups:
            for index, layer in enumerate(group.layers):
                yield group.name, index, layer, shape
                shape = layer.output_shape(shape)
        trunk_shape = shape
        for name, head_groups in self.heads:
            if head is not None and name != head:
                continue
            shape = trunk_shape
            for group in head_groups:
                for index, layer in enumerate(group.layers):
                    yield group.name, index, layer, shape
                    shape = layer.output_shape(shape)

    def head_output_ids(self) -> set[str]:
        """Pesos da última camada parametrizada de cada cabeça (nunca mascaráveis)."""
        ids = set()
        for name, _ in self.heads:
            last = None
            for group, index, layer, _ in self.layer_entries(name):
                if layer.has_params:
                    last = param_id(group, index, "weight")
            ids.add(last)
        return ids

    def maskable_ids(self) -> set[str]:
        outputs = self.head_output_ids()
        return {
            param_id(group, index, "weight")
            for group, index, layer, _ in self.layer_entries()
            if layer.has_params and param_id(group, index, "weight") not in outputs
        }


# --------------------------------------------------------------------------- #
# Conjunto de parâmetros
# --------------------------------------------------------------------------- #
class ParameterSet(Mapping):
    """Mapa ordenado ``id -> tensor`` com o conjunto de ids mascaráveis."""

    def __init__(self, tensors: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]],
                 maskable: Iterable[str] | None = None):
        self._tensors: dict[str, Tensor] = dict(tensors)
        if maskable is None:
            maskable = [pid for pid, t in self._tensors.items()
                        if pid.endswith("/weight") and t.ndim >= 2]
        self.maskable_ids = frozenset(maskable)
        unknown = self.maskable_ids - self._tensors.keys()
        if unknown:
            raise SpecError(f"Ids mascaráveis ausentes do conjunto: {sorted(unknown)}")

    def __getitem__(self, pid: str) -> Tensor:
        return self._tensors[pid]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterSet):
            return NotImplemented
        return self.equals(other)

    __hash__ = None

    def __repr__(self) -> str:
        return f"ParameterSet({len(self)} tensores, {self.num_elements} elementos)"

    @property
    def num_elements(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def groups(self) -> list[str]:
        seen = []
        for pid in self._tensors:
            name = group_of(pid)
            if name not in seen:
                seen.append(name)
        return seen

    def copy(self) -> "ParameterSet":
        return ParameterSet({pid: t.copy() for pid, t in self._tensors.items()}, self.maskable_ids)

    def replace(self, updates: Mapping[str, Tensor]) -> "ParameterSet":
        tensors = dict(self._tensors)
        for pid, value in updates.items():
            if pid not in tensors:
                raise SpecError(f"Parâmetro desconhecido: '{pid}'")
            if value.shape != tensors[pid].shape:
                raise ShapeError(f"Formato {value.shape} difere de {tensors[pid].shape} em '{pid}'")
            tensors[pid] = value
        return ParameterSet(tensors, self.maskable_ids)

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet({pid: t.astype(dtype) for pid, t in self._tensors.items()}, self.maskable_ids)

    def equals(self, other: "ParameterSet") -> bool:
        """Igualdade bit a bit (ids, ordem, formatos, dtypes e bytes)."""
        if list(self._tensors) != list(other):
            return False
        for pid, tensor in self._tensors.items():
            theirs = other[pid]
            if tensor.shape != theirs.shape or tensor.dtype != theirs.dtype:
                return False
            if tensor.tobytes() != theirs.tobytes():
                return False
        return True


def init_network(spec: NetworkSpec, seed: int) -> ParameterSet:
    """
    Inicializa os parâmetros da rede de forma determinística.

    Pesos uniformes em [-b, b] com b = sqrt(6 / (fan_in + fan_out)); bias zero.
    A ordem de sorteio segue a ordem das camadas, então (spec, seed) iguais
    produzem conjuntos bit a bit idênticos.

    Args:
        spec (NetworkSpec): Especificação da rede
        seed (int): Semente do gerador

    Returns:
        ParameterSet: Parâmetros iniciais
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    tensors = {}
    for group, index, layer, _ in spec.layer_entries():
        if not layer.has_params:
            continue
        fan_in, fan_out = layer.fans()
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-bound, bound, size=layer.weight_shape()).astype(DTYPE)
        tensors[param_id(group, index, "weight")] = np.clip(weight, -DTYPE(bound), DTYPE(bound))
        tensors[param_id(group, index, "bias")] = np.zeros(layer.bias_shape(), dtype=DTYPE)
    return ParameterSet(tensors, spec.maskable_ids())


# --------------------------------------------------------------------------- #
# Camadas
# --------------------------------------------------------------------------- #
def _im2col(x: Tensor, kernel: int) -> Tensor:
    n, c, h, w = x.shape
    pad = kernel // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * kernel * kernel)


def conv2d_forward(x: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    n, _, h, w = x.shape
    out_channels, _, kernel, _ = weight.shape
    cols = _im2col(x, kernel)
    y = cols @ weight.reshape(out_channels, -1).T + bias
    return np.ascontiguousarray(y.reshape(n, h, w, out_channels).transpose(0, 3, 1, 2)), cols


def conv2d_backward(grad: Tensor, cols: Tensor, x_shape: tuple[int, ...],
                    weight: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    n, c, h, w = x_shape
    out_channels, _, kernel, _ = weight.shape
    g = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(n * h * w, out_channels)
    d_weight = (g.T @ cols).reshape(weight.shape)
    d_bias = g.sum(axis=0)
    d_cols = (g @ weight.reshape(out_channels, -1)).reshape(n, h, w, c, kernel, kernel)
    pad = kernel // 2
    d_padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=grad.dtype)
    # ordem fixa de acumulação
    for i in range(kernel):
        for j in range(kernel):
            d_padded[:, :, i:i + h, j:j + w] += d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return d_padded[:, :, pad:pad + h, pad:pad + w], d_weight, d_bias


def maxpool_forward(x: Tensor) -> tuple[Tensor, Tensor]:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 exige dimensões pares, recebeu {x.shape}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    index = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, index[..., None], axis=-1)[..., 0]
    return y, index


def maxpool_backward(grad: Tensor, index: Tensor, x_shape: tuple[int, ...]) -> Tensor:
    n, c, h, w = x_shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad.dtype)
    np.put_along_axis(blocks, index[..., None], grad[..., None], axis=-1)
    return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


@dataclass
class ForwardCache:
    """Registro das ativações de um forward, consumido por exatamente um backward."""
    head: str
    records: list = field(default_factory=list)
    param_shapes: dict = field(default_factory=dict)
    dtype: np.dtype = DTYPE
    consumed: bool = False

    def kink_signature(self) -> list[Tensor]:
        """Máscaras de relu e índices de max-pool (os pontos de não diferenciabilidade)."""
        signature = []
        for kind, _, saved in self.records:
            if kind == "relu":
                signature.append(saved)
            elif kind == "maxpool2x2":
                signature.append(saved[0])
        return signature


def forward(params: ParameterSet, spec: NetworkSpec, batch: Tensor, head: str) -> tuple[Tensor, ForwardCache]:
    """
    Executa o forward do tronco e da cabeça pedida.

    Args:
        params (ParameterSet): Parâmetros da rede
        spec (NetworkSpec): Especificação
        batch (Tensor): Entradas com formato (N, *spec.input_shape)
        head (str): Nome da cabeça

    Returns:
        tuple[Tensor, ForwardCache]: Saídas (N, ...) e o cache para o backward
    """
    if tuple(batch.shape[1:]) != tuple(spec.input_shape):
        raise ShapeError(f"Batch com formato {batch.shape} não casa com a entrada {spec.input_shape}")
    spec.head_groups(head)
    cache = ForwardCache(head=head, param_shapes={pid: t.shape for pid, t in params.items()},
                         dtype=batch.dtype)
    x = batch
    for group in spec.path(head):
        for index, layer in enumerate(group.layers):
            prefix = f"{group.name}/{index}"
            if layer.has_params:
                weight = params.get(f"{prefix}/weight")
                bias = params.get(f"{prefix}/bias")
                if weight is None or bias is None:
                    raise ShapeError(f"Parâmetros ausentes para a camada '{prefix}'")
                if weight.shape != layer.weight_shape() or bias.shape != layer.bias_shape():
                    raise ShapeError(f"Formato de parâmetro incorreto em '{prefix}': {weight.shape}")
            if layer.kind == "dense":
                cache.records.append(("dense", prefix, (x, weight)))
                x = x @ weight.T + bias
            elif layer.kind == "conv2d":
                y, cols = conv2d_forward(x, weight, bias)
                cache.records.append(("conv2d", prefix, (cols, x.shape, weight)))
                x = y
            elif layer.kind == "relu":
                active = x > 0
                cache.records.append(("relu", prefix, active))
                x = np.where(active, x, x.dtype.type(0))
            elif layer.kind == "maxpool2x2":
                y, pool_index = maxpool_forward(x)
                cache.records.append(("maxpool2x2", prefix, (pool_index, x.shape)))
                x = y
            else:
                cache.records.append(("flatten", prefix, x.shape))
                x = x.reshape(x.shape[0], -1)
    return x, cache


def backward(cache: ForwardCache, loss_grad: Tensor) -> ParameterSet:
    """
    Retropropaga ``loss_grad`` pelo cache de um forward.

    Parâmetros fora do caminho da cabeça recebem gradiente zero, então o resultado
    tem sempre os mesmos ids e formatos do conjunto usado no forward.
    """
    if cache.consumed:
        raise UsageError("Cache de forward já consumido; execute um novo forward.")
    cache.consumed = True
    grads = {pid: np.zeros(shape, dtype=cache.dtype) for pid, shape in cache.param_shapes.items()}
    g = loss_grad
    for kind, prefix, saved in reversed(cache.records):
        if kind == "dense":
            x, weight = saved
            grads[f"{prefix}/weight"] = g.T @ x
            grads[f"{prefix}/bias"] = g.sum(axis=0)
            g = g @ weight
        elif kind == "conv2d":
            cols, x_shape, weight = saved
            g, d_weight, d_bias = conv2d_backward(g, cols, x_shape, weight)
            grads[f"{prefix}/weight"] = d_weight
            grads[f"{prefix}/bias"] = d_bias
        elif kind == "relu":
            g = np.where(saved, g, g.dtype.type(0))
        elif kind == "maxpool2x2":
            pool_index, x_shape = saved
            g = maxpool_backward(g, pool_index, x_shape)
        else:
            g = g.reshape(saved)
    return ParameterSet(grads, maskable=[])


def predict(params: ParameterSet, spec: NetworkSpec, inputs: Tensor, head: str, chunk: int = 128) -> Tensor:
    """Forward em blocos, sem guardar cache (usado na avaliação)."""
    outputs = [forward(params, spec, inputs[start:start + chunk], head)[0]
               for start in range(0, len(inputs), chunk)]
    return np.concatenate(outputs, axis=0)


# --------------------------------------------------------------------------- #
# Funções de perda (média no batch, soma nas demais dimensões)
# --------------------------------------------------------------------------- #
def squared_error(outputs: Tensor, targets: Tensor) -> tuple[float, Tensor]:
    diff = outputs - targets.astype(outputs.dtype)
    n = outputs.shape[0]
    return float(np.sum(diff * diff)) / n, (2 * diff) / outputs.dtype.type(n)


def softmax_cross_entropy(logits: Tensor, labels: Tensor) -> tuple[float, Tensor]:
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    rows = np.arange(n)
    loss = -float(np.sum(log_probs[rows, labels])) / n
    grad = exp / total
    grad[rows, labels] -= 1
    return loss, grad / logits.dtype.type(n)


def sigmoid_bce(logits: Tensor, targets: Tensor) -> tuple[float, Tensor]:
    n = logits.shape[0]
    targets = targets.astype(logits.dtype)
    per_elem = np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    probs = 0.5 * (1 + np.tanh(0.5 * logits))
    return float(np.sum(per_elem)) / n, (probs - targets) / logits.dtype.type(n)


LOSSES = {
    "squared_error": squared_error,
    "cross_entropy": softmax_cross_entropy,
    "bce": sigmoid_bce,
}


@dataclass(frozen=True)
class Objective:
    """Rede, cabeça e perda usadas num passo de treino."""
    spec: NetworkSpec
    head: str
    loss: str = "squared_error"

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise SpecError(f"Perda desconhecida: '{self.loss}'")
        self.spec.head_groups(self.head)


def loss_and_grads(params: ParameterSet, objective: Objective, inputs: Tensor,
                   targets: Tensor) -> tuple[float, ParameterSet]:
    outputs, cache = forward(params, objective.spec, inputs, objective.head)
    loss, grad = LOSSES[objective.loss](outputs, targets)
    return loss, backward(cache, grad)


# --------------------------------------------------------------------------- #
# Otimização
# --------------------------------------------------------------------------- #
@dataclass
class OptimizerState:
    buffers: dict[str, Tensor]
    momentum: float = 0.9
    weight_decay: float = 5e-4

    @classmethod
    def zeros_like(cls, params: ParameterSet, momentum: float = 0.9,
                   weight_decay: float = 5e-4) -> "OptimizerState":
        return cls({pid: np.zeros_like(t) for pid, t in params.items()}, momentum, weight_decay)

    def copy(self) -> "OptimizerState":
        return OptimizerState({pid: b.copy() for pid, b in self.buffers.items()},
                              self.momentum, self.weight_decay)

    def equals(self, other: "OptimizerState") -> bool:
        if (self.momentum, self.weight_decay) != (other.momentum, other.weight_decay):
            return False
        if list(self.buffers) != list(other.buffers):
            return False
        return all(b.tobytes() == other.buffers[pid].tobytes() for pid, b in self.buffers.items())


def sgd_step(params: ParameterSet, grads: Mapping[str, Tensor], opt_state: OptimizerState,
             lr: float) -> ParameterSet:
    """
    Um passo de SGD com momentum e weight decay.

    v <- mu*v + g + lambda*w ;  w <- w - lr*v

    Os buffers de momentum de ``opt_state`` são atualizados no lugar; os parâmetros
    atualizados são devolvidos num novo ParameterSet.
    """
    mu = DTYPE(opt_state.momentum)
    decay = DTYPE(opt_state.weight_decay)
    step = DTYPE(lr)
    updated = {}
    for pid, weight in params.items():
        grad = grads[pid]
        buffer = opt_state.buffers[pid]
        if grad.shape != weight.shape or buffer.shape != weight.shape:
            raise ShapeError(f"Formatos desalinhados em '{pid}': {weight.shape}, {grad.shape}, {buffer.shape}")
        velocity = mu * buffer + grad + decay * weight
        opt_state.buffers[pid] = velocity
        updated[pid] = weight - step * velocity
    return ParameterSet(updated, params.maskable_ids)


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    warmup_iters: int = 0
    decay_milestones: tuple[int, ...] = ()
    decay_factor: float = 0.1

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr deve ser positivo, recebido {self.base_lr}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor deve estar em (0, 1], recebido {self.decay_factor}")
        if self.warmup_iters < 0:
            raise ConfigError("warmup_iters não pode ser negativo.")
        milestones = tuple(self.decay_milestones)
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ConfigError(f"Marcos de decaimento devem ser estritamente crescentes: {milestones}")
        object.__setattr__(self, "decay_milestones", milestones)


def lr_at(schedule: LrSchedule, iteration: int) -> float:
    """Taxa de aprendizado na iteração dada (rampa linear, depois degraus)."""
    if iteration < 0:
        raise RangeError(f"Iteração negativa: {iteration}")
    if iteration < schedule.warmup_iters:
        return schedule.base_lr * (iteration + 1) / schedule.warmup_iters
    passed = sum(1 for milestone in schedule.decay_milestones if iteration >= milestone)
    return schedule.base_lr * schedule.decay_factor ** passed


# --------------------------------------------------------------------------- #
# Verificação de gradiente
# --------------------------------------------------------------------------- #
def grad_check(spec: NetworkSpec, params: ParameterSet, batch: Tensor, eps: float,
               head: str | None = None, targets: Tensor | None = None, loss: str = "squared_error",
               samples: int = 200, seed: int = 0) -> float:
    """
    Compara gradientes analíticos com diferenças centrais.

    A comparação roda em float64 sobre uma amostra determinística de coordenadas.
    Coordenadas cuja perturbação troca o padrão de ativação (uma relu cruzando zero
    ou um max-pool trocando de vencedor) são descartadas e outra é sorteada.

    Returns:
        float: Maior erro relativo |a - n| / max(|a| + |n|, 1e-6)
    """
    if eps <= 0:
        raise RangeError(f"eps deve ser positivo, recebido {eps}")
    head = head or spec.head_names[0]
    rng = np.random.default_rng(seed)
    params64 = params.astype(np.float64)
    inputs = batch.astype(np.float64)
    if targets is None:
        targets = rng.standard_normal((batch.shape[0], *spec.output_shape(head)))
    objective = Objective(spec, head, loss)
    _, grads = loss_and_grads(params64, objective, inputs, targets)

    path_groups = {g.name for g in spec.path(head)}
    coords = [(pid, i) for pid, t in params64.items() if group_of(pid) in path_groups for i in range(t.size)]
    order = rng.permutation(len(coords))
    worst = 0.0
    checked = 0
    for position in order:
        if checked >= samples:
            break
        pid, flat = coords[position]
        losses, signatures = [], []
        for delta in (eps, -eps):
            tensor = params64[pid].copy()
            tensor.flat[flat] += delta
            outputs, cache = forward(params64.replace({pid: tensor}), spec, inputs, head)
            losses.append(LOSSES[loss](outputs, targets)[0])
            signatures.append(cache.kink_signature())
        if any(not np.array_equal(a, b) for a, b in zip(*signatures)):
            continue
        numeric = (losses[0] - losses[1]) / (2 * eps)
        analytic = float(grads[pid].flat[flat])
        error = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
        worst = max(worst, error)
        checked += 1
    logger.debug("grad_check: %d coordenadas verificadas, erro máximo %.3g", checked, worst)
    return worst
