# errors.py
"""Exceções usadas por todos os módulos do ticket_finder."""


class TicketFinderError(Exception):
    """Erro base do projeto."""


class SpecError(TicketFinderError):
    """Especificação de rede ou de tarefa inconsistente."""


class ShapeError(TicketFinderError):
    """Formato de tensor incompatível com a operação."""


class UsageError(TicketFinderError):
    """Uso incorreto de um objeto (ex.: cache já consumido)."""


class AlignmentError(TicketFinderError):
    """Máscara e parâmetros (ou duas máscaras) não estão alinhados."""


class ContractError(TicketFinderError):
    """Pré-condição de contrato violada."""


class RangeError(TicketFinderError, ValueError):
    """Valor numérico fora do intervalo permitido."""


class EmptyDomainError(TicketFinderError):
    """Não há elementos sobreviventes para podar."""


class SnapshotMissingError(TicketFinderError, KeyError):
    """Não existe snapshot para a iteração pedida."""


class UnknownGroupError(TicketFinderError, KeyError):
    """Nome de grupo inexistente."""


class TrainingError(TicketFinderError):
    """Treinamento divergiu (loss não finita)."""

    def __init__(self, message: str, round_index: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.round_index = round_index
        self.iteration = iteration


class MappingError(TicketFinderError):
    """Mapeamento de grupos inválido para transferência."""


class FormatError(TicketFinderError):
    """Arquivo de checkpoint corrompido ou inválido."""

    def __init__(self, message: str, tensor_id: str | None = None):
        if tensor_id is not None:
            message = f"{message} (tensor '{tensor_id}')"
        super().__init__(message)
        self.tensor_id = tensor_id


class ConfigError(TicketFinderError):
    """Configuração inválida."""


class AggregationError(TicketFinderError):
    """Não foi possível agregar os resultados."""
