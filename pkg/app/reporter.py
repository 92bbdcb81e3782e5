# app/reporter.py
import csv
import glob
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from errors import AggregationError
from shapes_tasks import task_spec
from svg_plots import Series, bar_chart, line_chart

from .recipes import CellOutcome, ResultRow

logger = logging.getLogger(__name__)

CSV_COLUMNS = [f.name for f in fields(ResultRow)]
SUMMARY_COLUMNS = ["recipe", "cell_id", "task", "metric_name", "n", "metric_mean", "metric_std",
                   "sparsity_mean", "std_flagged", "winning"]
_NUMERIC = {"seed": int, "p_target": float, "sparsity_exact": float, "rounds": int, "metric_value": float,
            "bytes": int, "macs_adjusted": int, "wall_time": float}


@dataclass(frozen=True)
class Aggregate:
    recipe: str
    cell_id: str
    task: str
    metric_name: str
    n: int
    metric_mean: float
    metric_std: float
    sparsity_mean: float
    std_flagged: bool
    winning: bool | None = None


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_path(out_dir: str, recipe: str) -> str:
    return os.path.join(out_dir, f"results_{recipe}.csv")


def write_results(outcomes: list[CellOutcome], out_dir: str) -> str:
    """
    Grava o CSV da receita e um JSON de detalhamento por (célula, semente).

    Args:
        outcomes (list[CellOutcome]): Resultados da grade
        out_dir (str): Diretório de saída

    Returns:
        str: Caminho do CSV
    """
    if not outcomes:
        raise AggregationError("Nenhum resultado para gravar.")
    breakdown_dir = os.path.join(out_dir, "breakdown")
    os.makedirs(breakdown_dir, exist_ok=True)
    for outcome in outcomes:
        if outcome.extras:
            name = f"{outcome.cell.cell_id}__s{outcome.row.seed}.json"
            with open(os.path.join(breakdown_dir, name), "w", encoding="utf-8") as handle:
                json.dump(outcome.extras, handle, indent=1)
            outcome.row.breakdown_ref = os.path.join("breakdown", name)
    path = results_path(out_dir, outcomes[0].row.recipe)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for outcome in outcomes:
            row = asdict(outcome.row)
            writer.writerow([_format(row[column]) for column in CSV_COLUMNS])
    logger.info("Resultados salvos em %s (%d linhas)", path, len(outcomes))
    return path


def read_results(path: str) -> list[dict]:
    """Lê um CSV de resultados, validando o esquema de colunas."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise AggregationError(f"Esquema de colunas inesperado em {path}: {header}")
        rows = []
        for values in reader:
            if len(values) != len(CSV_COLUMNS):
                raise AggregationError(f"Linha com {len(values)} colunas em {path}")
            row = dict(zip(CSV_COLUMNS, values))
            for column, cast in _NUMERIC.items():
                row[column] = cast(row[column]) if row[column] != "" else float("nan")
            rows.append(row)
    return rows


def aggregate(rows: list[dict]) -> list[Aggregate]:
    """Média e desvio padrão amostral por célula; linhas com erro são ignoradas."""
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for row in rows:
        if row["error"]:
            continue
        groups[(row["recipe"], row["cell_id"], row["task"], row["metric_name"])].append(row)
    summary = []
    for (recipe, cell_id, task, metric_name), members in groups.items():
        metrics = np.array([m["metric_value"] for m in members], dtype=np.float64)
        sparsities = np.array([m["sparsity_exact"] for m in members], dtype=np.float64)
        single = len(members) == 1
        if single:
            logger.warning("Célula %s tem uma única réplica; desvio padrão fixado em 0", cell_id)
        std = 0.0 if single else float(metrics.std(ddof=1))
        summary.append(Aggregate(recipe, cell_id, task, metric_name, len(members), float(metrics.mean()),
                                 std, float(sparsities.mean()), single))
    return mark_winners(summary)


def is_winning_ticket(candidate: Aggregate, baseline: Aggregate, higher_is_better: bool = True) -> bool:
    """Vence se a média está a no máximo um desvio padrão (das réplicas da base) da média densa."""
    if higher_is_better:
        return candidate.metric_mean >= baseline.metric_mean - baseline.metric_std
    return candidate.metric_mean <= baseline.metric_mean + baseline.metric_std


def mark_winners(summary: list[Aggregate]) -> list[Aggregate]:
    """Preenche ``winning`` de cada célula esparsa contra a célula densa da mesma receita e tarefa."""
    baselines = {(item.recipe, item.task): item for item in summary if item.cell_id == f"dense_{item.task}"}
    marked = []
    for item in summary:
        baseline = baselines.get((item.recipe, item.task))
        if baseline is None or item is baseline:
            marked.append(item)
            continue
        marked.append(replace(item, winning=is_winning_ticket(item, baseline, task_spec(item.task).higher_is_better)))
    return marked


def to_markdown(summary: list[Aggregate]) -> str:
    lines = ["| recipe | cell | task | metric | n | mean | std | sparsity | winning |",
             "|---|---|---|---|---|---|---|---|---|"]
    for item in summary:
        flag = " (1 réplica)" if item.std_flagged else ""
        winning = "" if item.winning is None else ("sim" if item.winning else "não")
        lines.append(f"| {item.recipe} | {item.cell_id} | {item.task} | {item.metric_name} | {item.n} | "
                     f"{item.metric_mean:.4f} | {item.metric_std:.4f}{flag} | {item.sparsity_mean:.4f} | {winning} |")
    return "\n".join(lines) + "\n"


def report(results_dir: str) -> list[Aggregate]:
    """
    Agrega todos os ``results_*.csv`` do diretório em ``summary.csv`` e ``summary.md``.

    Returns:
        list[Aggregate]: Média ± desvio padrão por célula
    """
    paths = sorted(glob.glob(os.path.join(results_dir, "results_*.csv")))
    if not paths:
        raise AggregationError(f"Nenhum CSV de resultados em {results_dir}")
    rows = [row for path in paths for row in read_results(path)]
    summary = aggregate(rows)
    with open(os.path.join(results_dir, "summary.csv"), "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(SUMMARY_COLUMNS)
        for item in summary:
            writer.writerow([_format(value) for value in asdict(item).values()])
    with open(os.path.join(results_dir, "summary.md"), "w", encoding="utf-8") as handle:
        handle.write(to_markdown(summary))
    logger.info("Relatório de %d células salvo em %s", len(summary), results_dir)
    return summary


# --------------------------------------------------------------------------- #
# Gráficos
# --------------------------------------------------------------------------- #
def _stats(values: list[float]) -> tuple[float, float]:
    array = np.array(values, dtype=np.float64)
    return float(array.mean()), float(array.std(ddof=1)) if len(array) > 1 else 0.0


def _by_cell(outcomes: list[CellOutcome]) -> dict[str, list[CellOutcome]]:
    cells: dict[str, list[CellOutcome]] = {}
    for outcome in outcomes:
        if not outcome.row.error:
            cells.setdefault(outcome.cell.cell_id, []).append(outcome)
    return cells


def _series(label: str, points: list[tuple[float, list[float]]]) -> Series:
    points = sorted(points, key=lambda item: item[0])
    stats = [_stats(values) for _, values in points]
    return Series(label, [x for x, _ in points], [m for m, _ in stats], [s for _, s in stats])


def layer_pruned_fractions(outcomes: list[CellOutcome]) -> dict[str, float]:
    """Fração podada média por camada (sobre as sementes) a partir dos detalhamentos."""
    totals: dict[str, list[float]] = {}
    for outcome in outcomes:
        for pid, fraction in outcome.extras.get("layers", []):
            totals.setdefault(pid, []).append(fraction)
    return {pid: float(np.mean(values)) for pid, values in totals.items()}


def write_plots(outcomes: list[CellOutcome], out_dir: str) -> list[str]:
    """Um ou mais SVGs por receita, no formato das figuras de ablação."""
    if not outcomes:
        return []
    recipe = outcomes[0].row.recipe
    cells = _by_cell(outcomes)
    metric = next((o.row.metric_name for o in outcomes if o.row.metric_name), "metric")
    path = os.path.join(out_dir, f"{recipe}.svg")
    written = []

    def members(variant: str | None = None):
        return [(group[0].cell, group) for group in cells.values()
                if variant is None or group[0].cell.variant == variant]

    def points(items, key):
        return [(key(cell, group), [o.row.metric_value for o in group]) for cell, group in items]

    if recipe in ("sparsity_sweep", "module_pruning"):
        tasks = sorted({cell.task for cell, _ in members()})
        series = [_series(task, points([(c, g) for c, g in members() if c.task == task],
                                       lambda c, g: float(np.mean([o.row.sparsity_exact for o in g]))))
                  for task in tasks]
        written.append(line_chart(path, recipe, "esparsidade da rede", metric, series))
    elif recipe == "resetting_sweep":
        series = [_series("ticket", points(members("imp"), lambda c, g: float(c.rewind_iter)))]
        written.append(line_chart(path, recipe, "iteração de rewind", metric, series))
    elif recipe == "rounds_sweep":
        ps = sorted({cell.p for cell, _ in members("imp")})
        series = [_series(f"p={p:g}", points([(c, g) for c, g in members("imp") if c.p == p],
                                             lambda c, g: float(c.rounds))) for p in ps]
        written.append(line_chart(path, recipe, "rodadas T", metric, series))
    elif recipe == "scope_compare":
        series = [_series(scope, points([(c, g) for c, g in members("imp") if c.scope == scope],
                                        lambda c, g: c.p)) for scope in ("global", "layerwise")]
        written.append(line_chart(path, recipe, "p alvo", metric, series))
        global_cells = [(c, g) for c, g in members("imp") if c.scope == "global"]
        if global_cells:
            cell, group = max(global_cells, key=lambda item: item[0].p)
            fractions = layer_pruned_fractions(group)
            written.append(bar_chart(os.path.join(out_dir, f"{recipe}_layers.svg"),
                                     f"fração podada por camada (global, p={cell.p:g})",
                                     list(fractions), list(fractions.values()), "fração podada"))
    elif recipe == "early_bird":
        iou_prev: dict[int, list[float]] = defaultdict(list)
        iou_final: dict[int, list[float]] = defaultdict(list)
        quality: dict[int, list[float]] = defaultdict(list)
        for _, group in members("early_bird"):
            for outcome in group:
                for iteration, prev, final in outcome.extras.get("iou", []):
                    if prev is not None:
                        iou_prev[iteration].append(prev)
                    if final is not None:
                        iou_final[iteration].append(final)
                for iteration, value in outcome.extras.get("candidate_quality", []):
                    quality[iteration].append(value)
        series = [_series("IoU com a sondagem anterior", list(iou_prev.items())),
                  _series("IoU com a máscara final", list(iou_final.items()))]
        if quality:
            series.append(_series(f"{metric} do ticket da sondagem", sorted(quality.items())))
        written.append(line_chart(path, recipe, "iteração de sondagem", f"IoU / {metric}", series))
    elif recipe in ("transfer_compare", "cross_task"):
        labels, values = [], []
        for cell, group in members():
            labels.append(cell.variant if cell.variant == "dense" else f"{cell.variant} p={cell.p:g}")
            values.append(_stats([o.row.metric_value for o in group])[0])
        written.append(bar_chart(path, recipe, labels, values, metric))
    elif recipe == "convergence":
        series = []
        for cell, group in members():
            curve: dict[float, list[float]] = defaultdict(list)
            for outcome in group:
                for _, epoch, loss, _ in outcome.extras.get("history", []):
                    curve[epoch].append(loss)
            label = f"{cell.task} {'denso' if cell.variant == 'dense' else f'p={cell.p:g}'}"
            series.append(_series(label, list(curve.items())))
        written.append(line_chart(path, recipe, "época", "loss de validação", series))
    return written


def dense_final_loss_epoch(history: list[list[float]]) -> tuple[float, float]:
    """(loss final, época final) de um histórico ``[iteração, época, loss, métrica]``."""
    if not history:
        return math.nan, math.nan
    _, epoch, loss, _ = history[-1]
    return loss, epoch


def epochs_to_reach(history: list[list[float]], target_loss: float) -> float:
    """Primeira época em que a loss de validação fica <= ``target_loss`` (inf se nunca)."""
    for _, epoch, loss, _ in history:
        if loss <= target_loss:
            return epoch
    return math.inf


CONVERGENCE_COLUMNS = ["cell_id", "task", "seed", "dense_final_loss", "dense_epochs", "epochs_to_reach"]


def convergence_table(outcomes: list[CellOutcome]) -> list[dict]:
    """
    Para cada (célula esparsa, semente): em que época a loss de validação chega à loss
    final da rede densa da mesma tarefa e semente.
    """
    dense = {(o.cell.task, o.row.seed): o.extras.get("history", []) for o in outcomes
             if not o.row.error and o.cell.variant == "dense"}
    rows = []
    for outcome in outcomes:
        if outcome.row.error or outcome.cell.variant == "dense":
            continue
        baseline = dense.get((outcome.cell.task, outcome.row.seed))
        if not baseline:
            continue
        target_loss, dense_epochs = dense_final_loss_epoch(baseline)
        rows.append({"cell_id": outcome.cell.cell_id, "task": outcome.cell.task, "seed": outcome.row.seed,
                     "dense_final_loss": target_loss, "dense_epochs": dense_epochs,
                     "epochs_to_reach": epochs_to_reach(outcome.extras.get("history", []), target_loss)})
    return rows


def write_convergence(outcomes: list[CellOutcome], out_dir: str) -> str:
    path = os.path.join(out_dir, "convergence.csv")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CONVERGENCE_COLUMNS)
        for row in convergence_table(outcomes):
            writer.writerow([_format(row[column]) for column in CONVERGENCE_COLUMNS])
    logger.info("Tabela de convergência salva em %s", path)
    return path


class Reporter:
    """Grava CSV, JSONs de detalhamento e gráficos de uma execução."""

    def __init__(self, app):
        self.app = app

    def export(self, outcomes: list[CellOutcome], out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = write_results(outcomes, out_dir)
        write_plots(outcomes, out_dir)
        if outcomes[0].row.recipe == "convergence":
            write_convergence(outcomes, out_dir)
        return path

    def summarize(self, results_dir: str) -> list[Aggregate]:
        return report(results_dir)
