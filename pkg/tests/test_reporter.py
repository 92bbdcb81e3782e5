# tests/test_reporter.py
import math
import os

import pytest

from app.recipes import Cell, CellOutcome, ResultRow
from app.reporter import (CSV_COLUMNS, Aggregate, aggregate, convergence_table, dense_final_loss_epoch,
                          epochs_to_reach, is_winning_ticket, layer_pruned_fractions, read_results, report,
                          write_plots, write_results)
from errors import AggregationError


def _outcome(cell_id, seed, metric, variant="imp", task="classify", recipe="sparsity_sweep", sparsity=0.5,
             p=0.8, error="", extras=None, **cell_fields):
    cell = Cell(cell_id, variant, task, p, **cell_fields)
    row = ResultRow(recipe, cell_id, seed, p, sparsity, cell.rounds, cell.scope, cell.rewind_iter,
                    "+".join(cell.groups), task, "accuracy", metric, 1000, 5000, error=error)
    return CellOutcome(cell, row, extras or {})


def _row(cell_id, metric, task="classify", error="", sparsity=0.5):
    return {"recipe": "sparsity_sweep", "cell_id": cell_id, "task": task, "metric_name": "accuracy",
            "metric_value": metric, "sparsity_exact": sparsity, "error": error}


def _aggregate(mean, std, cell_id="c", task="classify"):
    return Aggregate("r", cell_id, task, "accuracy", 5, mean, std, 0.5, False)


class TestAggregate:
    def test_mean_and_sample_std(self):
        summary = aggregate([_row("c", 68.0), _row("c", 70.0)])
        assert summary[0].metric_mean == 69.0
        assert summary[0].metric_std == pytest.approx(1.414, abs=1e-3)
        assert not summary[0].std_flagged

    def test_single_replicate_flagged(self):
        summary = aggregate([_row("c", 0.7)])
        assert summary[0].metric_std == 0.0
        assert summary[0].std_flagged

    def test_failed_rows_ignored(self):
        summary = aggregate([_row("c", 0.7), _row("c", float("nan"), error="TrainingError: x")])
        assert summary[0].n == 1

    def test_winning_column(self):
        rows = [_row("dense_classify", 0.80, sparsity=0.0), _row("dense_classify", 0.84, sparsity=0.0),
                _row("p80", 0.80), _row("p80", 0.81), _row("p90", 0.60), _row("p90", 0.62)]
        summary = {item.cell_id: item for item in aggregate(rows)}
        assert summary["dense_classify"].winning is None
        assert summary["p80"].winning is True
        assert summary["p90"].winning is False


class TestWinningRule:
    def test_higher_is_better(self):
        baseline = _aggregate(0.80, 0.02)
        assert is_winning_ticket(_aggregate(0.785, 0.0), baseline)
        assert not is_winning_ticket(_aggregate(0.77, 0.0), baseline)

    def test_lower_is_better(self):
        baseline = _aggregate(0.10, 0.01, task="keypoint")
        assert is_winning_ticket(_aggregate(0.105, 0.0, task="keypoint"), baseline, higher_is_better=False)
        assert not is_winning_ticket(_aggregate(0.12, 0.0, task="keypoint"), baseline, higher_is_better=False)


class TestResultsFiles:
    def test_write_and_read(self, tmp_path):
        outcomes = [_outcome("dense_classify", 0, 0.9, variant="dense", sparsity=0.0, p=0.0,
                             extras={"history": []}),
                    _outcome("imp_a", 0, 0.85), _outcome("imp_a", 1, 0.0, error="TrainingError: nan")]
        path = write_results(outcomes, str(tmp_path))
        assert os.path.basename(path) == "results_sparsity_sweep.csv"
        rows = read_results(path)
        assert len(rows) == 3
        assert rows[0]["breakdown_ref"] == os.path.join("breakdown", "dense_classify__s0.json")
        assert os.path.exists(tmp_path / "breakdown" / "dense_classify__s0.json")
        assert rows[1]["metric_value"] == 0.85
        assert rows[2]["error"] == "TrainingError: nan"

    def test_metric_columns_are_stable(self, tmp_path):
        first = write_results([_outcome("imp_a", 0, 0.123456789)], str(tmp_path / "a"))
        second = write_results([_outcome("imp_a", 0, 0.123456789)], str(tmp_path / "b"))
        assert read_results(first)[0]["metric_value"] == read_results(second)[0]["metric_value"]

    def test_schema_mismatch(self, tmp_path):
        path = tmp_path / "results_bad.csv"
        path.write_text("recipe,cell_id\nx,y\n", encoding="utf-8")
        with pytest.raises(AggregationError):
            read_results(str(path))

    def test_report(self, tmp_path):
        outcomes = [_outcome("imp_a", 0, 68.0), _outcome("imp_a", 1, 70.0)]
        write_results(outcomes, str(tmp_path))
        summary = report(str(tmp_path))
        assert len(summary) == 1 and summary[0].metric_mean == 69.0
        header = (tmp_path / "summary.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header.startswith("recipe,cell_id,task")
        assert "| imp_a |" in (tmp_path / "summary.md").read_text(encoding="utf-8")

    def test_report_without_results(self, tmp_path):
        with pytest.raises(AggregationError):
            report(str(tmp_path))

    def test_nothing_to_write(self, tmp_path):
        with pytest.raises(AggregationError):
            write_results([], str(tmp_path))

    def test_extended_columns_last(self):
        assert CSV_COLUMNS[-3:] == ["error", "wall_time", "breakdown_ref"]


class TestConvergence:
    HISTORY = [[10, 1.0, 0.9, 0.5], [20, 2.0, 0.6, 0.7], [30, 3.0, 0.5, 0.8]]

    def test_final_loss_and_epoch(self):
        assert dense_final_loss_epoch(self.HISTORY) == (0.5, 3.0)
        loss, epoch = dense_final_loss_epoch([])
        assert math.isnan(loss) and math.isnan(epoch)

    def test_epochs_to_reach(self):
        assert epochs_to_reach(self.HISTORY, 0.6) == 2.0
        assert epochs_to_reach(self.HISTORY, 0.1) == math.inf

    def test_table(self):
        sparse_history = [[10, 1.0, 0.7, 0.6], [20, 2.0, 0.45, 0.8]]
        outcomes = [_outcome("dense_classify", 0, 0.8, variant="dense", extras={"history": self.HISTORY}),
                    _outcome("imp_a", 0, 0.8, extras={"history": sparse_history})]
        rows = convergence_table(outcomes)
        assert rows == [{"cell_id": "imp_a", "task": "classify", "seed": 0, "dense_final_loss": 0.5,
                         "dense_epochs": 3.0, "epochs_to_reach": 2.0}]


class TestPlots:
    @pytest.mark.parametrize("recipe, variant", [("sparsity_sweep", "imp"), ("rounds_sweep", "imp"),
                                                 ("transfer_compare", "ticket_transfer")])
    def test_one_svg_per_recipe(self, tmp_path, recipe, variant):
        outcomes = [_outcome(f"{variant}_{p}", seed, 0.7 + seed / 100, variant=variant, recipe=recipe, p=p,
                             sparsity=p) for p in (0.5, 0.8) for seed in range(2)]
        written = write_plots(outcomes, str(tmp_path))
        assert written == [os.path.join(str(tmp_path), f"{recipe}.svg")]
        assert (tmp_path / f"{recipe}.svg").read_text(encoding="utf-8").startswith("<svg")

    def test_scope_compare_adds_layer_chart(self, tmp_path):
        extras = {"layers": [["base/0/weight", 0.4], ["top/0/weight", 0.9]]}
        outcomes = [_outcome(f"imp_{scope}", 0, 0.7, recipe="scope_compare", scope=scope, extras=extras)
                    for scope in ("global", "layerwise")]
        written = write_plots(outcomes, str(tmp_path))
        assert len(written) == 2
        assert layer_pruned_fractions(outcomes) == {"base/0/weight": 0.4, "top/0/weight": 0.9}

    def test_early_bird_iou_curves(self, tmp_path):
        extras = {"iou": [[2, None, 0.5], [4, 0.7, 0.9], [6, 0.96, 1.0]]}
        outcomes = [_outcome("eb", seed, 0.7, variant="early_bird", recipe="early_bird", extras=extras)
                    for seed in range(2)]
        written = write_plots(outcomes, str(tmp_path))
        assert "IoU" in (tmp_path / "early_bird.svg").read_text(encoding="utf-8")
        assert len(written) == 1

    def test_early_bird_metric_per_candidate(self, tmp_path):
        extras = {"iou": [[2, None, 0.5], [4, 0.7, 0.9], [6, 0.96, 1.0]], "candidate_quality": [[2, 0.55], [6, 0.68]]}
        outcomes = [_outcome("eb", seed, 0.7, variant="early_bird", recipe="early_bird", extras=extras)
                    for seed in range(2)]
        write_plots(outcomes, str(tmp_path))
        svg = (tmp_path / "early_bird.svg").read_text(encoding="utf-8")
        assert "accuracy do ticket da sondagem" in svg
        assert svg.count("<polyline") == 3

    def test_no_outcomes(self, tmp_path):
        assert write_plots([], str(tmp_path)) == []
