# tests/test_runner.py
import app.runner as runner_module
from app.config import DataSection, ExperimentConfig, GridSection, TrainSection
from app.recipes import run_cell
from app.runner import ExperimentRunner
from errors import TrainingError


def _config(**overrides) -> ExperimentConfig:
    values = dict(grid=GridSection(p=(0.5, 0.8)), replicates=3, workers=4,
                  train=TrainSection(iters=4, batch_size=16), data=DataSection(n_train=64, n_val=32, image_size=8))
    values.update(overrides)
    return ExperimentConfig("sparsity_sweep", **values)


def test_grid_order_and_counts():
    runner = ExperimentRunner(None)
    outcomes = runner.run_grid(_config(), progress=False)
    assert [(o.cell.variant, o.row.seed) for o in outcomes[:4]] == [
        ("dense", 0), ("dense", 1), ("dense", 2), ("imp", 0)]
    assert runner.completed_count == 9
    assert runner.failed_count == 0


def test_failures_are_counted_once_per_row(monkeypatch):
    def flaky(config, cell, seed, context):
        if cell.variant == "imp" and seed != 1:
            raise TrainingError("loss não finita", iteration=2)
        return run_cell(config, cell, seed, context)

    monkeypatch.setattr(runner_module, "run_cell", flaky)
    runner = ExperimentRunner(None)
    outcomes = runner.run_grid(_config(), progress=False)
    failed = [o for o in outcomes if o.row.error]
    assert len(failed) == 4
    assert runner.failed_count == 4
    assert all(o.row.error.startswith("TrainingError") for o in failed)
    assert runner.completed_count == 9
