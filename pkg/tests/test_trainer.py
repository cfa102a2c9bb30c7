import dataclasses
import math
from pathlib import Path

import pytest
import torch

from respiratory_sed import trainer
from respiratory_sed.config import LossWeights, Settings
from respiratory_sed.detector import build_model
from respiratory_sed.storage import read_csv_rows, read_json
from respiratory_sed.synthetic import generate_dataset, synthetic_classes


def _settings(**train_overrides) -> Settings:
    settings = Settings()
    return dataclasses.replace(
        settings,
        model=dataclasses.replace(settings.model, d_node=16),
        augment=dataclasses.replace(settings.augment, enabled=False),
        dataset=dataclasses.replace(settings.dataset, classes=synthetic_classes()),
        train=dataclasses.replace(settings.train, **{"epochs": 1, "batch_size": 2, **train_overrides}),
    )


def _batch(tmp_path: Path, settings: Settings) -> trainer.TrainingBatch:
    records = generate_dataset(str(tmp_path), n_clips=2, duration_s=3.0, seed=5)
    dataset = trainer.ClipDataset(records, str(tmp_path), settings, use_cache=False)
    return trainer.collate_clips([dataset[0], dataset[1]])


def test_learning_rate_closed_forms() -> None:
    assert trainer.node_lr(0) == pytest.approx(1e-3, abs=1e-12)
    assert trainer.node_lr(126) == pytest.approx(9.9e-4, abs=1e-12)
    assert trainer.node_lr(252) == pytest.approx(9.801e-4, abs=1e-12)

    assert trainer.interval_lr(0, 252) == pytest.approx(1e-3, abs=1e-12)
    assert trainer.interval_lr(126, 252) == pytest.approx(6e-4, abs=1e-12)
    assert trainer.interval_lr(252, 252) == pytest.approx(2e-4, abs=1e-12)


def test_schedulers_follow_closed_forms() -> None:
    torch.manual_seed(0)
    settings = _settings()
    optimizers = trainer.DualOptimizer(build_model(settings), settings, t_max=252)

    seen = {}
    for step in range(253):
        if step in (0, 63, 126, 200, 252):
            seen[step] = optimizers.current_lrs()
        optimizers.step()

    for step, (node_rate, interval_rate) in seen.items():
        assert node_rate == pytest.approx(trainer.node_lr(step), abs=1e-10)
        assert interval_rate == pytest.approx(trainer.interval_lr(step, 252), abs=1e-10)


def test_parameter_partition_is_exact() -> None:
    model = build_model(_settings())
    node_params, interval_params = trainer.partition_parameters(model)

    node_ids = {id(parameter) for parameter in node_params}
    interval_ids = {id(parameter) for parameter in interval_params}
    assert not node_ids & interval_ids
    assert node_ids | interval_ids == {id(parameter) for parameter in model.parameters()}
    assert interval_ids == {id(parameter) for parameter in model.refiner.parameters()}


def test_build_optimizers_derives_annealing_length() -> None:
    settings = _settings()
    settings = dataclasses.replace(settings, train=dataclasses.replace(settings.train, epochs=3))

    assert trainer.build_optimizers(build_model(settings), settings, steps_per_epoch=7).t_max == 21


def test_zero_weights_leave_parameters_unchanged(tmp_path: Path) -> None:
    torch.manual_seed(1)
    settings = _settings()
    zero = LossWeights(node_conf=0.0, node_cls=0.0, interval_conf=0.0, interval_cls=0.0, interval_loc=0.0)
    settings = dataclasses.replace(settings, loss=zero)
    model = build_model(settings)
    optimizers = trainer.build_optimizers(model, settings, steps_per_epoch=1)
    before = [parameter.detach().clone() for parameter in model.parameters()]

    steps = list(trainer.train_epoch([_batch(tmp_path, settings)], model, optimizers, settings))

    assert [step for step, _ in steps] == [1]
    assert steps[0][1].total == 0.0
    for old, new in zip(before, model.parameters()):
        assert torch.equal(old, new.detach())


def test_non_finite_loss_aborts(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    torch.manual_seed(2)
    settings = _settings()
    model = build_model(settings)
    optimizers = trainer.build_optimizers(model, settings, steps_per_epoch=1)
    batch = _batch(tmp_path, settings)
    real = trainer.compute_losses

    def _poisoned(*args, **kwargs):
        loss, report = real(*args, **kwargs)
        return loss * math.nan, report

    monkeypatch.setattr(trainer, "compute_losses", _poisoned)
    with pytest.raises(trainer.TrainingAborted) as excinfo:
        list(trainer.train_epoch([batch], model, optimizers, settings, start_step=4))

    assert excinfo.value.step == 4
    assert excinfo.value.clip_ids == batch.clip_ids


def test_fit_writes_run_artifacts(tmp_path: Path) -> None:
    data_dir = tmp_path / "data"
    run_dir = tmp_path / "run"
    records = generate_dataset(str(data_dir), n_clips=2, duration_s=3.0, seed=3)

    result = trainer.fit(_settings(), records, str(data_dir), str(run_dir))

    assert result.steps == 1
    assert result.best_epoch == 0
    for name in (trainer.CONFIG_SNAPSHOT, trainer.LOSS_LOG, trainer.LAST_CHECKPOINT, trainer.BEST_CHECKPOINT):
        assert (run_dir / name).exists()
    assert (run_dir / "eval" / "epoch_0000.json").exists()
    assert (run_dir / "train.log").exists()
    rows = read_csv_rows(str(run_dir / trainer.LOSS_LOG))
    assert [row["step"] for row in rows] == ["1"]
    assert read_json(str(run_dir / trainer.CONFIG_SNAPSHOT))["dataset"]["classes"] == list(synthetic_classes())


def test_fit_is_reproducible_with_a_fixed_seed(tmp_path: Path) -> None:
    settings = _settings(epochs=2, batch_size=1, seed=17)
    settings = dataclasses.replace(settings, augment=dataclasses.replace(settings.augment, enabled=True))

    histories = []
    results = []
    for name in ("first", "second"):
        data_dir = tmp_path / name / "data"
        records = generate_dataset(str(data_dir), n_clips=3, duration_s=3.0, seed=8)
        run_dir = tmp_path / name / "run"
        results.append(trainer.fit(settings, records, str(data_dir), str(run_dir)))
        histories.append(read_csv_rows(str(run_dir / trainer.LOSS_LOG)))

    assert len(histories[0]) == results[0].steps > 1
    assert histories[0] == histories[1]
    assert results[0].best_f1 == results[1].best_f1
