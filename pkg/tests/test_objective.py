import math

import pytest
import torch

from respiratory_sed import objective
from respiratory_sed.config import LossWeights
from respiratory_sed.types import LocIoUMode


def _t(*values) -> torch.Tensor:
    return torch.tensor(values, dtype=torch.float64)


def test_node_conf_loss_examples() -> None:
    assert objective.node_conf_loss(_t(0.0), _t(0.5)).item() == pytest.approx(math.log(2))
    assert objective.node_conf_loss(_t(0.0), _t(0.0)).item() == pytest.approx(math.log(2))
    assert objective.node_conf_loss(_t(20.0), _t(1.0)).item() < 1e-8


def test_node_cls_loss_examples() -> None:
    background = torch.tensor([-1, -1])
    assert objective.node_cls_loss(torch.randn(2, 4, dtype=torch.float64), background).item() == 0.0

    uniform = torch.zeros(3, 4, dtype=torch.float64)
    assert objective.node_cls_loss(uniform, torch.tensor([-1, 2, -1])).item() == pytest.approx(math.log(4))

    confident = torch.zeros(1, 4, dtype=torch.float64)
    confident[0, 1] = 20.0
    assert objective.node_cls_loss(confident, torch.tensor([1])).item() < 1e-8


def test_interval_conf_loss_examples() -> None:
    assert objective.interval_conf_loss(_t(-20.0, -20.0), _t(0.0, 0.0)).item() < 1e-8
    assert objective.interval_conf_loss(_t(0.0), _t(0.4286)).item() == pytest.approx(math.log(2))
    expected = -0.75 * math.log(0.75) - 0.25 * math.log(0.25)
    assert objective.interval_conf_loss(_t(math.log(3.0)), _t(0.75)).item() == pytest.approx(expected)
    assert expected == pytest.approx(0.5623, abs=1e-4)


def test_interval_cls_loss_examples() -> None:
    logits = torch.zeros(2, 4, dtype=torch.float64)
    assert objective.interval_cls_loss(logits, torch.tensor([-1, -1]), _t(0.0, 0.0)).item() == 0.0
    assert objective.interval_cls_loss(logits, torch.tensor([3, -1]), _t(0.5, 0.0)).item() == pytest.approx(math.log(4))

    logits[0, 3] = 20.0
    assert objective.interval_cls_loss(logits, torch.tensor([3, -1]), _t(0.5, 0.0)).item() < 1e-8


def test_interval_loc_loss_examples() -> None:
    perfect = objective.interval_loc_loss(_t(1.0), _t(2.0), _t(1.0), _t(2.0), _t(1.0))
    shifted = objective.interval_loc_loss(_t(1.0), _t(2.0), _t(1.5), _t(2.5), _t(0.5))
    disjoint = objective.interval_loc_loss(_t(0.0), _t(1.0), _t(3.0), _t(4.0), _t(0.5))
    background = objective.interval_loc_loss(_t(0.0), _t(1.0), _t(3.0), _t(4.0), _t(0.0))

    assert perfect.item() == pytest.approx(0.0, abs=1e-12)
    assert shifted.item() == pytest.approx(math.log(3))
    assert disjoint.item() == pytest.approx(13.8155, abs=1e-4)
    assert background.item() == 0.0


def test_span_mode_uses_enclosing_interval() -> None:
    union = objective.interval_iou(_t(1.0), _t(2.0), _t(1.5), _t(3.0), LocIoUMode.UNION)
    span = objective.interval_iou(_t(1.0), _t(2.0), _t(1.5), _t(3.0), LocIoUMode.SPAN)

    assert union.item() == pytest.approx(0.25)
    assert span.item() == pytest.approx(0.25)
    inside = objective.interval_iou(_t(1.0), _t(2.0), _t(1.2), _t(1.5), LocIoUMode.SPAN)
    assert inside.item() == pytest.approx(0.3)


def _components() -> dict:
    return {name: torch.tensor(float(index + 1), dtype=torch.float64) for index, name in enumerate(objective.COMPONENTS)}


def test_total_weighting() -> None:
    components = _components()

    zero = LossWeights(node_conf=0.0, node_cls=0.0, interval_conf=0.0, interval_cls=0.0, interval_loc=0.0)
    assert objective.total(components, zero).item() == 0.0
    assert objective.total(components, LossWeights()).item() == 15.0
    doubled = LossWeights(interval_cls=2.0)
    assert objective.total(components, doubled).item() == 19.0


def test_background_logits_do_not_move_foreground_losses() -> None:
    logits = torch.randn(4, 4, dtype=torch.float64)
    labels = torch.tensor([-1, 2, -1, 0])
    conf = _t(0.0, 0.6, 0.0, 0.4)
    perturbed = logits.clone()
    perturbed[[0, 2]] += 5.0

    assert objective.node_cls_loss(perturbed, labels).item() == objective.node_cls_loss(logits, labels).item()
    assert objective.interval_cls_loss(perturbed, labels, conf).item() == objective.interval_cls_loss(logits, labels, conf).item()

    start, end = _t(0.0, 1.0, 5.0, 2.0), _t(1.0, 2.0, 6.0, 3.0)
    moved_start = start.clone()
    moved_start[[0, 2]] -= 0.3
    targets = (_t(0.0, 1.2, 0.0, 2.1), _t(0.0, 2.2, 0.0, 3.3))
    assert objective.interval_loc_loss(moved_start, end, *targets, conf).item() == pytest.approx(
        objective.interval_loc_loss(start, end, *targets, conf).item()
    )


def test_loss_report_row() -> None:
    report = objective.LossReport(0.1, 0.2, 0.3, 0.4, 0.5, 1.5, n_fg=3, m_fg=7)

    row = report.as_row(12)
    assert row["step"] == 12
    assert list(row)[1:6] == list(objective.COMPONENTS)
    assert row["m_fg"] == 7
