import pytest
import torch

from changekit.losses import sup_loss
from conftest import central_difference_grad, rel_error


def test_perfect_unchanged_fit_is_zero():
    rep = sup_loss(torch.zeros(4, 4), torch.zeros(4, 4))
    assert float(rep.total) == 0.0
    assert rep.n_u == 16 and rep.n_c == 0


def test_perfect_changed_fit_is_zero():
    rep = sup_loss(torch.ones(4, 4), torch.ones(4, 4))
    assert float(rep.total) == 0.0


def test_two_pixel_hand_case():
    pred = torch.tensor([0.5, 0.5])
    label = torch.tensor([0.0, 1.0])
    rep = sup_loss(pred, label)
    assert float(rep.unchanged_term) == pytest.approx(0.25, abs=1e-7)
    assert float(rep.changed_term) == pytest.approx(0.25, abs=1e-7)
    assert float(rep.total) == pytest.approx(0.5, abs=1e-7)
    assert rep.n_u == 1 and rep.n_c == 1


def test_total_is_sum_of_terms_exactly():
    torch.manual_seed(1)
    pred = torch.rand(8, 8)
    label = (torch.rand(8, 8) > 0.5).float()
    rep = sup_loss(pred, label)
    assert torch.equal(rep.total, rep.unchanged_term + rep.changed_term)
    assert float(rep.total) >= 0.0


def test_degenerate_single_class_batches():
    pred = torch.rand(4, 4)
    rep = sup_loss(pred, torch.zeros(4, 4))
    assert float(rep.changed_term) == 0.0 and rep.n_c == 0
    rep = sup_loss(pred, torch.ones(4, 4))
    assert float(rep.unchanged_term) == 0.0 and rep.n_u == 0


def test_gradient_matches_central_differences():
    torch.manual_seed(2)
    for _ in range(3):
        label = (torch.rand(8, 8) > 0.5).double()
        pred = torch.rand(8, 8, dtype=torch.float64) * 0.8 + 0.1
        pred.requires_grad_(True)
        rep = sup_loss(pred, label)
        rep.total.backward()
        analytic = pred.grad.detach().clone()
        base = pred.detach().clone()
        numeric = central_difference_grad(lambda: sup_loss(base, label).total, base)
        assert rel_error(analytic, numeric) < 1e-4


def test_balance_property_duplicating_unchanged_pixels():
    torch.manual_seed(3)
    pred = torch.rand(6, 6)
    label = (torch.rand(6, 6) > 0.5).float()
    rep = sup_loss(pred, label)
    pred2 = torch.cat([pred.flatten(), pred.flatten()[label.flatten() == 0]])
    label2 = torch.cat([label.flatten(), torch.zeros(int((label == 0).sum()))])
    rep2 = sup_loss(pred2, label2)
    assert float(rep2.unchanged_term) == pytest.approx(float(rep.unchanged_term), rel=1e-6)
    assert rep2.n_u == 2 * rep.n_u


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        sup_loss(torch.rand(4, 4), torch.zeros(4, 5))
