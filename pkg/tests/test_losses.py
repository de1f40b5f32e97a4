import pytest
import torch

from abyss.losses import (
    GanWeights,
    RelativisticScores,
    full_objective,
    gan_loss_d,
    gan_loss_g,
    l1_loss,
)


def scores(real, fake):
    return RelativisticScores.from_score_maps(torch.tensor(real), torch.tensor(fake))


class TestL1Loss:
    def test_identical_inputs_give_zero(self):
        x = torch.rand(2, 3, 4, 4)
        assert l1_loss(x, x).item() == 0.0

    def test_unit_offset(self):
        pred = torch.ones(2, 3, 4, 4)
        target = torch.zeros(2, 3, 4, 4)
        assert l1_loss(pred, target).item() == 1.0

    def test_matches_hand_summation(self):
        torch.manual_seed(0)
        pred = torch.rand(2, 3, dtype=torch.float64)
        target = torch.rand(2, 3, dtype=torch.float64)
        total = 0.0
        for i in range(2):
            for j in range(3):
                total += abs(pred[i, j].item() - target[i, j].item())
        assert l1_loss(pred, target).item() == pytest.approx(total / 6, rel=1e-12)

    def test_non_negative_and_zero_iff_equal(self):
        torch.manual_seed(1)
        a, b = torch.rand(5), torch.rand(5)
        assert l1_loss(a, b).item() > 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            l1_loss(torch.zeros(2, 3), torch.zeros(3, 2))


class TestGanLosses:
    def test_constant_equal_maps_give_two_exactly(self):
        for c in (-3.0, 0.0, 0.25, 7.0):
            s = scores([[[[c] * 3] * 3]], [[[[c] * 3] * 3]])
            assert gan_loss_d(s).item() == 2.0
            assert gan_loss_g(s).item() == 2.0

    def test_real_plus_one_fake_minus_one(self):
        s = scores([[[[1.0]]]], [[[[-1.0]]]])
        # (1 - (-1) - 1)^2 + (-1 - 1 + 1)^2 = 1 + 1
        assert gan_loss_d(s).item() == 2.0

    def test_matches_hand_evaluation_on_2x2_maps(self):
        real = torch.tensor([[[[0.3, -1.2], [2.0, 0.7]]]], dtype=torch.float64)
        fake = torch.tensor([[[[-0.4, 0.9], [1.1, -2.2]]]], dtype=torch.float64)
        s = RelativisticScores.from_score_maps(real, fake)
        rbar = real.sum().item() / 4
        fbar = fake.sum().item() / 4
        ld = sum((r - fbar - 1) ** 2 for r in real.flatten().tolist()) / 4 + sum(
            (f - rbar + 1) ** 2 for f in fake.flatten().tolist()
        ) / 4
        lg = sum((r - fbar + 1) ** 2 for r in real.flatten().tolist()) / 4 + sum(
            (f - rbar - 1) ** 2 for f in fake.flatten().tolist()
        ) / 4
        assert gan_loss_d(s).item() == pytest.approx(ld, rel=1e-12)
        assert gan_loss_g(s).item() == pytest.approx(lg, rel=1e-12)

    def test_label_swap_duality(self):
        torch.manual_seed(2)
        real, fake = torch.randn(2, 1, 3, 3), torch.randn(2, 1, 3, 3)
        forward = RelativisticScores.from_score_maps(real, fake)
        swapped = RelativisticScores.from_score_maps(fake, real)
        assert gan_loss_g(swapped).item() == gan_loss_d(forward).item()
        assert gan_loss_d(swapped).item() == gan_loss_g(forward).item()

    def test_constant_shift_invariance(self):
        torch.manual_seed(3)
        real, fake = torch.randn(2, 1, 4, 4), torch.randn(2, 1, 4, 4)
        base = RelativisticScores.from_score_maps(real, fake)
        shifted = RelativisticScores.from_score_maps(real + 5.5, fake + 5.5)
        assert gan_loss_d(shifted).item() == pytest.approx(gan_loss_d(base).item(), abs=1e-6)
        assert gan_loss_g(shifted).item() == pytest.approx(gan_loss_g(base).item(), abs=1e-6)

    def test_mean_fields_are_map_means(self):
        torch.manual_seed(4)
        real, fake = torch.randn(3, 1, 2, 5), torch.randn(3, 1, 2, 5)
        s = RelativisticScores.from_score_maps(real, fake)
        assert s.real_mean.item() == pytest.approx(real.mean().item(), rel=1e-7)
        assert s.fake_mean.item() == pytest.approx(fake.mean().item(), rel=1e-7)

    def test_map_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            RelativisticScores.from_score_maps(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 3, 3))


class TestFullObjective:
    def test_hand_arithmetic_case(self):
        d_obj, g_obj = full_objective(
            torch.tensor(0.5, dtype=torch.float64),
            torch.tensor(2.0, dtype=torch.float64),
            torch.tensor(2.0, dtype=torch.float64),
            GanWeights(1e-2),
        )
        assert d_obj.item() == pytest.approx(0.01, rel=1e-12)
        assert g_obj.item() == pytest.approx(0.51, rel=1e-12)

    def test_vanishing_lambda_leaves_pure_l1(self):
        l1 = torch.tensor(0.375)
        _, g_obj = full_objective(l1, torch.tensor(2.0), torch.tensor(2.0), GanWeights(1e-300))
        assert g_obj.item() == l1.item()

    def test_default_lambda(self):
        assert GanWeights().gan_lambda == 1e-2

    def test_lambda_must_be_positive(self):
        with pytest.raises(ValueError):
            GanWeights(0.0)
        with pytest.raises(ValueError):
            GanWeights(-1.0)

    def test_non_finite_inputs_rejected(self):
        w = GanWeights()
        good = torch.tensor(1.0)
        for bad in (torch.tensor(float("nan")), torch.tensor(float("inf"))):
            with pytest.raises(FloatingPointError):
                full_objective(bad, good, good, w)
            with pytest.raises(FloatingPointError):
                full_objective(good, bad, good, w)
            with pytest.raises(FloatingPointError):
                full_objective(good, good, bad, w)
