import math

import numpy as np
import pytest

from adhead import losses
from adhead.config import LossConfig
from adhead.errors import ConfigError, DimensionError
from head_testutil import fd_vjp_check
from oracles import (
    scalar_dice,
    scalar_focal,
    scalar_loss_aacm,
    scalar_loss_cm,
)


def random_instance(rng, shape=(4, 5)):
    pred = rng.uniform(0.05, 0.95, size=shape)
    target = (rng.random(shape) < 0.4).astype(np.float64)
    return pred, target


class TestFocal:
    def test_perfect_prediction(self):
        target = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _ = losses.focal_loss(target, target, 2.0, 0.25)
        assert loss < 1e-5

    def test_single_pixel_oracle(self):
        loss, _ = losses.focal_loss(
            np.array([[0.5]]), np.array([[1.0]]), 2.0, 0.25
        )
        assert abs(loss - 0.25 * 0.25 * math.log(2.0)) < 1e-12

    def test_gamma_zero_is_weighted_bce(self, rng):
        pred, target = random_instance(rng)
        loss, _ = losses.focal_loss(pred, target, 0.0, 0.5)
        bce = -(target * np.log(pred) + (1 - target) * np.log(1 - pred)).mean()
        assert abs(loss - 0.5 * bce) < 1e-12

    def test_scalar_oracle(self, rng):
        for _ in range(100):
            pred, target = random_instance(rng)
            gamma = float(rng.uniform(0, 4))
            alpha = float(rng.uniform(0.1, 0.9))
            loss, _ = losses.focal_loss(pred, target, gamma, alpha)
            expected = scalar_focal(pred.tolist(), target.tolist(), gamma, alpha)
            assert abs(loss - expected) < 1e-10

    def test_config_errors(self):
        p = np.array([[0.5]])
        with pytest.raises(ConfigError):
            losses.focal_loss(p, p, -1.0, 0.25)
        with pytest.raises(ConfigError):
            losses.focal_loss(p, p, 2.0, 1.5)
        with pytest.raises(DimensionError):
            losses.focal_loss(np.zeros((2, 2)), np.zeros((3, 3)), 2.0, 0.25)

    def test_gradient_fd(self, rng):
        for gamma in (0.0, 2.0, 3.5):
            pred, target = random_instance(rng)
            _, grad = losses.focal_loss(pred, target, gamma, 0.25)
            f = lambda p: np.array(losses.focal_loss(p, target, gamma, 0.25)[0])
            assert fd_vjp_check(f, grad, [pred], 0, np.array(1.0)) < 1e-6

    def test_nonnegative_and_monotone(self, rng):
        pred, target = random_instance(rng)
        loss, _ = losses.focal_loss(pred, target, 2.0, 0.25)
        assert loss >= 0.0
        better = pred.copy()
        better[0, 0] = pred[0, 0] + (0.02 if target[0, 0] == 1 else -0.02)
        loss2, _ = losses.focal_loss(better, target, 2.0, 0.25)
        assert loss2 < loss


class TestDice:
    def test_binary_match_is_zero(self, rng):
        target = (rng.random((4, 4)) < 0.5).astype(np.float64)
        loss, _ = losses.dice_loss(target, target, 0.7)
        assert abs(loss) < 1e-15

    def test_disjoint_oracle(self):
        loss, _ = losses.dice_loss(
            np.zeros((2, 2)), np.ones((2, 2)), 1.0
        )
        assert abs(loss - 0.8) < 1e-15

    def test_both_empty(self):
        loss, _ = losses.dice_loss(np.zeros((2, 2)), np.zeros((2, 2)), 1.0)
        assert loss == 0.0

    def test_scalar_oracle(self, rng):
        for _ in range(100):
            pred, target = random_instance(rng)
            eps = float(rng.uniform(0.1, 2.0))
            loss, _ = losses.dice_loss(pred, target, eps)
            expected = scalar_dice(pred.tolist(), target.tolist(), eps)
            assert abs(loss - expected) < 1e-10

    def test_gradient_fd(self, rng):
        pred, target = random_instance(rng)
        _, grad = losses.dice_loss(pred, target, 1.0)
        f = lambda p: np.array(losses.dice_loss(p, target, 1.0)[0])
        assert fd_vjp_check(f, grad, [pred], 0, np.array(1.0)) < 1e-6

    def test_nonnegative(self, rng):
        pred, target = random_instance(rng)
        loss, _ = losses.dice_loss(pred, target, 1.0)
        assert loss >= 0.0


class TestLossCM:
    def test_perfect_single_stage(self):
        mask = np.zeros((8, 8))
        mask[:4, :] = 1.0
        grid = mask[::2, ::2].copy()  # constant blocks survive the upsample
        cfg = LossConfig()
        loss, grads = losses.loss_cm([grid], mask, cfg)
        # bilinear blending across the boundary keeps this small but nonzero
        assert loss < 0.2
        assert len(grads) == 1

    def test_duplicate_stage_mean(self, rng):
        cfg = LossConfig()
        mask = (rng.random((8, 8)) < 0.3).astype(np.float64)
        grid = rng.uniform(0.1, 0.9, size=(4, 4))
        one, _ = losses.loss_cm([grid], mask, cfg)
        two, _ = losses.loss_cm([grid, grid.copy()], mask, cfg)
        assert abs(one - two) < 1e-12

    def test_scalar_oracle(self, rng):
        cfg = LossConfig()
        for _ in range(100):
            mask = (rng.random((6, 6)) < 0.4).astype(np.float64)
            grids = [rng.uniform(0.05, 0.95, size=(3, 3)) for _ in range(2)]
            loss, _ = losses.loss_cm(grids, mask, cfg)
            expected = scalar_loss_cm(
                [g.tolist() for g in grids], mask.tolist(),
                cfg.focal_gamma, cfg.focal_alpha, cfg.dice_eps,
            )
            assert abs(loss - expected) < 1e-10

    def test_empty_stage_list(self):
        with pytest.raises(DimensionError):
            losses.loss_cm([], np.zeros((4, 4)), LossConfig())

    def test_gradient_fd(self, rng):
        cfg = LossConfig()
        mask = (rng.random((6, 6)) < 0.4).astype(np.float64)
        grids = [rng.uniform(0.1, 0.9, size=(3, 3)) for _ in range(2)]
        _, grads = losses.loss_cm(grids, mask, cfg)
        for which in range(2):
            f = lambda g: np.array(
                losses.loss_cm(
                    [g if i == which else grids[i] for i in range(2)], mask, cfg
                )[0]
            )
            assert fd_vjp_check(f, grads[which], [grids[which]], 0,
                                np.array(1.0)) < 1e-6


class TestLossAACM:
    def test_strong_correct_scores(self, rng):
        # mask at grid resolution: no boundary blending, loss near zero
        cfg = LossConfig()
        for _ in range(10):
            patch_mask = (rng.random((4, 4)) < 0.3).astype(np.float64)
            raw = np.where(patch_mask > 0, 10.0, -10.0)
            loss, _ = losses.loss_aacm(raw, patch_mask, cfg)
            assert loss < 0.05

    def test_strong_correct_scores_upsampled(self, rng):
        # at 8x upsampling, bilinear blending across the rectangle boundary
        # keeps dice away from zero; the loss still stays small
        cfg = LossConfig()
        pm = np.zeros((8, 8))
        pm[2:6, 3:5] = 1.0
        raw = np.where(pm > 0, 10.0, -10.0)
        mask = np.kron(pm, np.ones((8, 8)))
        loss, _ = losses.loss_aacm(raw, mask, cfg)
        assert loss < 0.25

    def test_all_zero_scores_closed_form(self, rng):
        cfg = LossConfig()
        mask = (rng.random((8, 8)) < 0.3).astype(np.float64)
        raw = np.zeros((4, 4))
        loss, _ = losses.loss_aacm(raw, mask, cfg)
        expected = scalar_loss_aacm(
            raw.tolist(), mask.tolist(),
            cfg.focal_gamma, cfg.focal_alpha, cfg.dice_eps,
        )
        assert abs(loss - expected) < 1e-12

    def test_empty_mask_rejection(self):
        cfg = LossConfig()
        raw = np.full((4, 4), -10.0)
        loss, _ = losses.loss_aacm(raw, np.zeros((4, 4)), cfg)
        assert loss < 1e-3

    def test_scalar_oracle(self, rng):
        cfg = LossConfig()
        for _ in range(100):
            raw = rng.standard_normal((3, 3)) * 2
            mask = (rng.random((6, 6)) < 0.4).astype(np.float64)
            loss, _ = losses.loss_aacm(raw, mask, cfg)
            expected = scalar_loss_aacm(
                raw.tolist(), mask.tolist(),
                cfg.focal_gamma, cfg.focal_alpha, cfg.dice_eps,
            )
            assert abs(loss - expected) < 1e-10

    def test_gradient_fd_sigmoid(self, rng):
        cfg = LossConfig()
        raw = rng.standard_normal((3, 3))
        mask = (rng.random((6, 6)) < 0.4).astype(np.float64)
        _, grad = losses.loss_aacm(raw, mask, cfg)
        f = lambda r: np.array(losses.loss_aacm(r, mask, cfg)[0])
        assert fd_vjp_check(f, grad, [raw], 0, np.array(1.0)) < 1e-6

    def test_gradient_fd_patch_softmax(self, rng):
        cfg = LossConfig(aacm_activation="patch_softmax")
        raw = rng.standard_normal((3, 3))
        mask = (rng.random((6, 6)) < 0.4).astype(np.float64)
        _, grad = losses.loss_aacm(raw, mask, cfg)
        f = lambda r: np.array(losses.loss_aacm(r, mask, cfg)[0])
        assert fd_vjp_check(f, grad, [raw], 0, np.array(1.0)) < 1e-6


class TestTotal:
    def test_cm_only(self):
        cfg = LossConfig(lambda_aacm=0.0, lambda_cm=2.0)
        assert losses.total_loss(0.3, 0.9, cfg) == pytest.approx(0.6)

    def test_sum(self):
        cfg = LossConfig()
        assert losses.total_loss(0.3, 0.2, cfg) == pytest.approx(0.5)

    def test_both_zero(self):
        cfg = LossConfig(lambda_cm=0.0, lambda_aacm=0.0)
        assert losses.total_loss(0.3, 0.2, cfg) == 0.0
