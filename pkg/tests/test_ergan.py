"""Eyeglasses-removal GAN tests: blend identity, PatchGAN, losses, training."""

import numpy as np
import pytest
import torch
from torch import nn

from biasforge.bias import stub_extractor
from biasforge.errors import ShapeError
from biasforge.ergan import (
    ErganConfig,
    ErganGenerator,
    PatchDiscriminator,
    TorchQuadrantEmbedder,
    ergan_forward,
    ergan_losses,
    ergan_train_step,
    identity_loss,
    identity_loss_batch,
    init_ergan_state,
    patch_scores,
)
from biasforge.imagecore import constant, from_array
from biasforge.tensorutil import images_to_batch


def _param_count(module):
    return sum(p.numel() for p in module.parameters())


class TestBlendIdentity:
    def _gen_and_input(self, seed=0, size=16):
        torch.manual_seed(seed)
        gen = ErganGenerator(widths=(4, 4, 8, 8))
        x = torch.rand(2, 3, size, size) * 2 - 1
        return gen, x

    def test_mask_zero_returns_input_exactly(self):
        gen, x = self._gen_and_input()
        y, mask, raw = gen(x, mask_override=torch.zeros(2, 1, 16, 16))
        assert torch.equal(y, x)

    def test_mask_one_returns_raw(self):
        gen, x = self._gen_and_input(1)
        y, mask, raw = gen(x, mask_override=torch.ones(2, 1, 16, 16))
        assert torch.equal(y, raw)

    def test_mask_half_is_average(self):
        gen, x = self._gen_and_input(2)
        y, _, raw = gen(x, mask_override=torch.full((2, 1, 16, 16), 0.5))
        assert torch.allclose(y, 0.5 * raw + 0.5 * x, atol=1e-7)

    def test_learned_mask_in_unit_interval(self):
        gen, x = self._gen_and_input(3)
        _, mask, _ = gen(x)
        mask = mask.detach()
        assert float(mask.min()) >= 0.0 and float(mask.max()) <= 1.0

    def test_blend_closure(self):
        gen, x = self._gen_and_input(4)
        y, _, raw = gen(x)
        lo = torch.minimum(raw, x)
        hi = torch.maximum(raw, x)
        assert bool((y >= lo - 1e-6).all()) and bool((y <= hi + 1e-6).all())

    def test_rejects_indivisible_size(self):
        gen, _ = self._gen_and_input()
        with pytest.raises(ShapeError):
            gen(torch.zeros(1, 3, 24, 24))

    def test_drop_skips_changes_output(self):
        gen, x = self._gen_and_input(5)
        y_full, _, _ = gen(x)
        y_dropped, _, _ = gen(x, drop_skips=(1, 2, 3))
        assert not torch.allclose(y_full, y_dropped)

    def test_forward_wrapper_returns_pair(self):
        gen, x = self._gen_and_input(6)
        y, mask = ergan_forward(gen, x)
        assert y.shape == x.shape and mask.shape == (2, 1, 16, 16)


class TestPatchDiscriminator:
    @pytest.mark.parametrize("size,expected", [(128, 15), (32, 3), (16, 1)])
    def test_map_sizes(self, size, expected):
        assert PatchDiscriminator.map_size(size) == expected
        d = PatchDiscriminator(widths=(2, 2, 2))
        out = patch_scores(d, torch.zeros(1, 3, size, size))
        assert out.shape == (1, expected, expected)

    def test_too_small_input_rejected(self):
        d = PatchDiscriminator(widths=(2, 2, 2))
        with pytest.raises(ShapeError):
            patch_scores(d, torch.zeros(1, 3, 8, 8))

    def test_duplicated_sample_duplicated_map(self):
        torch.manual_seed(7)
        d = PatchDiscriminator(widths=(2, 2, 2))
        x = torch.randn(1, 3, 32, 32)
        out = patch_scores(d, torch.cat([x, x], dim=0))
        assert torch.equal(out[0], out[1])

    def test_corner_change_is_local(self):
        torch.manual_seed(8)
        d = PatchDiscriminator(widths=(4, 4, 4))
        x = torch.randn(1, 3, 128, 128)
        modified = x.clone()
        modified[:, :, 112:, 112:] += 1.0  # bottom-right 16x16 corner
        a = patch_scores(d, x)[0]
        b = patch_scores(d, modified)[0]
        # top-left patches never see the bottom-right corner
        assert torch.equal(a[:4, :4], b[:4, :4])
        assert not torch.equal(a, b)

    def test_finite_scores(self):
        d = PatchDiscriminator(widths=(2, 2, 2))
        out = patch_scores(d, torch.rand(3, 3, 32, 32) * 2 - 1)
        assert torch.isfinite(out).all()


class TestIdentityLoss:
    def test_identical_images_zero(self):
        rng = np.random.default_rng(0)
        img = from_array(rng.random((16, 16, 3)))
        assert identity_loss(stub_extractor(), img, img) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_embeddings_sqrt2(self):
        a = np.zeros((16, 16, 3), dtype=np.float32)
        b = np.zeros((16, 16, 3), dtype=np.float32)
        a[:8, :8, 0] = 0.5   # only top-left red
        b[:8, 8:, 1] = 0.7   # only top-right green
        loss = identity_loss(stub_extractor(), from_array(a), from_array(b))
        assert loss == pytest.approx(np.sqrt(2.0), abs=1e-6)

    def test_zero_embedding_maps_to_zero_vector(self):
        black = constant(16, 16, (0.0, 0.0, 0.0))
        white = constant(16, 16, (1.0, 1.0, 1.0))
        ex = stub_extractor()
        assert identity_loss(ex, black, black) == pytest.approx(0.0, abs=1e-12)
        # ||0 - unit|| = 1
        assert identity_loss(ex, black, white) == pytest.approx(1.0, abs=1e-6)

    def test_bounded_and_symmetric(self):
        rng = np.random.default_rng(1)
        ex = stub_extractor()
        for _ in range(5):
            a = from_array(rng.random((12, 12, 3)))
            b = from_array(rng.random((12, 12, 3)))
            ab = identity_loss(ex, a, b)
            assert 0.0 <= ab <= 2.0
            assert ab == pytest.approx(identity_loss(ex, b, a), abs=1e-12)

    def test_torch_batch_matches_numpy(self):
        rng = np.random.default_rng(2)
        imgs_a = [from_array(rng.random((16, 16, 3))) for _ in range(3)]
        imgs_b = [from_array(rng.random((16, 16, 3))) for _ in range(3)]
        batch_a = images_to_batch(imgs_a)
        batch_b = images_to_batch(imgs_b)
        torch_val = float(identity_loss_batch(TorchQuadrantEmbedder(), batch_a, batch_b).detach())
        ex = stub_extractor()
        numpy_val = float(np.mean([identity_loss(ex, a, b) for a, b in zip(imgs_a, imgs_b)]))
        assert torch_val == pytest.approx(numpy_val, abs=1e-5)

    def test_torch_batch_matches_numpy_odd_sizes(self):
        rng = np.random.default_rng(3)
        a = from_array(rng.random((9, 7, 3)))
        b = from_array(rng.random((9, 7, 3)))
        torch_val = float(identity_loss_batch(
            TorchQuadrantEmbedder(), images_to_batch([a]), images_to_batch([b])).detach())
        numpy_val = identity_loss(stub_extractor(), a, b)
        assert torch_val == pytest.approx(numpy_val, abs=1e-5)


class _StubGenerator(nn.Module):
    """Returns a fixed (y, mask, raw) triple regardless of input."""

    def __init__(self, y):
        super().__init__()
        self.y = y

    def forward(self, x):
        mask = torch.zeros(x.shape[0], 1, x.shape[2], x.shape[3])
        return self.y, mask, self.y


class _MeanDiscriminator(nn.Module):
    """Patch map filled with each sample's mean value."""

    def forward(self, x):
        m = x.mean(dim=(1, 2, 3))
        return m.view(-1, 1, 1).expand(-1, 3, 3)


class TestErganLosses:
    def test_perfect_reconstruction_zero_generator_loss(self):
        x_clean = torch.rand(2, 3, 16, 16) * 2 - 1
        gen = _StubGenerator(x_clean)
        disc = _MeanDiscriminator()
        cfg = ErganConfig(image_size=16, w_adv=0.0, w_id=1.0, w_rec=10.0, batch_size=2)
        out = ergan_losses(gen, disc, cfg, x_clean.clone(), x_clean)
        assert float(out["L_G_total"].detach()) == pytest.approx(0.0, abs=1e-7)

    def test_perfect_discriminator_zero_d_loss(self):
        x_clean = torch.ones(2, 3, 16, 16)
        y = torch.zeros(2, 3, 16, 16)
        gen = _StubGenerator(y)
        disc = _MeanDiscriminator()  # outputs 1 on all-ones, 0 on all-zeros
        cfg = ErganConfig(image_size=16, batch_size=2)
        out = ergan_losses(gen, disc, cfg, x_clean.clone(), x_clean)
        assert float(out["L_D"].detach()) == pytest.approx(0.0, abs=1e-12)

    def test_rec_weight_linearity(self):
        torch.manual_seed(9)
        gen = ErganGenerator(widths=(4, 4, 8, 8))
        disc = PatchDiscriminator(widths=(2, 2, 2))
        x_glasses = torch.rand(2, 3, 16, 16) * 2 - 1
        x_clean = torch.rand(2, 3, 16, 16) * 2 - 1
        base = ergan_losses(gen, disc, ErganConfig(image_size=16, w_rec=10.0, batch_size=2),
                            x_glasses, x_clean)
        doubled = ergan_losses(gen, disc, ErganConfig(image_size=16, w_rec=20.0, batch_size=2),
                               x_glasses, x_clean)
        rec = float(base["components"]["rec"].detach())
        assert float(doubled["components"]["rec"].detach()) == pytest.approx(rec, abs=1e-9)
        diff = float(doubled["L_G_total"].detach()) - float(base["L_G_total"].detach())
        assert diff == pytest.approx(10.0 * rec, abs=1e-5)

    def test_unpaired_batch_rejected(self):
        gen = ErganGenerator(widths=(4, 4, 8, 8))
        disc = PatchDiscriminator(widths=(2, 2, 2))
        cfg = ErganConfig(image_size=16, batch_size=2)
        with pytest.raises(ShapeError):
            ergan_losses(gen, disc, cfg, torch.zeros(2, 3, 16, 16), torch.zeros(3, 3, 16, 16))

    def test_empty_batch_rejected(self):
        gen = ErganGenerator(widths=(4, 4, 8, 8))
        disc = PatchDiscriminator(widths=(2, 2, 2))
        cfg = ErganConfig(image_size=16, batch_size=2)
        empty = torch.zeros(0, 3, 16, 16)
        with pytest.raises(ShapeError):
            ergan_losses(gen, disc, cfg, empty, empty)

    def test_mask_supervision_requires_eye_band(self):
        gen = ErganGenerator(widths=(4, 4, 8, 8))
        disc = PatchDiscriminator(widths=(2, 2, 2))
        cfg = ErganConfig(image_size=16, w_mask=0.5, batch_size=2)
        x = torch.rand(2, 3, 16, 16) * 2 - 1
        with pytest.raises(ValueError):
            ergan_losses(gen, disc, cfg, x, x)
        out = ergan_losses(gen, disc, cfg, x, x, eye_band=(4, 8))
        assert "mask" in out["components"]
        assert float(out["components"]["mask"].detach()) >= 0.0


class TestFiniteDifferenceGradients:
    def _setup(self):
        torch.manual_seed(10)
        gen = ErganGenerator(widths=(1, 1, 2, 2)).double()
        disc = PatchDiscriminator(widths=(2, 2, 2)).double()
        assert _param_count(gen) <= 500
        assert _param_count(disc) <= 500
        cfg = ErganConfig(image_size=16, batch_size=2)
        x_glasses = (torch.rand(2, 3, 16, 16, dtype=torch.float64) * 2 - 1)
        x_clean = (torch.rand(2, 3, 16, 16, dtype=torch.float64) * 2 - 1)
        return gen, disc, cfg, x_glasses, x_clean

    @staticmethod
    def _numerical(loss_fn, params, h=1e-5):
        grads = []
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.data.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                fp = float(loss_fn().detach())
                flat[i] = orig - h
                fm = float(loss_fn().detach())
                flat[i] = orig
                gflat[i] = (fp - fm) / (2.0 * h)
            grads.append(g)
        return grads

    @staticmethod
    def _rel_error(analytic, numerical):
        a = torch.cat([g.flatten() for g in analytic])
        n = torch.cat([g.flatten() for g in numerical])
        return float((a - n).norm() / max(float(n.norm()), 1e-8))

    def test_generator_loss_gradients(self):
        gen, disc, cfg, x_glasses, x_clean = self._setup()
        params = list(gen.parameters())

        def loss_fn():
            return ergan_losses(gen, disc, cfg, x_glasses, x_clean)["L_G_total"]

        analytic = torch.autograd.grad(loss_fn(), params, allow_unused=True)
        analytic = [torch.zeros_like(p) if g is None else g for p, g in zip(params, analytic)]
        assert self._rel_error(analytic, self._numerical(loss_fn, params)) <= 1e-3

    def test_discriminator_loss_gradients(self):
        gen, disc, cfg, x_glasses, x_clean = self._setup()
        params = list(disc.parameters())

        def loss_fn():
            return ergan_losses(gen, disc, cfg, x_glasses, x_clean)["L_D"]

        analytic = torch.autograd.grad(loss_fn(), params)
        assert self._rel_error(analytic, self._numerical(loss_fn, params)) <= 1e-3


def _pair_fixture(n=8, size=16):
    torch.manual_seed(20)
    clean = torch.rand(n, 3, size, size) * 2 - 1
    glasses = clean.clone()
    glasses[:, :, 5:8, 4:12] = -0.9  # dark band standing in for glasses
    return glasses, clean


def _make_state(seed=5, batch=4):
    glasses, clean = _pair_fixture()
    n = clean.shape[0]

    def sample_pairs(b, rng):
        idx = torch.randint(n, (b,), generator=rng)
        return glasses[idx], clean[idx]

    cfg = ErganConfig(image_size=16, batch_size=batch, seed=seed)
    return init_ergan_state(cfg, sample_pairs, widths=(4, 4, 8, 8))


class TestTrainStep:
    def test_diagnostics_and_bookkeeping(self):
        state = _make_state()
        before = _param_count(state.generator)
        diag = ergan_train_step(state)
        assert set(diag) == {"loss_d", "loss_g", "rec_l1", "mask_min", "mask_max"}
        assert all(np.isfinite(v) for v in diag.values())
        assert 0.0 <= diag["mask_min"] <= diag["mask_max"] <= 1.0
        assert state.steps == 1
        assert _param_count(state.generator) == before

    def test_deterministic_across_fresh_states(self):
        a, b = _make_state(), _make_state()
        da = [ergan_train_step(a) for _ in range(3)]
        db = [ergan_train_step(b) for _ in range(3)]
        assert da == db

    def test_seed_changes_trajectory(self):
        a, b = _make_state(seed=5), _make_state(seed=6)
        assert ergan_train_step(a) != ergan_train_step(b)

    def test_reconstruction_descends_over_short_run(self):
        state = _make_state()
        first = ergan_train_step(state)["rec_l1"]
        last = None
        for _ in range(59):
            last = ergan_train_step(state)["rec_l1"]
        assert last < first
