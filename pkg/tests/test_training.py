import csv

import numpy as np
import pytest
import torch
import torch.nn as nn

from helpers import fd_relative_error
from realosr import ConfigurationError, ValidationError
from realosr.io import file_sha256
from realosr.metrics import METRIC_COLUMNS
from realosr.training import (
    LossWeights,
    RealOSR,
    TrainConfig,
    charbonnier_loss,
    combine_losses,
    evaluate,
    gan_losses,
    load_dataset,
    perceptual_proxy_loss,
    total_loss,
    train,
    view_pairs,
)

SMALL = dict(view_size=32, width=8, ae_steps=5, batch=2)


class ConstDisc(nn.Module):
    def __init__(self, value=0.0):
        super().__init__()
        self.value = value

    def forward(self, x):
        return torch.full((x.shape[0], 1, 2, 2), self.value, dtype=x.dtype)


class AffineDisc(nn.Module):
    """Two-parameter critic ``a * mean(x) + b``."""

    def __init__(self):
        super().__init__()
        self.a = nn.Parameter(torch.tensor(0.7, dtype=torch.float64))
        self.b = nn.Parameter(torch.tensor(-0.2, dtype=torch.float64))

    def forward(self, x):
        return self.a * x.mean(dim=(1, 2, 3), keepdim=True) + self.b


# ---------------------------------------------------------------- losses

def test_charbonnier_identical_is_eps():
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    assert charbonnier_loss(x, x).item() == pytest.approx(1e-3, abs=1e-15)


def test_charbonnier_large_offset_is_l1():
    x = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
    assert charbonnier_loss(x + 5.0, x).item() == pytest.approx(5.0, rel=1e-7)


def test_charbonnier_gradient():
    gen = torch.Generator().manual_seed(0)
    pred = torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    gt = torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64)
    (g,) = torch.autograd.grad(charbonnier_loss(pred, gt), pred)
    diff = pred.detach() - gt
    oracle = diff / torch.sqrt(diff ** 2 + 1e-6) / diff.numel()
    assert torch.allclose(g, oracle, atol=1e-4)
    assert fd_relative_error(lambda: charbonnier_loss(pred, gt), [pred]) <= 1e-4


def test_perceptual_proxy_properties():
    gen = torch.Generator().manual_seed(1)
    x = torch.rand(1, 3, 32, 32, generator=gen, dtype=torch.float64)
    assert perceptual_proxy_loss(x, x).item() == 0.0
    assert perceptual_proxy_loss(x + 0.3, x).item() == pytest.approx(0.0, abs=1e-12)
    blurred = torch.nn.functional.avg_pool2d(x, 3, 1, 1, count_include_pad=False)
    assert perceptual_proxy_loss(blurred, x).item() > 0.01


def test_loss_shape_mismatch():
    with pytest.raises(ValidationError):
        charbonnier_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))
    with pytest.raises(ValidationError):
        perceptual_proxy_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 1, 4, 4))


def test_hinge_constant_critic():
    x = torch.rand(2, 3, 8, 8)
    g, d = gan_losses(ConstDisc(0.0), x, x)
    assert g.item() == 0.0 and d.item() == 2.0


def test_hinge_satisfied_margins():
    class Sep(nn.Module):
        def forward(self, x):
            return torch.where(x.mean() > 0.5, 3.0, -3.0) * torch.ones(x.shape[0], 1, 1, 1)

    real, fake = torch.ones(2, 3, 4, 4), torch.zeros(2, 3, 4, 4)
    g, d = gan_losses(Sep(), real, fake)
    assert d.item() == 0.0 and g.item() == 3.0


def test_hinge_gradient_matches_finite_differences():
    disc = AffineDisc()
    gen = torch.Generator().manual_seed(2)
    real = torch.rand(4, 3, 4, 4, generator=gen, dtype=torch.float64)
    fake = torch.rand(4, 3, 4, 4, generator=gen, dtype=torch.float64)
    err = fd_relative_error(lambda: gan_losses(disc, real, fake)[1], [disc.a, disc.b])
    assert err <= 1e-4
    err = fd_relative_error(lambda: gan_losses(disc, real, fake)[0], [disc.a, disc.b])
    assert err <= 1e-4


def test_combine_losses_weighted_sum():
    comps = {"rec": torch.tensor(0.1, dtype=torch.float64), "perc": torch.tensor(0.02, dtype=torch.float64),
             "gan": torch.tensor(0.4, dtype=torch.float64)}
    assert combine_losses(comps, LossWeights()).item() == pytest.approx(0.5, abs=1e-12)
    assert combine_losses(comps, LossWeights(0, 0, 0)).item() == 0.0
    with pytest.raises(ValidationError):
        LossWeights(rec=-1)


def test_total_loss_at_target():
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    total, comps = total_loss(x, x, ConstDisc(0.0))
    assert total.item() == pytest.approx(2 * 1e-3, abs=1e-12)
    assert comps["perc"].item() == 0.0 and comps["gan"].item() == 0.0
    total, _ = total_loss(x, x, None, LossWeights(0, 0, 0))
    assert total.item() == 0.0


# ---------------------------------------------------------------- config

def test_train_config_round_trip_and_validation():
    cfg = TrainConfig(dataset="x", steps=3, weights={"rec": 1, "perc": 1, "gan": 0})
    again = TrainConfig.from_dict(cfg.to_dict())
    assert again == cfg
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"dataset": "x", "stpes": 3})
    with pytest.raises(ConfigurationError):
        TrainConfig(variant="bogus")
    with pytest.raises(ConfigurationError):
        TrainConfig(lr=0)


# ---------------------------------------------------------------- data + loop

def test_load_dataset_and_views(tiny_dataset):
    items = load_dataset(tiny_dataset)
    assert [n for n, *_ in items] == ["p0", "p1"]
    name, hr, lr, d = items[0]
    assert hr.shape == (3, 128, 256) and lr.shape == (3, 32, 64)
    assert d.shape == (2,) and np.all((d >= 0) & (d <= 1))
    x, y, dd = view_pairs(items, 32)
    assert x.shape == y.shape == (36, 3, 32, 32)
    assert dd.shape == (36, 2)


def test_empty_dataset_raises(tmp_path):
    with pytest.raises(ValidationError):
        train(TrainConfig(out_dir=str(tmp_path), steps=1, **SMALL), items=[])
    with pytest.raises((ValidationError, OSError)):
        load_dataset(tmp_path)


@pytest.fixture(scope="module")
def short_runs(tiny_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    runs = {}
    for tag, variant in [("a", "full"), ("b", "full"), ("base", "tp_baseline")]:
        cfg = TrainConfig(dataset=str(tiny_dataset), out_dir=str(root / tag), variant=variant, steps=4, **SMALL)
        runs[tag] = train(cfg)
    return runs


def test_training_outputs(short_runs):
    res = short_runs["a"]
    assert res.checkpoint.exists()
    with open(res.checkpoint.parent / "losses.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert list(rows[0]) == ["step", "total", "rec", "perc", "gan", "d_loss"]
    w = LossWeights()
    for r in rows:
        combo = w.rec * float(r["rec"]) + w.perc * float(r["perc"]) + w.gan * float(r["gan"])
        assert float(r["total"]) == pytest.approx(combo, rel=1e-5, abs=1e-6)
    assert res.frozen_before == res.frozen_after


def test_training_deterministic(short_runs):
    a, b = short_runs["a"], short_runs["b"]
    assert [r["total"] for r in a.losses] == [r["total"] for r in b.losses]
    sa, sb = a.model.state_dict(), b.model.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)


def test_baseline_has_fewer_trainable_parameters(short_runs):
    assert short_runs["base"].n_trainable < short_runs["a"].n_trainable


def test_evaluate_bicubic_and_checkpoint(short_runs, tiny_dataset, tmp_path):
    bic = evaluate(None, tiny_dataset, "bicubic", tmp_path / "bic.csv")
    assert len(bic.rows) == 2
    assert 10 < bic.mean()["ws_psnr"] < 99
    ckpt = short_runs["a"].checkpoint
    before = file_sha256(ckpt)
    rep = evaluate(ckpt, tiny_dataset, "full", tmp_path / "full.csv")
    assert file_sha256(ckpt) == before
    with open(tmp_path / "full.csv") as fh:
        header = next(csv.reader(fh))
    assert set(METRIC_COLUMNS) <= set(header) and "variant" in header
    assert len(rep.rows) == 2


def test_evaluate_variant_mismatch(short_runs, tiny_dataset):
    with pytest.raises(ValidationError):
        evaluate(short_runs["a"].checkpoint, tiny_dataset, "latent_add")


def test_estimator_params():
    est = RealOSR(steps=3, seed=4)
    assert est.get_params()["steps"] == 3
    est.set_params(variant="latent_add")
    assert est.variant == "latent_add"
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((3, 8, 16)))
