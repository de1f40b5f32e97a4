"""Finite-difference checks of the three loss gradients through tiny networks.

The composite graph here keeps everything differentiable (no detaching), so
the check covers gradient flow through the score means as well; the training
loop's detachment policy only removes terms, it cannot invalidate these.
"""

import numpy as np
import pytest
import torch

from abyss.losses import (
    RelativisticScores,
    gan_loss_d,
    gan_loss_g,
    l1_loss,
)
from abyss.model import (
    DiscriminatorConfig,
    GeneratorConfig,
    init_discriminator,
    init_generator,
)
from fdcheck import assert_probes_close, probe_gradients

TINY_G = GeneratorConfig(n_rrdb=1, base_channels=8, growth_channels=4, scale=2)
TINY_D = DiscriminatorConfig(channel_schedule=(4, 8, 16, 32))


def build_setup(dtype):
    torch.manual_seed(0)
    g = init_generator(TINY_G, 1).to(dtype)
    d = init_discriminator(TINY_D, 2).to(dtype)
    # 36x36 LR doubles to 72x72, above the 70x70 receptive-field minimum
    x = torch.rand(1, 3, 36, 36, dtype=dtype)
    y = torch.rand(1, 3, 72, 72, dtype=dtype)
    return g, d, x, y


def loss_fns(g, d, x, y):
    def rel():
        return RelativisticScores.from_score_maps(d(y), d(g(x)))

    return {
        "l1": lambda: l1_loss(g(x), y),
        "gan_d": lambda: gan_loss_d(rel()),
        "gan_g": lambda: gan_loss_g(rel()),
    }


@pytest.mark.parametrize("name", ["l1", "gan_d", "gan_g"])
def test_double_precision_gradients(name):
    g, d, x, y = build_setup(torch.float64)
    params = list(g.parameters()) + list(d.parameters())
    fn = loss_fns(g, d, x, y)[name]
    rng = np.random.default_rng(7)
    pairs = probe_gradients(fn, params, n_probes=30, h=1e-6, rng=rng)
    assert_probes_close(pairs, rtol=1e-4, atol=1e-8)


@pytest.mark.parametrize("name", ["l1", "gan_d", "gan_g"])
def test_single_precision_gradients(name):
    g, d, x, y = build_setup(torch.float32)
    params = list(g.parameters()) + list(d.parameters())
    fn = loss_fns(g, d, x, y)[name]
    rng = np.random.default_rng(8)
    pairs = probe_gradients(fn, params, n_probes=30, h=1e-2, rng=rng)
    assert_probes_close(pairs, rtol=1e-2, atol=1e-4)


def test_gradient_flows_through_score_means():
    # the relativistic means are part of the graph: the generator receives
    # gradient from the (real - fake_mean + 1)^2 term alone
    g, d, x, y = build_setup(torch.float64)
    real = d(y).detach()  # real path constant, as in the G training step
    scores = RelativisticScores.from_score_maps(real, d(g(x)))
    term = ((scores.real_scores - scores.fake_mean + 1.0) ** 2).mean()
    grads = torch.autograd.grad(term, list(g.parameters()), allow_unused=True)
    assert any(gr is not None and gr.abs().sum() > 0 for gr in grads)
