"""Central finite-difference gradient checking shared by the test suite.

Probes random parameter coordinates of a composite loss and compares the
autograd gradient against (f(t+h) - f(t-h)) / 2h with allclose semantics:
a probe passes if |analytic - fd| <= atol + rtol * max(|analytic|, |fd|).
"""

import numpy as np
import torch


def probe_gradients(loss_fn, params, n_probes, h, rng):
    """Returns (analytic, fd) pairs for n_probes random parameter coordinates.

    loss_fn must rebuild the forward graph on every call; params are the leaf
    tensors it depends on.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    out = []
    for _ in range(n_probes):
        flat = int(rng.integers(0, total))
        which = 0
        while flat >= sizes[which]:
            flat -= sizes[which]
            which += 1
        param = params[which]
        original = param.data.view(-1)[flat].item()
        with torch.no_grad():
            param.data.view(-1)[flat] = original + h
            f_plus = loss_fn().item()
            param.data.view(-1)[flat] = original - h
            f_minus = loss_fn().item()
            param.data.view(-1)[flat] = original
        fd = (f_plus - f_minus) / (2.0 * h)
        analytic = grads[which].view(-1)[flat].item()
        out.append((analytic, fd))
    return out


def assert_probes_close(pairs, rtol, atol):
    worst = 0.0
    for analytic, fd in pairs:
        err = abs(analytic - fd)
        bound = atol + rtol * max(abs(analytic), abs(fd))
        assert err <= bound, (
            f"gradient mismatch: analytic={analytic!r} fd={fd!r} "
            f"err={err:.3e} bound={bound:.3e}"
        )
        if err - atol > 0:
            worst = max(worst, (err - atol) / max(abs(analytic), abs(fd), 1e-300))
    return worst


def max_rel_error(pairs, atol):
    """Largest relative error among probes whose magnitude clears atol."""
    worst = 0.0
    for analytic, fd in pairs:
        scale = max(abs(analytic), abs(fd))
        if scale * 1e-3 > atol:
            worst = max(worst, abs(analytic - fd) / scale)
    return worst
