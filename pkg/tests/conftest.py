import numpy as np
import pytest

from floatlab.autodiff import cross_entropy
from floatlab.model import ArchConfig, build_net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_net(seed=7, dtype=np.float64, channels=(4, 6), strides=(1, 2), n_classes=3,
             in_channels=1, slim_factors=(1.0,)):
    return build_net(
        ArchConfig(channels=channels, strides=strides),
        in_channels=in_channels,
        n_classes=n_classes,
        seed=seed,
        slim_factors=slim_factors,
        dtype=dtype,
    )


def fd_gradcheck(loss_fn, param, rng, n_entries=6, h_scale=1e-6):
    """Max relative error between the stored analytic gradient of ``param``
    and a central finite difference of ``loss_fn``.  ``param.grad`` must
    already be populated; ``loss_fn()`` re-evaluates the scalar loss."""
    flat = param.data.reshape(-1)
    grad = param.grad.reshape(-1)
    idx = rng.choice(flat.size, size=min(n_entries, flat.size), replace=False)
    worst = 0.0
    for i in idx:
        orig = flat[i]
        h = h_scale * max(1.0, abs(orig))
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        fd = (up - down) / (2.0 * h)
        denom = max(abs(fd), abs(grad[i]), 1e-8)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst


def net_loss_fn(net, x, labels, plan):
    def fn():
        loss, _ = net.loss(x, labels, plan)
        return float(loss.data)

    return fn
