import numpy as np
import pytest

from vehicle_color import model
from vehicle_color.data import CLASS_NAMES, ArrayImageSet, compute_mean_image
from vehicle_color.optim import TrainConfig
from vehicle_color.training import train

# One solid colour per class, in CLASS_NAMES order.
SOLID_COLORS = {
    "black": (0, 0, 0),
    "blue": (0, 0, 255),
    "cyan": (0, 255, 255),
    "gray": (128, 128, 128),
    "green": (0, 128, 0),
    "red": (255, 0, 0),
    "white": (255, 255, 255),
    "yellow": (255, 255, 0),
}
SMOKE_SIZE = 40


def solid_images(size=SMOKE_SIZE, dtype=np.float32):
    return np.stack(
        [
            np.broadcast_to(np.array(SOLID_COLORS[name], dtype)[:, None, None], (3, size, size))
            for name in CLASS_NAMES
        ]
    ).copy()


def smoke_config(**changes):
    cfg = TrainConfig.load(_configs_dir() / "smoke.cfg")
    return cfg.replace(**changes) if changes else cfg


def _configs_dir():
    from pathlib import Path

    return Path(__file__).resolve().parent.parent / "configs"


def rel_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` w.r.t. every element of ``x`` (in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        g[i] = (up - down) / (2 * h)
    return grad


def naive_conv(x, w, b, stride, pad):
    """Quadruple loop cross-correlation, float32 ops in (bias, c, i, j) order."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    dt = x.dtype.type
    out = np.empty((n, o, oh, ow), dtype=x.dtype)
    for a in range(n):
        for f in range(o):
            for y in range(oh):
                for z in range(ow):
                    acc = dt(b[f])
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                acc = dt(acc + dt(xp[a, ch, y * stride + i, z * stride + j] * w[f, ch, i, j]))
                    out[a, f, y, z] = acc
    return out


@pytest.fixture(scope="session")
def smoke_run():
    """The overfit run on 8 solid colours, shared by several tests."""
    import time

    cfg = smoke_config()
    images = ArrayImageSet(solid_images(cfg.resize_size), np.arange(len(CLASS_NAMES)))
    mean = compute_mean_image(images)
    state = model.build(cfg.network_spec(), seed=cfg.seed)
    start = time.perf_counter()
    optimizer, log = train(state, images, mean, cfg)
    elapsed = time.perf_counter() - start
    return dict(cfg=cfg, images=images, mean=mean, state=state, optimizer=optimizer, log=log, seconds=elapsed)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
