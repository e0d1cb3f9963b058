import math
import os

import torch

from deconvmode.core.density import Dataset
from deconvmode.core.kernels import k1
from deconvmode.utils import DTYPE, make_generator

RUN_SLOW = os.environ.get("DECONVMODE_RUN_SLOW") == "1"
SLOW_REASON = "set DECONVMODE_RUN_SLOW=1 to run Monte-Carlo checks"


def random_dataset(n, seed=0, w_scale=1.0, y_scale=1.0):
    generator = make_generator(seed, 99)
    w = w_scale * torch.randn(n, generator=generator, dtype=DTYPE)
    y = y_scale * torch.randn(n, generator=generator, dtype=DTYPE)
    return Dataset(w=w, y=y)


def flat_mixture_dataset(n, seed, centres, sd=0.5):
    """X ~ Uniform(-2, 2) and Y an equal-weight normal mixture that ignores X."""
    generator = make_generator(seed, 98)
    x = -2.0 + 4.0 * torch.rand(n, generator=generator, dtype=DTYPE)
    label = torch.randint(len(centres), (n,), generator=generator)
    y = torch.tensor(centres, dtype=DTYPE)[label] + sd * torch.randn(
        n, generator=generator, dtype=DTYPE
    )
    return Dataset(w=x, y=y)


def normal_pdf(z):
    return torch.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)


def plain_s(w, x, h1, ell):
    """Error-free S_l(x) with K_1, summed directly."""
    t = (w - x) / h1
    return float((t**ell * k1(t)).sum() / (w.numel() * h1))


def plain_t(w, y_obs, x, y, h1, h2, ell):
    t = (w - x) / h1
    u = (y_obs - y) / h2
    return float((t**ell * k1(t) * normal_pdf(u)).sum() / (w.numel() * h1 * h2))


def plain_local_linear(w, y_obs, x, y, h1, h2):
    s0, s1, s2 = (plain_s(w, x, h1, ell) for ell in (0, 1, 2))
    t0 = plain_t(w, y_obs, x, y, h1, h2, 0)
    t1 = plain_t(w, y_obs, x, y, h1, h2, 1)
    return (s2 * t0 - s1 * t1) / (s0 * s2 - s1 * s1)
