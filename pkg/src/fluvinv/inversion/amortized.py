"""Amortized inversion: a dense network reparameterizes the latent space so
that samples drawn through it match the observations."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import tensors as tc
from .loss import DataLoss, DataLossConfig, InversionError
from .networks import mlp_apply, mlp_init, mlp_sizes
from .optimize import Adam

__all__ = [
    "InferenceNetConfig",
    "InferenceNet",
    "AmortizedResult",
    "train_inference_network",
    "mean_pairwise_distance",
    "expected_prior_pairwise_distance",
]


@dataclass
class InferenceNetConfig:
    hidden: tuple = (64, 64)
    noise_dim: int | None = None     # default: the latent dimension
    steps: int = 400
    batch: int = 8
    lr: float = 1e-3
    collapse_reg: float = 0.0        # moment-matching pull toward the prior; off by default
    loss: DataLossConfig = field(default_factory=DataLossConfig)
    rng_seed: int = 0
    dtype: str = "float64"


class InferenceNet:
    """Noise -> latent map; output dimension equals the generator latent size."""

    def __init__(self, noise_dim, latent_dim, hidden=(64, 64), weights=None, rng_seed=0):
        self.noise_dim = noise_dim
        self.latent_dim = latent_dim
        self.hidden = tuple(hidden)
        self.n_layers = len(mlp_sizes(noise_dim, self.hidden, latent_dim))
        if weights is None:
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence((int(rng_seed), 19))))
            weights = mlp_init(noise_dim, self.hidden, latent_dim, rng)
        self.weights = weights

    def apply(self, tape, eps, weight_nodes=None):
        if weight_nodes is None:
            weight_nodes = {k: tape.constant(v) for k, v in self.weights.items()}
        return mlp_apply(tape, weight_nodes, eps, self.n_layers)

    def push(self, eps):
        tape = tc.GraphTape(np.float64)
        return np.asarray(self.apply(tape, tape.constant(np.asarray(eps))).value)

    def sample(self, n, rng_seed=0):
        """n latents from counter-based noise draws."""
        out = np.empty((n, self.latent_dim))
        for i in range(n):
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence((int(rng_seed), 23, i))))
            out[i] = self.push(rng.standard_normal(self.noise_dim))
        return out


@dataclass
class AmortizedResult:
    net: InferenceNet
    loss_history: np.ndarray
    wall_clock_s: float = 0.0
    halted: bool = False


def train_inference_network(generator, observations, config=None):
    """Train the latent reparameterization against the frozen generator."""
    cfg = config or InferenceNetConfig()
    t0 = time.perf_counter()
    noise_dim = cfg.noise_dim or generator.latent_dim
    net = InferenceNet(noise_dim, generator.latent_dim, cfg.hidden, rng_seed=cfg.rng_seed)
    loss_fn = DataLoss(observations, cfg.loss, geometry=generator.geometry)
    params = {k: v.copy() for k, v in net.weights.items()}
    opt = Adam(lr=cfg.lr)
    dtype = np.dtype(cfg.dtype)

    history = []
    halted = False
    for step in range(cfg.steps):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((int(cfg.rng_seed), 29, step))))
        tape = tc.GraphTape(dtype)
        wnodes = {k: tape.input(v) for k, v in params.items()}
        total = None
        latents = []
        for _ in range(cfg.batch):
            eps = rng.standard_normal(noise_dim)
            z = net.apply(tape, tape.constant(eps), wnodes)
            latents.append(z)
            coarse, _ = generator.build(tape, z)
            part = loss_fn.build(tape, coarse, z=z)
            total = part if total is None else total + part
        total = (1.0 / cfg.batch) * total

        if cfg.collapse_reg > 0:
            mean = latents[0]
            for z in latents[1:]:
                mean = mean + z
            mean = (1.0 / cfg.batch) * mean
            var = None
            for z in latents:
                dev = z - mean
                part = tc.square(dev)
                var = part if var is None else var + part
            var = (1.0 / max(cfg.batch - 1, 1)) * var
            reg = tc.mean_all(tc.square(mean)) + tc.mean_all(tc.square(tc.sqrt(var + 1e-12) - 1.0))
            total = total + cfg.collapse_reg * reg

        value = float(total.value)
        history.append(value)
        if not np.isfinite(value):
            halted = True
            break
        grads = tape.backward(total)
        opt.step(params, {k: grads.wrt(n) for k, n in wnodes.items()})

    net.weights = params
    return AmortizedResult(net=net, loss_history=np.asarray(history),
                           wall_clock_s=time.perf_counter() - t0, halted=halted)


def mean_pairwise_distance(latents):
    z = np.asarray(latents)
    n = z.shape[0]
    if n < 2:
        raise InversionError("need at least two latents")
    total = 0.0
    count = 0
    for i in range(n):
        total += np.linalg.norm(z[i + 1:] - z[i], axis=1).sum()
        count += n - 1 - i
    return total / count


def expected_prior_pairwise_distance(d):
    """E|z1 - z2| for independent standard normals: 2 Gamma((d+1)/2) / Gamma(d/2)."""
    return 2.0 * math.exp(math.lgamma((d + 1) / 2.0) - math.lgamma(d / 2.0))
