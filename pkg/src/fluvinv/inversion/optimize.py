"""Latent optimization and pivotal tuning of generator weights."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .. import tensors as tc
from ..generators import neutral_labels, sample_prior
from .loss import DataLoss, DataLossConfig, InversionError, well_mae

__all__ = [
    "Adam",
    "LatentOptimizeConfig",
    "RestartRecord",
    "InversionResult",
    "latent_optimize",
    "PivotalTuneConfig",
    "TuneResult",
    "pivotal_tune",
]


class Adam:
    """Adam over a dict of named arrays."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._m = {}
        self._v = {}
        self._t = 0

    def step(self, params, grads):
        """Update params in place; returns params."""
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self._t
        corr2 = 1.0 - b2 ** self._t
        for k, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            m = self._m.get(k)
            if m is None:
                m = np.zeros_like(g)
                self._m[k] = m
                self._v[k] = np.zeros_like(g)
            v = self._v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] = params[k] - self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
        return params


@dataclass
class LatentOptimizeConfig:
    n_restarts: int = 30
    iterations: int = 1000
    lr: float = 0.01
    lr_schedule: str = "constant"      # or "cosine" (decay to 1% of lr)
    beta1: float = 0.9
    beta2: float = 0.999
    loss: DataLossConfig = field(default_factory=DataLossConfig)
    optimize_labels: bool = False
    ball_radius: float | None = None   # project z onto radius r*sqrt(d); off by default
    rng_seed: int = 0
    dtype: str = "float64"
    threads: int = 1

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise InversionError(f"unknown lr schedule {self.lr_schedule!r}")


@dataclass
class RestartRecord:
    index: int
    z: np.ndarray
    labels: np.ndarray | None
    loss_history: np.ndarray
    well_mae: float
    aborted: bool = False
    note: str = ""

    def to_json_dict(self):
        return {
            "index": self.index,
            "z": self.z.tolist(),
            "labels": None if self.labels is None else self.labels.tolist(),
            "loss_history": [float(v) for v in self.loss_history],
            "well_mae": self.well_mae,
            "aborted": self.aborted,
            "note": self.note,
        }


@dataclass
class InversionResult:
    method: str
    rng_seed: int
    restarts: list
    wall_clock_s: float = 0.0
    meta: dict = field(default_factory=dict)

    def ok(self):
        return [r for r in self.restarts if not r.aborted]

    def best(self):
        good = self.ok()
        if not good:
            raise InversionError("all restarts aborted")
        return min(good, key=lambda r: r.well_mae)

    def latents(self):
        return np.array([r.z for r in self.ok()])

    def well_maes(self):
        return np.array([r.well_mae for r in self.ok()])

    def to_json_dict(self, include_timing=False):
        # timing is excluded by default so artifacts stay byte-reproducible
        out = {
            "method": self.method,
            "rng_seed": self.rng_seed,
            "restarts": [r.to_json_dict() for r in self.restarts],
            "meta": self.meta,
        }
        if include_timing:
            out["wall_clock_s"] = self.wall_clock_s
        return out


def _project_ball(z, radius):
    norm = float(np.linalg.norm(z))
    cap = radius * math.sqrt(z.size)
    if norm > cap:
        return z * (cap / norm)
    return z


def _run_restart(args):
    generator, observations, config, index = args
    dtype = np.dtype(config.dtype)
    z = sample_prior(index + 1, generator.latent_dim, config.rng_seed)[index]
    labels = None
    if config.optimize_labels:
        if generator.label_dim == 0:
            raise InversionError("generator has no labels to co-optimize")
        labels = neutral_labels(generator.label_dim)

    loss_fn = DataLoss(observations, config.loss, geometry=generator.geometry)
    opt = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    params = {"z": z.copy()}
    if labels is not None:
        params["labels"] = labels.copy()

    history = []
    aborted = False
    note = ""
    for it in range(config.iterations):
        if config.lr_schedule == "cosine":
            opt.lr = config.lr * (0.01 + 0.99 * 0.5 *
                                  (1.0 + math.cos(math.pi * it / config.iterations)))
        tape = tc.GraphTape(dtype)
        zn = tape.input(params["z"])
        ln = None
        if generator.label_dim:
            ln = tape.input(params["labels"]) if labels is not None \
                else tape.constant(neutral_labels(generator.label_dim))
        coarse, _depo = generator.build(tape, zn, ln)
        loss = loss_fn.build(tape, coarse, z=zn)
        value = float(loss.value)
        history.append(value)
        if not np.isfinite(value):
            aborted = True
            note = f"non-finite loss at iteration {len(history) - 1}"
            break
        grads = tape.backward(loss)
        gdict = {"z": grads.wrt(zn)}
        if labels is not None:
            gdict["labels"] = grads.wrt(ln)
        opt.step(params, gdict)
        if config.ball_radius is not None:
            params["z"] = _project_ball(params["z"], config.ball_radius)
        if labels is not None:
            params["labels"] = np.clip(params["labels"], 0.0, 1.0)

    if not aborted:
        tape = tc.GraphTape(dtype)
        ln = None
        if generator.label_dim:
            ln = tape.constant(params["labels"] if labels is not None
                               else neutral_labels(generator.label_dim))
        coarse, _ = generator.build(tape, tape.constant(params["z"]), ln)
        final_loss = loss_fn.build(tape, coarse,
                                   z=tape.constant(params["z"]))
        history.append(float(final_loss.value))

    grid = generator.generate(params["z"],
                              params.get("labels") if labels is not None else None,
                              dtype=dtype)
    mae = well_mae(grid, observations.wells) if observations.wells is not None else math.nan
    return RestartRecord(index=index, z=params["z"],
                         labels=params.get("labels"),
                         loss_history=np.asarray(history),
                         well_mae=mae, aborted=aborted, note=note)


def latent_optimize(generator, observations, config=None):
    """Independent Adam restarts on the latent; generator weights untouched.

    Restart i is seeded by (rng_seed, i) alone, so the result is identical
    for any worker count.
    """
    config = config or LatentOptimizeConfig()
    t0 = time.perf_counter()
    jobs = [(generator, observations, config, i) for i in range(config.n_restarts)]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            restarts = list(pool.map(_run_restart, jobs))
    else:
        restarts = [_run_restart(j) for j in jobs]
    restarts.sort(key=lambda r: r.index)
    return InversionResult(method="latent-opt", rng_seed=config.rng_seed,
                           restarts=restarts,
                           wall_clock_s=time.perf_counter() - t0,
                           meta={"iterations": config.iterations, "lr": config.lr})


# ---------------------------------------------------------------------------
# pivotal tuning

@dataclass
class PivotalTuneConfig:
    steps: int = 500
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    locality_weight: float = 1.0       # math.inf disables the data term
    anchors_per_step: int = 16
    pivots_per_step: int = 4           # 0: every pivot every step
    loss: DataLossConfig = field(default_factory=DataLossConfig)
    mode: str = "shared"               # or "per_pivot"
    rng_seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.mode not in ("shared", "per_pivot"):
            raise InversionError(f"unknown tuning mode {self.mode!r}")


@dataclass
class TuneResult:
    mode: str
    generators: list
    pivots: np.ndarray
    mae_before: np.ndarray
    mae_after: np.ndarray
    loss_history: list
    wall_clock_s: float = 0.0

    def generator_for(self, pivot_index):
        return self.generators[0] if self.mode == "shared" else self.generators[pivot_index]

    def to_json_dict(self, include_timing=False):
        out = {
            "mode": self.mode,
            "pivots": self.pivots.tolist(),
            "mae_before": self.mae_before.tolist(),
            "mae_after": self.mae_after.tolist(),
            "loss_history": [[float(v) for v in h] for h in self.loss_history],
        }
        if include_timing:
            out["wall_clock_s"] = self.wall_clock_s
        return out


def _tune_one(generator, pivots, observations, config):
    dtype = np.dtype(config.dtype)
    loss_fn = DataLoss(observations, config.loss, geometry=generator.geometry)
    params = {k: v.astype(np.float64) for k, v in generator.weights().items()}
    base = generator  # frozen reference for the locality anchors
    opt = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    if math.isinf(config.locality_weight):
        data_term_on, lam = False, 1.0  # anchor-only objective
    else:
        data_term_on, lam = True, config.locality_weight
    n_pivots = len(pivots)
    batch = config.pivots_per_step or n_pivots
    batch = min(batch, n_pivots)

    history = []
    for step in range(config.steps):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((int(config.rng_seed), 7, step))))

        tape = tc.GraphTape(dtype)
        wnodes = {k: tape.input(v) for k, v in params.items()}
        total = None

        if data_term_on:
            chosen = rng.permutation(n_pivots)[:batch]
            for i in chosen:
                coarse, _ = generator.build(tape, tape.constant(pivots[i]),
                                            _neutral_node(tape, generator),
                                            weights=wnodes)
                part = loss_fn.build(tape, coarse)
                total = part if total is None else total + part
            total = (1.0 / batch) * total

        if lam > 0 and config.anchors_per_step > 0:
            anchor = None
            for j in range(config.anchors_per_step):
                which = rng.integers(n_pivots)
                alpha = rng.uniform()
                fresh = rng.standard_normal(generator.latent_dim)
                z_tilde = alpha * pivots[which] + (1.0 - alpha) * fresh
                ref = base.generate(z_tilde, dtype=dtype)
                coarse, depo = generator.build(tape, tape.constant(z_tilde),
                                               _neutral_node(tape, generator),
                                               weights=wnodes)
                d = (tc.mean_all(tc.square(coarse - tape.constant(ref.coarse_fraction)))
                     + tc.mean_all(tc.square(depo - tape.constant(ref.depo_time))))
                anchor = d if anchor is None else anchor + d
            anchor = (lam / config.anchors_per_step) * anchor
            total = anchor if total is None else total + anchor

        value = float(total.value)
        history.append(value)
        if not np.isfinite(value):
            raise InversionError(f"pivotal tuning diverged at step {step}")
        grads = tape.backward(total)
        opt.step(params, {k: grads.wrt(n) for k, n in wnodes.items()})

    tuned = generator.with_weights(
        {k: v.astype(generator.weights()[k].dtype) for k, v in params.items()})
    return tuned, history


def _neutral_node(tape, generator):
    if generator.label_dim == 0:
        return None
    return tape.constant(neutral_labels(generator.label_dim))


def pivotal_tune(generator, pivots, observations, config=None):
    """Fine-tune generator weights around fixed pre-inverted pivot latents.

    The data mismatch at the pivots is minimized while random latents near
    the pivots are anchored to the original generator's outputs, keeping the
    update local. Requires pivots: tuning from scratch is rejected.
    """
    config = config or PivotalTuneConfig()
    pivots = np.atleast_2d(np.asarray(pivots, dtype=np.float64))
    if pivots.size == 0:
        raise InversionError(
            "pivotal tuning requires pre-inverted pivot latents; "
            "random starts are not accepted")
    if observations.wells is None:
        raise InversionError("pivotal tuning needs well observations to score pivots")

    t0 = time.perf_counter()
    mae_before = np.array([well_mae(generator.generate(z), observations.wells)
                           for z in pivots])
    if config.mode == "shared":
        tuned, history = _tune_one(generator, pivots, observations, config)
        generators = [tuned]
        histories = [history]
    else:
        generators, histories = [], []
        for i, z in enumerate(pivots):
            sub = replace(config, rng_seed=config.rng_seed + i)
            tuned, history = _tune_one(generator, z[None, :], observations, sub)
            generators.append(tuned)
            histories.append(history)

    mae_after = np.array([
        well_mae((generators[0] if config.mode == "shared" else generators[i]).generate(z),
                 observations.wells)
        for i, z in enumerate(pivots)])
    return TuneResult(mode=config.mode, generators=generators, pivots=pivots,
                      mae_before=mae_before, mae_after=mae_after,
                      loss_history=histories,
                      wall_clock_s=time.perf_counter() - t0)
