"""Shared test fixtures: a linear generator with a known least-squares oracle."""

import numpy as np

import fluvinv.tensors as tc
from fluvinv.grids import GridGeometry, ModelGrid


class LinearGenerator:
    """G(z) = offset + A z laid out on a 1 x 1 x m grid; convex inversion."""

    kind = "linear"

    def __init__(self, A, offset=0.5):
        A = np.asarray(A, dtype=np.float64)
        self.A = A
        self.offset = offset
        self.geometry = GridGeometry(nx=A.shape[0], ny=1, nz=1)
        self.latent_dim = A.shape[1]
        self.label_dim = 0

    def weights(self):
        return {}

    def build(self, tape, z, labels=None, weights=None):
        v = tc.dense(tape.constant(self.A), z) + self.offset
        coarse = tc.reshape(v, (1, 1, self.A.shape[0]))
        return coarse, coarse

    def generate(self, z, labels=None, dtype=np.float64):
        vals = np.clip(self.A @ np.asarray(z, dtype=np.float64) + self.offset,
                       0.0, 1.0).reshape(1, 1, -1)
        return ModelGrid(self.geometry, vals, vals.copy())

    def posterior(self, y, sigma):
        """Analytic Gaussian posterior for data y = offset + A z + noise."""
        prec = np.eye(self.latent_dim) + self.A.T @ self.A / sigma ** 2
        cov = np.linalg.inv(prec)
        mean = cov @ self.A.T @ (np.asarray(y) - self.offset) / sigma ** 2
        return mean, cov
