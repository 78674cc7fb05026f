"""Seed-stream derivation and frozen Monte-Carlo tables.

A single master seed fans out into named substreams so that the different
sources of randomness (bound-estimation noise, input-path sampling,
validation runs, oracle draws) can be varied independently. All designs
and bound evaluations reuse one frozen set of prior draws and process
noise (common random numbers): policy-parameter changes never reshuffle
the noise, which keeps the design objective smooth under the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# spawn_key codes for the named substreams of a master seed
STREAM_NOISE = 0
STREAM_INPUTS = 1
STREAM_VALIDATE = 2
STREAM_ORACLE = 3


def substream(seed: int, code: int, index: int | None = None) -> np.random.Generator:
    """Generator for substream `code` (optionally sub-indexed) of a master seed."""
    key = (int(code),) if index is None else (int(code), int(index))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


@dataclass(frozen=True)
class BoundTables:
    """Frozen draws backing one Monte-Carlo bound evaluation.

    x0 and theta are joint prior samples; v_scaled holds process noise
    already scaled by chol(Q), laid out (step, sample, state) so every
    input path sees identical noise at matching (sample, step) slots.
    """

    x0: np.ndarray        # (M, n)
    theta: np.ndarray     # (M, q)
    v_scaled: np.ndarray  # (N, M, n)

    @property
    def m_samples(self) -> int:
        return self.x0.shape[0]

    @property
    def n_steps(self) -> int:
        return self.v_scaled.shape[0]

    @classmethod
    def draw(cls, model, n_steps: int, m_samples: int, rng: np.random.Generator) -> "BoundTables":
        """Draw prior samples then process noise, in that fixed order."""
        eps0 = rng.standard_normal((m_samples, model.n + model.q))
        z0 = model.prior_mean + eps0 @ model.chol_prior.T
        v = rng.standard_normal((n_steps, m_samples, model.n)) @ model.chol_q.T
        x0 = np.ascontiguousarray(z0[:, : model.n])
        theta = np.ascontiguousarray(z0[:, model.n :])
        return cls(x0=x0, theta=theta, v_scaled=np.ascontiguousarray(v))


def uniform_table(n_paths: int, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """Frozen uniforms, one row per input path, consumed by inverse-CDF decoding."""
    return rng.random((n_paths, n_steps))
