"""Random generation from CFUST components and FM-CFUST mixtures.

Uses the convolution representation

    Y = mu + W^{-1/2} Delta |U0| + W^{-1/2} U1,
    W ~ gamma(nu/2, rate nu/2), U0 ~ N_q(0, I_q), U1 ~ N_p(0, Sigma).

Every draw comes from a Philox counter-based generator keyed by
``(seed, stream)``: stream 0 draws mixture labels and stream h + 1 draws the
rows of component h, so output is independent of how work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CountMismatch
from .params import CfustParams, MixtureModel, cholesky_lower


@dataclass(frozen=True)
class RngHandle:
    seed: int = 0
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, stream: int) -> "RngHandle":
        return RngHandle(self.seed, stream)


class LabeledSample(NamedTuple):
    values: np.ndarray
    labels: np.ndarray  # 1-based

    def to_matrix(self) -> np.ndarray:
        """n x (p+1) matrix with the component label in the last column."""
        return np.column_stack([self.values, self.labels.astype(float)])


def _as_rng(rng) -> RngHandle:
    if isinstance(rng, RngHandle):
        return rng
    return RngHandle(int(rng or 0))


def sample_cfust(n: int, params: CfustParams, rng=None) -> np.ndarray:
    """n i.i.d. CFUST draws as an n x p matrix."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    gen = _as_rng(rng).generator()
    p, q, nu = params.p, params.q, params.dof
    w = gen.gamma(shape=nu / 2.0, scale=2.0 / nu, size=n)
    u0 = np.abs(gen.standard_normal((n, q)))
    u1 = gen.standard_normal((n, p)) @ cholesky_lower(params.sigma).T
    return params.mu + (u0 @ params.delta.T + u1) / np.sqrt(w)[:, None]


def sample_mixture(n, model: MixtureModel, rng=None) -> LabeledSample:
    """Draw from a mixture.

    ``n`` is either a total count, in which case each label is drawn
    independently from Mult(1, pro), or a length-g vector of per-component
    counts.
    """
    rng = _as_rng(rng)
    counts_given = np.ndim(n) > 0
    if counts_given:
        counts = np.asarray(n, dtype=int)
        if counts.shape != (model.g,) or np.any(counts < 0):
            raise CountMismatch(f"counts must be {model.g} nonnegative integers, got {n}")
        labels = np.repeat(np.arange(model.g), counts)
    else:
        total = int(n)
        if total < 1:
            raise CountMismatch("n must be positive")
        gen = rng.substream(0).generator()
        labels = gen.choice(model.g, size=total, p=np.asarray(model.pro))
    values = np.empty((labels.shape[0], model.p))
    for h, comp in enumerate(model.components):
        idx = np.flatnonzero(labels == h)
        if idx.size:
            values[idx] = sample_cfust(idx.size, comp, rng.substream(h + 1))
    return LabeledSample(values, labels + 1)
