"""Counter-based random streams with a fixed per-particle word budget.

Every particle owns a contiguous block of 64-bit Philox output words,
addressed purely by (seed, particle index).  Draws therefore do not depend
on chunk size, thread count, or evaluation order, which is what makes
simulations bit-for-bit reproducible under any execution plan.

Per-particle word layout (one diffusion of ``n_steps`` steps in dimension
``dim``):

* words ``[0, F0_WORDS)``: time-zero randomization, exposed to controls as
  uniforms (e.g. for coin flips),
* words ``[F0_WORDS, F0_WORDS + n_steps*dim)``: one Gaussian increment per
  step and coordinate, step-major,
* the final ``n_steps`` words: one uniform per step for the boundary-bridge
  exit test.

Uniforms are mapped from the top 53 bits of each word into the open
interval (0, 1); Gaussians are the inverse normal CDF of those uniforms, so
every draw consumes exactly one word.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "F0_WORDS",
    "NoiseLayout",
    "layout_for",
    "raw_words",
    "uniforms_from_words",
    "gaussians_from_words",
]

F0_WORDS = 8

_INV_2_53 = 2.0 ** -53


@dataclass(frozen=True)
class NoiseLayout:
    """Word bookkeeping for one simulation shape."""

    n_steps: int
    dim: int

    @property
    def words_per_particle(self) -> int:
        return F0_WORDS + self.n_steps * self.dim + self.n_steps

    @property
    def counter_blocks(self) -> int:
        # Philox-4x64 emits 4 words per 128-bit counter increment; round up
        # so consecutive particles start on block boundaries.
        return (self.words_per_particle + 3) // 4

    @property
    def f0_slice(self) -> slice:
        return slice(0, F0_WORDS)

    @property
    def gauss_slice(self) -> slice:
        return slice(F0_WORDS, F0_WORDS + self.n_steps * self.dim)

    @property
    def bridge_slice(self) -> slice:
        start = F0_WORDS + self.n_steps * self.dim
        return slice(start, start + self.n_steps)


def layout_for(n_steps: int, dim: int) -> NoiseLayout:
    if n_steps < 1 or dim < 1:
        raise ValueError("n_steps and dim must be positive")
    return NoiseLayout(int(n_steps), int(dim))


def raw_words(seed: int, first_particle: int, n_particles: int, layout: NoiseLayout) -> np.ndarray:
    """Raw 64-bit words for a contiguous run of particles.

    Returns an array of shape ``(n_particles, 4 * layout.counter_blocks)``;
    row ``i`` is the full word block of particle ``first_particle + i``.
    The same (seed, particle) pair always yields the same row.
    """
    if first_particle < 0 or n_particles < 1:
        raise ValueError("particle range must be non-negative and non-empty")
    blocks = layout.counter_blocks
    bg = np.random.Philox(key=np.uint64(seed))
    bg.advance(first_particle * blocks)
    words = np.random.Generator(bg).bit_generator.random_raw(n_particles * blocks * 4)
    return words.reshape(n_particles, blocks * 4)


def uniforms_from_words(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to uniforms in the open interval (0, 1)."""
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def gaussians_from_words(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to standard Gaussians via the inverse normal CDF."""
    return ndtri(uniforms_from_words(words))
