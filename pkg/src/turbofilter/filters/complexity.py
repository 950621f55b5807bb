"""Operation-count estimates for turbo filtering and the marginalized PF."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import InvalidParams


@dataclass(frozen=True)
class ComplexityInputs:
    d: int
    d_l: int
    d_n: int
    p: int
    n_p: int
    n_it: int = 1

    def __post_init__(self):
        for name in ("d", "d_l", "d_n", "p", "n_it"):
            if getattr(self, name) < 1:
                raise InvalidParams(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_p < 0:
            raise InvalidParams(f"n_p must be nonnegative, got {self.n_p}")


def complexity_estimate(c: ComplexityInputs):
    """Dominant flop counts ``(n_tf, n_mpf)`` for one recursion.

    Counts matrix inversions, products and Cholesky factorizations; the
    cost of evaluating the model functions on the particles is excluded.
    """
    d, d_l, d_n, p = c.d, c.d_l, c.d_n, c.p
    n_tf = (
        2 * d * p**2
        + p * d**2
        + (c.n_it + 4) * d**3
        + c.n_it
        * c.n_p
        * (p * d_l**2 + p**2 * d_l + p**3 + 6 * d_l**3 + 2 * d_n * d_l**2 + 3 * d_l * d_n**2 + d_n**3 / 3)
    )
    n_mpf = c.n_p * (
        2 * p * d_l**2 + 3 * p**2 * d_l + p**3 + 5 * d_l**3 + 2 * d_l**2 * d_n + 3 * d_l * d_n**2 + d_n**3 / 3
    )
    return float(n_tf), float(n_mpf)
