"""Parameter records for the spin-chain model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass(frozen=True)
class SpinChainParams:
    """Couplings of the driven-dissipative YZ chain on a periodic ring.

    ``epsilon1`` defaults to ``2**-alpha`` when left as ``None``.
    """

    N: int = 6
    J_y: float = 1.0
    J_z: float = 0.1
    h: float = 1.0
    alpha: float = 3.0
    epsilon1: float | None = None
    epsilon: float = 0.01
    gamma: float = 0.5
    boundary: str = field(default="periodic")

    def __post_init__(self):
        if self.epsilon1 is None:
            object.__setattr__(self, "epsilon1", 2.0 ** (-self.alpha))
        if not isinstance(self.N, int) or self.N % 2 or not 2 <= self.N <= 14:
            raise ConfigError(f"N must be an even integer in [2, 14], got {self.N!r}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.boundary != "periodic":
            raise ConfigError("only periodic boundary conditions are supported")

    @property
    def isotropic(self) -> bool:
        return self.J_y == self.J_z

    def replace(self, **changes) -> "SpinChainParams":
        if "alpha" in changes and "epsilon1" not in changes:
            changes["epsilon1"] = None
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)
