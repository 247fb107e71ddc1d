"""Synthetic spatio-temporal tensors with planted CP structure.

Temporal factors are ``level + AR process`` per component, optionally with
additive bursts scaled by each factor's standard deviation; spatial factors are mixtures of Gaussian bumps.  The clean
tensor is ``scale * [[A, B, C]]``; noise is Gaussian with standard deviation
``noise * rms(clean)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .projection import NYC_COEFFICIENTS
from .tensor import DenseTensor, KruskalModel

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class Burst:
    start: int
    magnitude: float  # added to every temporal factor as a multiple of that factor's standard deviation
    duration: int = 1
    shape: str = "step"  # "step", "cosine" (raised-cosine pulse) or "noise"

    def profile(self, rank: int, rng: np.random.Generator) -> np.ndarray:
        """(duration, rank) multipliers of the per-component standard deviation."""
        if self.shape == "step":
            shape = np.ones((self.duration, rank))
        elif self.shape == "cosine":
            w = 0.5 - 0.5 * np.cos(2 * np.pi * (np.arange(self.duration) + 1) / (self.duration + 1))
            shape = np.repeat(w[:, None], rank, axis=1)
        elif self.shape == "noise":  # a volatility burst: independent Gaussian shocks
            shape = rng.normal(size=(self.duration, rank))
        else:
            raise ValueError(f"unknown burst shape {self.shape!r}")
        return self.magnitude * shape


@dataclass(frozen=True)
class SyntheticSpec:
    dims: tuple[int, int, int] = (200, 10, 10)
    rank: int = 3
    ar: tuple = (NYC_COEFFICIENTS,)  # one coefficient tuple per component, recycled
    innovation: float = 0.5
    level: float = 1.0
    bumps: int = 2
    bump_width: float = 0.15  # as a fraction of the spatial axis length
    scale: float = 10.0
    noise: float = 0.0
    bursts: tuple[Burst, ...] = ()
    nonneg: bool = False
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive ints, got {self.dims}")
        ar = tuple(tuple(float(a) for a in c) for c in self.ar)
        if not ar:
            raise ValueError("at least one AR coefficient set is required")
        bursts = tuple(b if isinstance(b, Burst) else Burst(*b) for b in self.bursts)
        if min(self.innovation, self.noise, self.bump_width) < 0:
            raise ValueError("noise levels must be non-negative")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        for b in bursts:
            if not 0 <= b.start < dims[0] or b.duration < 1:
                raise ValueError(f"burst {b} outside the time range")
            if b.shape not in ("step", "cosine", "noise"):
                raise ValueError(f"unknown burst shape {b.shape!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "ar", ar)
        object.__setattr__(self, "bursts", bursts)

    def replace(self, **kw) -> SyntheticSpec:
        d = asdict(self)
        d["bursts"] = self.bursts
        d.update(kw)
        return SyntheticSpec(**d)

    @classmethod
    def from_mapping(cls, data: dict) -> SyntheticSpec:
        data = dict(data)
        if "ar" in data and data["ar"] and not isinstance(data["ar"][0], (list, tuple)):
            data["ar"] = (tuple(data["ar"]),)
        if "bursts" in data:
            data["bursts"] = tuple(Burst(*b) if isinstance(b, (list, tuple)) else Burst(**b) for b in data["bursts"])
        return cls(**data)

    @classmethod
    def from_toml(cls, path) -> SyntheticSpec:
        with open(path, "rb") as fh:
            return cls.from_mapping(tomllib.load(fh))


# oscillatory AR(2) temporal factors with periods of roughly 14 to 28 slices
SMOOTH_AR = ((1.8, -0.9), (1.6, -0.8), (1.9, -0.95))


def smooth_preset(seed: int = 0) -> SyntheticSpec:
    """Zero-mean smooth temporal factors with 5% noise: the setting where the
    smoothness penalty can bridge dropped slices."""
    return SyntheticSpec(dims=(400, 10, 10), rank=3, ar=SMOOTH_AR, level=0.0, innovation=0.5, noise=0.05, seed=seed)


def bursty_preset(seed: int = 0) -> SyntheticSpec:
    """Calm smooth factors interrupted by two volatility bursts inside the
    online segment (slices 240 onward with the default 60/40 split)."""
    return SyntheticSpec(dims=(400, 10, 10), rank=3, ar=SMOOTH_AR, level=0.0, innovation=0.1, noise=0.05,
                         bursts=(Burst(260, 3.0, 12, "noise"), Burst(320, 3.0, 12, "noise")), seed=seed)


PRESETS = {"default": SyntheticSpec, "smooth": smooth_preset, "bursty": bursty_preset}


def ar_process(coef, n: int, sigma: float, rng: np.random.Generator, burn_in: int = 200) -> np.ndarray:
    coef = np.asarray(coef, dtype=float)
    p = len(coef)
    x = np.zeros(n + burn_in + p)
    e = rng.normal(0.0, sigma, size=len(x))
    for t in range(p, len(x)):
        x[t] = coef @ x[t - p:t][::-1] + e[t]
    return x[-n:]


def _bump_columns(n: int, R: int, bumps: int, width: float, rng: np.random.Generator) -> np.ndarray:
    grid = np.arange(n)
    out = np.full((n, R), 0.05)
    w = max(width * n, 0.5)
    for r in range(R):
        for _ in range(bumps):
            mu = rng.uniform(0, n)
            out[:, r] += rng.uniform(0.5, 1.5) * np.exp(-0.5 * ((grid - mu) / w) ** 2)
    return out


def generate(spec: SyntheticSpec) -> tuple[DenseTensor, KruskalModel]:
    """Noisy tensor and the planted model (scale folded into A)."""
    rng = np.random.default_rng(spec.seed)
    I, J, K = spec.dims
    R = spec.rank
    A = np.empty((I, R))
    for r in range(R):
        A[:, r] = spec.level + ar_process(spec.ar[r % len(spec.ar)], I, spec.innovation, rng)
    spread = A.std(axis=0)
    spread[spread == 0] = 1.0
    for b in spec.bursts:
        span = A[b.start:b.start + b.duration]
        span += b.profile(R, rng)[:len(span)] * spread
    A *= spec.scale
    B = _bump_columns(J, R, spec.bumps, spec.bump_width, rng)
    C = _bump_columns(K, R, spec.bumps, spec.bump_width, rng)
    planted = KruskalModel(A, B, C)
    X = planted.full()
    if spec.noise:
        rms = float(np.sqrt(np.mean(X ** 2)))
        X = X + rng.normal(0.0, spec.noise * rms, size=X.shape)
    if spec.nonneg:
        X = np.maximum(X, 0.0)
    return DenseTensor(X), planted
