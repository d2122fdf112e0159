"""Discrete DDPM noise schedule and its continuous-time interpolants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCHEDULE_KINDS = ("linear", "scaled_linear")


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables are indexed so that ``betas[t - 1]`` is beta_t for t in 1..T."""

    T: int
    beta_start: float
    beta_end: float
    kind: str = "linear"
    betas: np.ndarray = field(repr=False, default=None)
    alphas: np.ndarray = field(repr=False, default=None)
    alpha_bars: np.ndarray = field(repr=False, default=None)

    def beta(self, t: int) -> float:
        self._check_step(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha_bars[t - 1])

    def _check_step(self, t) -> None:
        if not 1 <= int(t) <= self.T:
            raise ValueError(f"step {t} outside 1..{self.T}")

    def continuous(self, x: float) -> tuple:
        """(alpha_bar(x), beta(x)) at continuous time x in [0, 1].

        Knots sit at x = t/T with alpha_bar(t/T) = alpha_bar_t and
        beta(t/T) = T * beta_t; alpha_bar(0) is pinned to 1 and beta is held
        constant on [0, 1/T]. Between knots both are linear.
        """
        x = float(x)
        if not 0.0 <= x <= 1.0 or x != x:
            raise ValueError(f"continuous time {x} outside [0, 1]")
        pos = x * self.T
        if abs(pos - round(pos)) <= 1e-9:
            pos = float(round(pos))
        k = int(np.floor(pos))
        if k >= self.T:
            return float(self.alpha_bars[-1]), float(self.T * self.betas[-1])
        frac = pos - k
        ab_lo = 1.0 if k == 0 else float(self.alpha_bars[k - 1])
        b_lo = float(self.T * self.betas[0]) if k == 0 else float(self.T * self.betas[k - 1])
        ab_hi = float(self.alpha_bars[k])
        b_hi = float(self.T * self.betas[k])
        if frac == 0.0:
            return ab_lo, b_lo
        return ab_lo + frac * (ab_hi - ab_lo), b_lo + frac * (b_hi - b_lo)

    def params(self) -> dict:
        return {"num_timesteps": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end,
                "schedule_kind": self.kind}


def linear_schedule(T: int = 1000, beta_start: float = 0.00085, beta_end: float = 0.0120,
                    kind: str = "linear") -> NoiseSchedule:
    """Build the beta/alpha/alpha_bar tables.

    ``kind="linear"`` interpolates beta itself; ``"scaled_linear"`` interpolates
    sqrt(beta), the convention of the Stable Diffusion code base.
    """
    T = int(T)
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    else:
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, T, dtype=np.float64) ** 2
        betas[0], betas[-1] = beta_start, beta_end
    if T == 1:
        betas = np.array([beta_start])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(T, float(beta_start), float(beta_end), kind, betas, alphas, alpha_bars)


def from_params(params: dict) -> NoiseSchedule:
    return linear_schedule(int(params["num_timesteps"]), float(params["beta_start"]),
                           float(params["beta_end"]), str(params.get("schedule_kind", "linear")))
