"""Adam with named parameter groups and per-group learning rates."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, groups: dict, lrs: dict, betas=(0.9, 0.999), eps: float = 1e-8):
        """``groups`` maps group name -> list of (param name, tensor)."""
        if set(groups) != set(lrs):
            raise ValueError(f"learning rates {sorted(lrs)} do not match groups {sorted(groups)}")
        self.groups = {g: list(ps) for g, ps in groups.items()}
        self.lrs = {g: float(v) for g, v in lrs.items()}
        if any(v < 0 for v in self.lrs.values()):
            raise ValueError(f"learning rates must be non-negative: {self.lrs}")
        seen = {}
        for g, ps in self.groups.items():
            for name, _ in ps:
                if name in seen:
                    raise ValueError(f"parameter {name} is in groups {seen[name]} and {g}")
                seen[name] = g
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for ps in self.groups.values() for name, p in ps}
        self.v = {name: np.zeros_like(p.data) for ps in self.groups.values() for name, p in ps}

    def group_of(self, name: str) -> str:
        for g, ps in self.groups.items():
            if any(n == name for n, _ in ps):
                return g
        raise KeyError(name)

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for g, ps in self.groups.items():
            lr = self.lrs[g]
            for name, p in ps:
                if p.grad is None:
                    continue
                grad = p.grad.astype(p.data.dtype, copy=False)
                dt = p.data.dtype.type
                m, v = self.m[name], self.v[name]
                m *= dt(b1)
                m += dt(1.0 - b1) * grad
                v *= dt(b2)
                v += dt(1.0 - b2) * grad * grad
                if lr == 0.0:
                    continue
                update = (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(self.eps))
                p.data = p.data - dt(lr) * update

    def zero_grad(self) -> None:
        for ps in self.groups.values():
            for _, p in ps:
                p.grad = None

    def state_dict(self) -> dict:
        arrays = {}
        for name in self.m:
            arrays[f"adam.m.{name}"] = self.m[name]
            arrays[f"adam.v.{name}"] = self.v[name]
        return {"t": self.t, "arrays": arrays}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        arrays = state["arrays"]
        for name in self.m:
            self.m[name] = np.array(arrays[f"adam.m.{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.array(arrays[f"adam.v.{name}"], dtype=self.v[name].dtype)
