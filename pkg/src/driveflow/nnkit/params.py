"""Parameter storage, the adaptive-moment optimizer, and gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from driveflow.nnkit.autodiff import Tape, value_of


class ParamStore:
    """Named float64 arrays with immutable shapes and a deterministic
    initialization stream (parameters are initialized in creation order)."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._arrays: dict[str, np.ndarray] = {}

    def create(self, name: str, shape, init: str = "fan_in", fan_in: int | None = None):
        if name in self._arrays:
            raise ValueError(f"parameter {name!r} already exists")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            arr = np.zeros(shape)
        elif init == "ones":
            arr = np.ones(shape)
        elif init == "fan_in":
            fi = fan_in if fan_in is not None else shape[0]
            limit = float(np.sqrt(1.0 / max(1, fi)))
            arr = self._rng.uniform(-limit, limit, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        self._arrays[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def set(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if name in self._arrays and value.shape != self._arrays[name].shape:
            raise ValueError(
                f"shape of {name!r} is immutable: {self._arrays[name].shape} vs {value.shape}"
            )
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite values for parameter {name!r}")
        self._arrays[name] = value

    def names(self) -> list:
        return list(self._arrays.keys())

    def copy(self) -> "ParamStore":
        out = ParamStore(self.seed)
        out._arrays = {k: v.copy() for k, v in self._arrays.items()}
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self._arrays.values())


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(
    store: ParamStore,
    grads: dict,
    state: AdamState,
    lr: float,
    betas=(0.9, 0.999),
    eps: float = 1e-8,
    names=None,
) -> AdamState:
    """One bias-corrected adaptive-moment update, in place on the store.

    ``names`` restricts the update to a parameter subset (used to freeze the
    rest of the model); moments still decay only for updated parameters.
    """
    b1, b2 = betas
    state.t += 1
    t = state.t
    for name in names if names is not None else store.names():
        g = grads[name]
        if g.shape != store[name].shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        store.set(name, store[name] - lr * m_hat / (np.sqrt(v_hat) + eps))
    return state


@dataclass
class GradCheckResult:
    ok: bool
    worst_rel_err: float
    worst_param: str


def grad_check(
    fn,
    store: ParamStore,
    h: float = 1e-5,
    tol: float = 1e-4,
    names=None,
    max_elems_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    denom_floor: float = 1e-4,
) -> GradCheckResult:
    """Compare analytic gradients of a scalar-valued network against central
    finite differences.

    ``fn(tape)`` must run the forward pass fetching parameters through
    ``tape.param(store, name)`` when a tape is given and through plain store
    reads when called with ``tape=None``. ``denom_floor`` keeps the relative
    error meaningful where both gradients are dominated by float64
    cancellation noise in the differences.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    tape = Tape()
    out = fn(tape)
    grads = tape.backward(out)

    if names is None:
        names = store.names()
    if rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    worst_param = ""
    for name in names:
        arr = store[name]
        flat = arr.reshape(-1)
        n = flat.size
        if max_elems_per_param is not None and n > max_elems_per_param:
            elems = rng.choice(n, size=max_elems_per_param, replace=False)
        else:
            elems = range(n)
        g_flat = grads[name].reshape(-1)
        for i in elems:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(value_of(fn(None)))
            flat[i] = orig - h
            f_minus = float(value_of(fn(None)))
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = g_flat[i]
            denom = max(abs(numeric), abs(analytic), denom_floor)
            rel = abs(numeric - analytic) / denom
            if rel > worst:
                worst = rel
                worst_param = name
    return GradCheckResult(ok=worst < tol, worst_rel_err=worst, worst_param=worst_param)
