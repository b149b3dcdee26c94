"""SGD, Adam and RMSprop.

Each rule exists twice: as a pure per-array step function operating on an
explicit state object, and as an :class:`Optimizer` that applies the rule to
every gradient-carrying tensor of a parameter list.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor

__all__ = [
    "Adam",
    "AdamState",
    "DEFAULT_LR",
    "Optimizer",
    "RMSprop",
    "RMSpropState",
    "SGD",
    "SGDState",
    "adam_step",
    "make_optimizer",
    "rmsprop_step",
    "sgd_step",
]

DEFAULT_LR = {"sgd": 0.01, "adam": 0.001, "rmsprop": 0.001}


def _finite(grad) -> None:
    if not np.isfinite(grad).all():
        raise NonFiniteError("non-finite gradient passed to optimizer")


@dataclass
class SGDState:
    lr: float = DEFAULT_LR["sgd"]


@dataclass
class AdamState:
    lr: float = DEFAULT_LR["adam"]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | float = 0.0
    v: np.ndarray | float = 0.0
    t: int = 0


@dataclass
class RMSpropState:
    lr: float = DEFAULT_LR["rmsprop"]
    rho: float = 0.9
    eps: float = 1e-8
    v: np.ndarray | float = 0.0


def sgd_step(param, grad, state: SGDState):
    _finite(grad)
    return param - state.lr * grad


def adam_step(param, grad, state: AdamState):
    _finite(grad)
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1**state.t)
    v_hat = state.v / (1 - state.beta2**state.t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def rmsprop_step(param, grad, state: RMSpropState):
    _finite(grad)
    state.v = state.rho * state.v + (1 - state.rho) * grad * grad
    return param - state.lr * grad / (np.sqrt(state.v) + state.eps)


class Optimizer:
    kind = ""
    _state_cls: type = SGDState
    _step = staticmethod(sgd_step)

    def __init__(self, params: list[Tensor], lr: float | None = None, **hyper):
        self.params = list(params)
        self.lr = DEFAULT_LR[self.kind] if lr is None else float(lr)
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        self.states = [self._state_cls(lr=self.lr, **hyper) for _ in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, state in zip(self.params, self.states):
            if p.grad is None:
                continue
            p.data = np.asarray(self._step(p.data, p.grad, state), dtype=p.data.dtype)


class SGD(Optimizer):
    kind = "sgd"
    _state_cls = SGDState
    _step = staticmethod(sgd_step)


class Adam(Optimizer):
    kind = "adam"
    _state_cls = AdamState
    _step = staticmethod(adam_step)


class RMSprop(Optimizer):
    kind = "rmsprop"
    _state_cls = RMSpropState
    _step = staticmethod(rmsprop_step)


OPTIMIZERS = {cls.kind: cls for cls in (SGD, Adam, RMSprop)}


def make_optimizer(kind: str, params, lr: float | None = None) -> Optimizer:
    try:
        cls = OPTIMIZERS[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}; expected one of {sorted(OPTIMIZERS)}") from None
    return cls(params, lr)
