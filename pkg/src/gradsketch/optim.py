"""Training rounds: sketched updates with error feedback, plus baselines.

Two sketched modes are implemented.  The theory mode follows the analyzed
recursion exactly: the step size ``1/(t + xi)`` is folded into the error
accumulator before sketching, the recovered k-sparse vector is applied
unscaled, and every worker subtracts the full global update from its own
accumulator.  The empirical mode is the practical variant: momentum and
error accumulation run on raw gradients, candidates come from a top-``P*k``
query, the step size scales the update at apply time, and accumulators are
zeroed on the updated support (momentum factor masking).

Baselines share the empirical error-feedback structure with the compression
operator swapped: exact top-k of the mean accumulated vector (true top-k),
per-worker top-k with support union (local top-k), or no compression at all
(vanilla).

All communication flows through an injectable channel so the cluster layer
can serialize and meter every message; with no channel the rounds run as
pure in-process math.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gradsketch.heavyhitters import KSparseVector, heavymix, top_pk_candidates, topk_indices
from gradsketch.sketch import SketchConfig, merge_all, sketch_vector

MODES = ("theory", "empirical")
ALGORITHMS = ("sketched", "vanilla", "true-topk", "local-topk")


class _NullChannel:
    """Pass-through used when rounds run without a metering transport."""

    def up_sketch(self, sketch, worker):
        return sketch

    def request_indices(self, indices, n_workers):
        return indices

    def up_values(self, values, worker):
        return values

    def up_sparse(self, vec, worker):
        return vec

    def down_update(self, vec, n_workers):
        return vec

    def down_values(self, values, n_workers):
        return values


def rho_for(beta: float) -> float:
    if beta <= 4:
        raise ValueError(f"beta must exceed 4, got {beta}")
    return 4.0 * beta / ((beta - 4.0) * (beta + 1.0) ** 2)


def min_xi(d: int, k: int, beta: float) -> float:
    """Smallest admissible xi for the theory-mode step size at dimension d."""
    return 2.0 + d * (1.0 + beta) / (k * (1.0 + rho_for(beta)))


def lr_theory(t: int, xi: float, mu_scale: float = 1.0) -> float:
    """Theory-mode step size ``1 / (mu_scale * (t + xi))`` for 1-based t."""
    if t < 1:
        raise ValueError(f"round index is 1-based, got {t}")
    if mu_scale <= 0:
        raise ValueError("mu_scale must be positive")
    return 1.0 / (mu_scale * (t + xi))


def lr_at(t: int, config: "OptimizerConfig") -> float:
    """Step size for 1-based round t under the configured schedule.

    Theory mode always uses the analyzed ``1/(mu_scale*(t+xi))`` decay.
    Empirical mode uses the constant ``lr`` unless ``lr_points`` defines a
    piecewise-linear schedule, which is clamped flat outside its breakpoints.
    """
    if config.mode == "theory":
        return lr_theory(t, config.xi, config.mu_scale)
    if t < 1:
        raise ValueError(f"round index is 1-based, got {t}")
    if not config.lr_points:
        return config.lr
    times = [p for p, _ in config.lr_points]
    values = [v for _, v in config.lr_points]
    return float(np.interp(t, times, values))


@dataclass(frozen=True)
class OptimizerConfig:
    """Everything the round functions need besides the problem itself.

    ``xi``/``beta`` only matter in theory mode, ``momentum``/``bias_indices``
    only in empirical mode; ``p`` is the candidate multiplier of the second
    communication round.  ``mu_scale`` rescales the theory step size (1 keeps
    the analyzed schedule).
    """

    mode: str
    algorithm: str = "sketched"
    k: int = 1
    p: int = 1
    t_rounds: int = 1
    w_workers: int = 1
    momentum: float = 0.0
    xi: float | None = None
    beta: float = 5.0
    mu_scale: float = 1.0
    bias_indices: tuple[int, ...] = ()
    lr: float = 0.1
    lr_points: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.p < 1:
            raise ValueError(f"candidate multiplier p must be >= 1, got {self.p}")
        if self.t_rounds < 0:
            raise ValueError(f"round count must be nonnegative, got {self.t_rounds}")
        if self.w_workers < 1:
            raise ValueError(f"worker count must be positive, got {self.w_workers}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.mu_scale <= 0:
            raise ValueError("mu_scale must be positive")
        if self.mode == "theory":
            if self.momentum != 0.0:
                raise ValueError("theory mode does not take momentum")
            if self.bias_indices:
                raise ValueError("uncompressed bias coordinates are an empirical-mode feature")
            if self.xi is None:
                raise ValueError("theory mode requires xi (it defines the step-size schedule)")
            if self.xi <= 0:
                raise ValueError(f"xi must be positive, got {self.xi}")
            if self.algorithm == "sketched":
                rho_for(self.beta)
        if len(set(self.bias_indices)) != len(self.bias_indices):
            raise ValueError("bias indices must be unique")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for t_point, lr_value in self.lr_points:
            if t_point < 1 or lr_value <= 0:
                raise ValueError(f"lr schedule points need t >= 1 and lr > 0, got ({t_point}, {lr_value})")
        times = [t_point for t_point, _ in self.lr_points]
        if sorted(times) != times or len(set(times)) != len(times):
            raise ValueError("lr schedule breakpoints must be strictly increasing in t")

    @property
    def uncompressed_bias(self) -> bool:
        return bool(self.bias_indices)

    def validate_for_dimension(self, d: int) -> None:
        """Dimension-dependent checks deferred until the problem is known."""
        if self.k > d:
            raise ValueError(f"k={self.k} exceeds dimension {d}")
        if any(not 0 <= b < d for b in self.bias_indices):
            raise ValueError(f"bias indices out of range for dimension {d}")
        if self.bias_indices and min(self.p * self.k, d) - len(self.bias_indices) < self.k:
            raise ValueError("candidate budget too small to exclude bias coordinates")
        if self.mode == "theory" and self.algorithm == "sketched":
            bound = min_xi(d, self.k, self.beta)
            if self.xi <= bound:
                raise ValueError(
                    f"theory mode needs xi > {bound:.4f} for d={d}, k={self.k}, "
                    f"beta={self.beta}; got xi={self.xi}"
                )


@dataclass
class WorkerState:
    """Per-worker replica: parameters plus whatever the mode accumulates.

    ``error`` is the theory-mode accumulator, ``momentum``/``accum`` the
    empirical-mode buffers.  All replicas hold the full parameter vector and
    must remain bit-identical across workers at round boundaries.
    """

    w: np.ndarray
    error: np.ndarray = field(default=None)  # type: ignore[assignment]
    momentum: np.ndarray = field(default=None)  # type: ignore[assignment]
    accum: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        d = self.w.shape[0]
        if self.error is None:
            self.error = np.zeros(d)
        if self.momentum is None:
            self.momentum = np.zeros(d)
        if self.accum is None:
            self.accum = np.zeros(d)


def make_states(w0: np.ndarray, n_workers: int) -> list[WorkerState]:
    """W replicas all starting from the same parameter vector."""
    return [WorkerState(w=np.array(w0, dtype=np.float64)) for _ in range(n_workers)]


@dataclass
class IterateAverage:
    """Running ``(xi + t)^2``-weighted average of the pre-update iterates."""

    xi: float
    weighted_sum: np.ndarray | None = None
    total_weight: float = 0.0

    def add(self, t: int, w: np.ndarray) -> None:
        q = (self.xi + t) ** 2
        if self.weighted_sum is None:
            self.weighted_sum = q * w
        else:
            self.weighted_sum = self.weighted_sum + q * w
        self.total_weight += q

    def finalize(self) -> np.ndarray:
        if self.weighted_sum is None or self.total_weight <= 0:
            raise ValueError("cannot finalize an empty iterate average")
        return self.weighted_sum / self.total_weight


def _mean_lookup(vectors: list[np.ndarray], channel, n_workers: int):
    """Exact second-round oracle: request indices, average worker replies."""

    def lookup(indices: np.ndarray) -> np.ndarray:
        idx = channel.request_indices(indices, n_workers)
        total = None
        for worker, vec in enumerate(vectors):
            reply = channel.up_values(vec[idx], worker)
            total = reply if total is None else total + reply
        return total / n_workers

    return lookup


def theory_round(
    states: list[WorkerState],
    grads: list[np.ndarray],
    t: int,
    config: OptimizerConfig,
    sketch_config: SketchConfig,
    rng_seed: int,
    channel=None,
) -> KSparseVector:
    """One analyzed-mode round; mutates states in place, returns the update.

    Per worker: fold the step size into the gradient, add the error
    accumulator, sketch, and send.  The server merges to the worker mean,
    extracts k coordinates, fetches their exact mean values, and broadcasts.
    Every worker applies the update and subtracts the full global update
    from its accumulator.
    """
    channel = channel or _NullChannel()
    n = len(states)
    eta = lr_theory(t, config.xi, config.mu_scale)
    accumulated = [eta * g + st.error for st, g in zip(states, grads)]
    received = [
        channel.up_sketch(sketch_vector(sketch_config, acc), worker)
        for worker, acc in enumerate(accumulated)
    ]
    merged = merge_all(received).scale(1.0 / n)
    update = heavymix(merged, config.k, _mean_lookup(accumulated, channel, n), rng_seed)
    update = channel.down_update(update, n)
    for st, acc in zip(states, accumulated):
        st.w[update.indices] -= update.values
        st.error = acc
        st.error[update.indices] -= update.values
    return update


def empirical_round(
    states: list[WorkerState],
    grads: list[np.ndarray],
    lr_t: float,
    config: OptimizerConfig,
    sketch_config: SketchConfig,
    rng_seed: int,
    channel=None,
) -> KSparseVector:
    """One practical-mode round; mutates states in place, returns the update.

    Momentum and error accumulation run per worker on raw gradients; the
    sketch summarizes the accumulator (bias coordinates excluded when the
    uncompressed-bias path is on).  The server takes the top ``min(P*k, d)``
    estimated coordinates, fetches exact mean values, keeps the k largest,
    and broadcasts; bias coordinates ride along exactly every round.  The
    update is applied scaled by ``lr_t`` and the accumulators are zeroed on
    the updated support.
    """
    del rng_seed  # candidate selection is deterministic in this mode
    channel = channel or _NullChannel()
    n = len(states)
    d = sketch_config.d
    bias = np.asarray(config.bias_indices, dtype=np.int64)
    for st, g in zip(states, grads):
        st.momentum = config.momentum * st.momentum + g
        st.accum = st.accum + st.momentum
    if bias.size:
        compressible = []
        for st in states:
            vec = st.accum.copy()
            vec[bias] = 0.0
            compressible.append(vec)
    else:
        compressible = [st.accum for st in states]
    received = [
        channel.up_sketch(sketch_vector(sketch_config, vec), worker)
        for worker, vec in enumerate(compressible)
    ]
    merged = merge_all(received).scale(1.0 / n)
    candidates = top_pk_candidates(merged, config.p, config.k)
    if bias.size:
        candidates = candidates[~np.isin(candidates, bias)]
    lookup = _mean_lookup(compressible, channel, n)
    exact = lookup(candidates)
    keep = topk_indices(exact, min(config.k, exact.size))
    support = candidates[keep]
    values = exact[keep]
    if bias.size:
        # bias values live in the raw accumulators; the compressible copies
        # had them zeroed out before sketching
        bias_mean = _mean_lookup([st.accum for st in states], channel, n)(bias)
        support = np.concatenate([support, bias])
        values = np.concatenate([values, bias_mean])
        order = np.argsort(support)
        support, values = support[order], values[order]
    update = channel.down_update(KSparseVector(d=d, indices=support, values=values), n)
    for st in states:
        st.w[update.indices] -= lr_t * update.values
        st.momentum[update.indices] = 0.0
        st.accum[update.indices] = 0.0
    return update


def vanilla_step(states: list[WorkerState], grads: list[np.ndarray], lr_t: float, channel=None) -> np.ndarray:
    """Uncompressed data-parallel SGD step; returns the mean gradient."""
    channel = channel or _NullChannel()
    n = len(states)
    total = None
    for worker, g in enumerate(grads):
        reply = channel.up_values(g, worker)
        total = reply if total is None else total + reply
    mean_grad = channel.down_values(total / n, n)
    for st in states:
        st.w -= lr_t * mean_grad
    return mean_grad


def true_topk_step(
    states: list[WorkerState],
    grads: list[np.ndarray],
    lr_t: float,
    k: int,
    momentum: float = 0.0,
    channel=None,
) -> KSparseVector:
    """Error-feedback step whose compressor is exact top-k of the mean accumulator.

    The server needs the full mean accumulated vector, so each worker uploads
    it densely; this baseline bounds what any k-sparse selection could do.
    """
    channel = channel or _NullChannel()
    n = len(states)
    d = states[0].w.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    total = None
    for worker, (st, g) in enumerate(zip(states, grads)):
        st.momentum = momentum * st.momentum + g
        st.accum = st.accum + st.momentum
        reply = channel.up_values(st.accum, worker)
        total = reply if total is None else total + reply
    mean_accum = total / n
    support = topk_indices(mean_accum, k)
    update = channel.down_update(KSparseVector(d=d, indices=support, values=mean_accum[support]), n)
    for st in states:
        st.w[update.indices] -= lr_t * update.values
        st.momentum[update.indices] = 0.0
        st.accum[update.indices] = 0.0
    return update


def local_topk_step(
    states: list[WorkerState],
    grads: list[np.ndarray],
    lr_t: float,
    k: int,
    momentum: float = 0.0,
    channel=None,
) -> tuple[KSparseVector, int]:
    """Per-worker exact top-k with union support; returns (update, union size).

    Each worker uploads the top k entries of its own accumulator and zeroes
    only what it sent (per-worker error feedback).  The server averages the
    sparse contributions over all W workers, so the union support can reach
    ``min(k * W, d)`` elements on the way back down.
    """
    channel = channel or _NullChannel()
    n = len(states)
    d = states[0].w.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    summed = np.zeros(d)
    own_supports = []
    for worker, (st, g) in enumerate(zip(states, grads)):
        st.momentum = momentum * st.momentum + g
        st.accum = st.accum + st.momentum
        own = topk_indices(st.accum, k)
        sent = channel.up_sparse(KSparseVector(d=d, indices=own, values=st.accum[own]), worker)
        summed[sent.indices] += sent.values
        own_supports.append(own)
    # contributions can cancel to exactly zero in the sum; the union still
    # reflects every coordinate that was transmitted
    union = np.unique(np.concatenate(own_supports))
    update = channel.down_update(KSparseVector(d=d, indices=union, values=summed[union] / n), n)
    for st, own in zip(states, own_supports):
        st.w[update.indices] -= lr_t * update.values
        st.momentum[own] = 0.0
        st.accum[own] = 0.0
    return update, int(union.size)
