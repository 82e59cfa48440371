"""Simulated star-topology parameter server with byte-exact accounting.

Workers and server live in one process, but every message still crosses a
channel that serializes it with the wire codecs, decodes it back, and meters
both bytes and element counts.  Accounting is therefore measured from real
serialized frames, never estimated.  The element-denominated compression
factor counts, per worker and per round, the sketch upload, the exact-value
upload, and the broadcast update; the index request is measured too but
excluded from the factor by convention.

``run_training`` drives the optimizer rounds over a problem: draw a batch,
split it contiguously across workers, run the mode-specific round through
the channel, and record losses plus communication stats for every round.
Everything is deterministic given the data, sketch, and fill seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradsketch import wire
from gradsketch.metrics import RoundRecord, RunMetrics, support_fingerprint
from gradsketch.optim import (
    IterateAverage,
    OptimizerConfig,
    empirical_round,
    local_topk_step,
    lr_at,
    make_states,
    theory_round,
    true_topk_step,
    vanilla_step,
)
from gradsketch.sketch import CountSketch, SketchConfig


class TrainingDivergedError(RuntimeError):
    """Raised when a run produces a non-finite loss."""


class MeteredChannel:
    """In-process transport that serializes, decodes, and meters every message.

    Each call frames its message, unframes and decodes it, and hands the
    decoded object onward, so any codec defect corrupts the run instead of
    hiding.  Tallies accumulate per round; ``start_round`` clears them.
    Upload tallies are per worker; the request and the update broadcast are
    tallied once (each worker receives the same copy).
    """

    def __init__(self):
        self.start_round()

    def start_round(self) -> None:
        self.up_bytes: dict[int, int] = {}
        self.up_sketch_elems: dict[int, int] = {}
        self.up_exact_elems: dict[int, int] = {}
        self.request_bytes = 0
        self.request_elems = 0
        self.down_bytes = 0
        self.down_elems = 0

    def _tally_up(self, counter: dict[int, int], worker: int, amount: int) -> None:
        counter[worker] = counter.get(worker, 0) + amount

    def up_sketch(self, sketch: CountSketch, worker: int) -> CountSketch:
        blob = wire.frame(wire.TAG_SKETCH_UP, sketch.to_bytes())
        _, payload = wire.unframe(blob)
        decoded = CountSketch.from_bytes(payload)
        self._tally_up(self.up_bytes, worker, len(blob))
        self._tally_up(self.up_sketch_elems, worker, decoded.num_elements)
        return decoded

    def request_indices(self, indices: np.ndarray, n_workers: int) -> np.ndarray:
        del n_workers  # one broadcast regardless of recipients
        blob = wire.frame(wire.TAG_EXACT_REQUEST, wire.encode_indices(indices))
        _, payload = wire.unframe(blob)
        decoded = wire.decode_indices(payload)
        self.request_bytes += len(blob)
        self.request_elems += int(decoded.size)
        return decoded

    def up_values(self, values: np.ndarray, worker: int) -> np.ndarray:
        blob = wire.frame(wire.TAG_EXACT_UP, wire.encode_values(values))
        _, payload = wire.unframe(blob)
        decoded = wire.decode_values(payload)
        self._tally_up(self.up_bytes, worker, len(blob))
        self._tally_up(self.up_exact_elems, worker, int(decoded.size))
        return decoded

    def up_sparse(self, vec, worker: int):
        blob = wire.frame(wire.TAG_UPDATE_DOWN, wire.encode_sparse(vec))
        _, payload = wire.unframe(blob)
        decoded = wire.decode_sparse(payload, vec.d)
        self._tally_up(self.up_bytes, worker, len(blob))
        # sparse uploads are exact (index, value) entries; they play the role
        # of the exact-value round in the element accounting
        self._tally_up(self.up_exact_elems, worker, len(decoded))
        return decoded

    def down_update(self, vec, n_workers: int):
        del n_workers
        blob = wire.frame(wire.TAG_UPDATE_DOWN, wire.encode_sparse(vec))
        _, payload = wire.unframe(blob)
        decoded = wire.decode_sparse(payload, vec.d)
        self.down_bytes += len(blob)
        self.down_elems += len(decoded)
        return decoded

    def down_values(self, values: np.ndarray, n_workers: int) -> np.ndarray:
        del n_workers
        blob = wire.frame(wire.TAG_EXACT_UP, wire.encode_values(values))
        _, payload = wire.unframe(blob)
        decoded = wire.decode_values(payload)
        self.down_bytes += len(blob)
        self.down_elems += int(decoded.size)
        return decoded


@dataclass(frozen=True)
class RoundStats:
    """Communication accounting for one round.

    Element counts are per worker: the sketch upload (r*c cells), the exact
    upload (value replies plus any sparse entries), and the broadcast update
    each worker receives.  ``bytes_up`` is per worker, ``bytes_down`` is the
    broadcast frame, and ``bytes_request`` is the index request the element
    formula excludes.
    """

    d: int
    w_workers: int
    up_sketch_elems: int
    up_exact_elems: int
    down_update_elems: int
    bytes_up: int
    bytes_down: int
    bytes_request: int

    @property
    def compression_factor(self) -> float:
        """Elements saved per worker: 2d over sketch + exact + update counts."""
        moved = self.up_sketch_elems + self.up_exact_elems + self.down_update_elems
        return 2.0 * self.d / moved

    @property
    def byte_compression_factor(self) -> float:
        """Bytes saved per worker against dense f64 up and down (16d bytes)."""
        return 16.0 * self.d / (self.bytes_up + self.bytes_down)


def account_round(
    sketch_config: SketchConfig | None,
    p: int,
    k: int,
    d: int,
    w_workers: int,
    channel: MeteredChannel,
) -> RoundStats:
    """Turn one round's channel tallies into RoundStats.

    Enforces the protocol symmetry the accounting relies on: every worker
    uploaded the same byte and element counts, and a sketched round's sketch
    upload is exactly the configured table size.
    """
    per_worker_bytes = [channel.up_bytes.get(w, 0) for w in range(w_workers)]
    sketch_elems = [channel.up_sketch_elems.get(w, 0) for w in range(w_workers)]
    exact_elems = [channel.up_exact_elems.get(w, 0) for w in range(w_workers)]
    for name, counts in (("bytes", per_worker_bytes), ("sketch", sketch_elems), ("exact", exact_elems)):
        if len(set(counts)) > 1:
            raise RuntimeError(f"asymmetric per-worker upload {name} counts: {counts}")
    if sketch_config is not None and sketch_elems[0] not in (0, sketch_config.r * sketch_config.c):
        raise RuntimeError(
            f"sketch upload of {sketch_elems[0]} cells does not match configured {sketch_config.r}x{sketch_config.c}"
        )
    if sketch_elems[0] and exact_elems[0] > p * k + d:
        raise RuntimeError(f"exact upload of {exact_elems[0]} values exceeds the candidate budget")
    return RoundStats(
        d=d,
        w_workers=w_workers,
        up_sketch_elems=sketch_elems[0],
        up_exact_elems=exact_elems[0],
        down_update_elems=channel.down_elems,
        bytes_up=per_worker_bytes[0],
        bytes_down=channel.down_bytes,
        bytes_request=channel.request_bytes,
    )


def partition_batch(batch: np.ndarray, w_workers: int) -> list[np.ndarray]:
    """Split sample indices into W contiguous shards with sizes differing <= 1."""
    if w_workers < 1:
        raise ValueError(f"worker count must be positive, got {w_workers}")
    return np.array_split(np.asarray(batch), w_workers)


def exact_lookup_round(vectors: list[np.ndarray], indices: np.ndarray, channel=None) -> np.ndarray:
    """Fetch the worker-mean of ``vectors`` at ``indices`` through the channel.

    One index request goes down, one value list per worker comes up, and the
    server averages the replies.  This is the second communication round of
    every sketched update.
    """
    channel = channel or MeteredChannel()
    idx = np.asarray(indices, dtype=np.int64)
    d = vectors[0].shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= d):
        raise IndexError(f"lookup indices out of range for dimension {d}")
    sent = channel.request_indices(idx, len(vectors))
    total = None
    for worker, vec in enumerate(vectors):
        reply = channel.up_values(vec[sent], worker)
        total = reply if total is None else total + reply
    return total / len(vectors)


@dataclass
class TrainingResult:
    """What a run hands back: metrics plus the raw vectors tests care about."""

    metrics: RunMetrics
    final_w: np.ndarray
    averaged_w: np.ndarray | None
    update_supports: list[np.ndarray]


def _config_echo(problem, config: OptimizerConfig, sketch_config, batch_size, data_seed, rng_seed):
    echo: dict[str, object] = {
        "problem.kind": problem.kind,
        "problem.d": problem.d,
        "problem.n_train": problem.n_train,
        "run.batch_size": batch_size,
        "optimizer.mode": config.mode,
        "optimizer.algorithm": config.algorithm,
        "optimizer.k": config.k,
        "optimizer.p": config.p,
        "optimizer.t_rounds": config.t_rounds,
        "optimizer.w_workers": config.w_workers,
        "optimizer.momentum": config.momentum,
        "optimizer.xi": "-" if config.xi is None else config.xi,
        "optimizer.beta": config.beta,
        "optimizer.mu_scale": config.mu_scale,
        "optimizer.lr": config.lr,
        "optimizer.lr_points": ";".join(f"{t}:{v}" for t, v in config.lr_points) or "-",
        "optimizer.bias_indices": ",".join(str(b) for b in config.bias_indices) or "-",
        "seeds.data": data_seed,
        "seeds.rng": rng_seed,
    }
    if sketch_config is not None:
        echo["sketch.r"] = sketch_config.r
        echo["sketch.c"] = sketch_config.c
        echo["sketch.seed"] = sketch_config.seed
    return echo


def config_compression_factor(config: OptimizerConfig, sketch_config, d: int, mean_union: float | None = None) -> float:
    """The element formula evaluated from configuration alone.

    Sketched rounds move the sketch, the exact values (``P*k`` candidates in
    empirical mode, k in theory mode), and the k-sparse update.  Dense
    baselines move d up and d down (factor 1), true top-k moves d up and k
    down, and local top-k moves k up and the measured mean union down (it
    has no configured down size).
    """
    if config.algorithm == "sketched":
        table = sketch_config.r * sketch_config.c
        second = min(config.p * config.k, d) if config.mode == "empirical" else config.k
        return 2.0 * d / (table + second + config.k)
    if config.algorithm == "vanilla":
        return 1.0
    if config.algorithm == "true-topk":
        return 2.0 * d / (d + config.k)
    union = config.k if mean_union is None else mean_union
    return 2.0 * d / (config.k + union)


def run_training(
    problem,
    config: OptimizerConfig,
    sketch_config: SketchConfig | None,
    *,
    batch_size: int,
    data_seed: int,
    rng_seed: int,
    extra_echo: dict[str, object] | None = None,
) -> TrainingResult:
    """Run T rounds of the configured optimizer and record everything.

    The batch sequence depends only on ``data_seed`` (never on W), shards
    are contiguous, and the heavymix fill seeds derive from ``rng_seed`` per
    round, so two runs with equal seeds are bit-identical and runs differing
    only in W see the same data.

    Raises TrainingDivergedError the first time the train loss goes
    non-finite, and ValueError for inconsistent configuration.
    """
    d = problem.d
    config.validate_for_dimension(d)
    if config.algorithm == "sketched":
        if sketch_config is None:
            raise ValueError("sketched runs need a sketch configuration")
        if sketch_config.d != d:
            raise ValueError(f"sketch dimension {sketch_config.d} does not match problem dimension {d}")
    if not 1 <= batch_size <= problem.n_train:
        raise ValueError(f"batch size must be in [1, {problem.n_train}], got {batch_size}")
    if batch_size < config.w_workers:
        raise ValueError(f"batch of {batch_size} cannot cover {config.w_workers} workers")

    w0 = problem.initial_point(data_seed)
    states = make_states(w0, config.w_workers)
    channel = MeteredChannel()
    order_rng = np.random.default_rng(data_seed)
    fill_seeds = np.random.SeedSequence(rng_seed).generate_state(max(config.t_rounds, 1), dtype=np.uint64)
    averager = IterateAverage(config.xi) if config.mode == "theory" else None

    metrics = RunMetrics(config_echo={})
    echo = _config_echo(problem, config, sketch_config, batch_size, data_seed, rng_seed)
    if extra_echo:
        echo.update(extra_echo)
    metrics.config_echo = {key: str(value) for key, value in echo.items()}

    loss0 = problem.train_loss(states[0].w)
    metrics.records.append(RoundRecord(t=0, train_loss=loss0, test_metric=problem.test_metric(states[0].w)))

    supports: list[np.ndarray] = []
    grad_sq_max = 0.0
    dispersion_sum = 0.0
    bytes_up_total = 0
    bytes_down_total = 0
    bytes_request_total = 0
    union_total = 0

    for t in range(1, config.t_rounds + 1):
        batch = order_rng.choice(problem.n_train, size=batch_size, replace=False)
        shards = partition_batch(batch, config.w_workers)
        grads = [problem.gradient(st.w, shard) for st, shard in zip(states, shards)]
        mean_grad = sum(grads) / config.w_workers
        grad_sq_max = max(grad_sq_max, float(mean_grad @ mean_grad))
        dispersion_sum += sum(float((g - mean_grad) @ (g - mean_grad)) for g in grads) / config.w_workers

        if averager is not None:
            averager.add(t, states[0].w.copy())
        channel.start_round()
        lr_t = lr_at(t, config)
        union_size: int
        if config.algorithm == "sketched":
            if config.mode == "theory":
                update = theory_round(states, grads, t, config, sketch_config, int(fill_seeds[t - 1]), channel)
            else:
                update = empirical_round(states, grads, lr_t, config, sketch_config, int(fill_seeds[t - 1]), channel)
            support = update.indices
            union_size = len(update)
        elif config.algorithm == "vanilla":
            vanilla_step(states, grads, lr_t, channel)
            support = np.arange(d, dtype=np.int64)
            union_size = d
        elif config.algorithm == "true-topk":
            update = true_topk_step(states, grads, lr_t, config.k, config.momentum, channel)
            support = update.indices
            union_size = len(update)
        else:
            update, union_size = local_topk_step(states, grads, lr_t, config.k, config.momentum, channel)
            support = update.indices

        for other in states[1:]:
            if not np.array_equal(states[0].w, other.w):
                raise RuntimeError(f"round {t}: worker replicas diverged")

        loss = problem.train_loss(states[0].w)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"round {t}: non-finite train loss {loss!r}")
        stats = account_round(sketch_config, config.p, config.k, d, config.w_workers, channel)
        supports.append(np.array(support, dtype=np.int64))
        union_total += union_size
        bytes_up_total += stats.bytes_up * config.w_workers
        bytes_down_total += stats.bytes_down * config.w_workers
        bytes_request_total += stats.bytes_request * config.w_workers
        metrics.records.append(
            RoundRecord(
                t=t,
                train_loss=loss,
                test_metric=problem.test_metric(states[0].w),
                support_size=int(support.size),
                union_size=int(union_size),
                up_sketch_elems=stats.up_sketch_elems,
                up_exact_elems=stats.up_exact_elems,
                down_update_elems=stats.down_update_elems,
                bytes_up=stats.bytes_up,
                bytes_down=stats.bytes_down,
                bytes_request=stats.bytes_request,
                support_hash=support_fingerprint(support),
            )
        )

    averaged_w = None
    final_w = states[0].w.copy()
    summary: dict[str, object] = {
        "final_train_loss": metrics.records[-1].train_loss,
        "final_test_metric": metrics.records[-1].test_metric,
    }
    if averager is not None and config.t_rounds >= 1:
        averaged_w = averager.finalize()
        summary["averaged_test_metric"] = problem.test_metric(averaged_w)
    rounds = max(config.t_rounds, 1)
    mean_union = union_total / rounds
    summary["compression_factor"] = config_compression_factor(
        config, sketch_config, d, mean_union if config.algorithm == "local-topk" else None
    )
    if config.t_rounds >= 1:
        per_worker_moved = (bytes_up_total + bytes_down_total) / (config.w_workers * config.t_rounds)
        summary["byte_compression_factor"] = 16.0 * d / per_worker_moved
    else:
        summary["byte_compression_factor"] = 1.0
    summary["bytes_up_total"] = bytes_up_total
    summary["bytes_down_total"] = bytes_down_total
    summary["bytes_request_total"] = bytes_request_total
    summary["mean_union_size"] = mean_union if config.t_rounds >= 1 else 0.0
    summary["grad_sq_max"] = grad_sq_max
    summary["grad_dispersion"] = dispersion_sum / rounds if config.t_rounds >= 1 else 0.0
    metrics.summary = summary

    return TrainingResult(
        metrics=metrics,
        final_w=final_w,
        averaged_w=averaged_w,
        update_supports=supports,
    )
