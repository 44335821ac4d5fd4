"""Round-synchronous multi-agent training engine with cost accounting.

Every agent advances through the same sequence of barriers each round, so a
message sent in one phase is only consumed in a later phase and the result
never depends on scheduling. Within a phase agents may be mapped over a
thread pool; each agent touches only its own state plus read-only snapshots,
which keeps any worker count bit-identical to the single-threaded run.

Round orders by method:

* qg-dsgdm-n / ccl: exchange round-start parameters, sample a mini-batch,
  (ccl) run neighbor models on the batch and swap class summaries, take the
  gradient, then the quasi-global momentum update mixes the round-start
  parameters.
* dsgdm-n: sample, take the gradient, momentum half-step, then exchange and
  mix the half-stepped parameters.

The cross-feature penalties are always evaluated for the logs, even for the
baselines, where they cost nothing on the wire and are measurement only;
byte and multiply-accumulate counters track what the protocol itself needs,
not the diagnostics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import crossfeat, model, optim
from .config import ExperimentConfig, config_dict, validate
from .graph import Topology, build_topology, check_mixing_matrix, uniform_mixing
from .model import FeatureBatch, ModelSpec
from .partition import BatchStream, Dataset, PartitionSpec, dirichlet_partition, holdout_split, load_csv, make_blobs

BYTES_PER_FLOAT = 8

# labels for the independent random streams carved out of the master seed
_STREAM_INIT = 0
_STREAM_PARTITION = 1
_STREAM_BATCH = 2
_STREAM_BLOBS = 3


class SimulationError(RuntimeError):
    """Numeric failure inside a run; the message carries the round index."""


def param_msg_bytes(n_params: int) -> int:
    """Wire size of one parameter exchange message."""
    return BYTES_PER_FLOAT * n_params


def summary_msg_bytes(num_classes: int, feature_dim: int) -> int:
    """Wire size of one class-summary message: C mean rows plus C counts."""
    return BYTES_PER_FLOAT * num_classes * feature_dim + BYTES_PER_FLOAT * num_classes


def comm_cost(method: str, spec: ModelSpec, num_classes: int, peers: int) -> int:
    """Bytes one agent with `peers` neighbors sends per round under `method`."""
    cost = peers * param_msg_bytes(model.param_count(spec))
    if method == "ccl":
        cost += peers * summary_msg_bytes(num_classes, spec.feature_dim)
    return cost


@dataclass(frozen=True)
class RoundMetrics:
    round_idx: int
    agent: int
    ce: float
    mv: float
    dv: float
    accuracy: float
    bytes_sent: int
    fwd_macs: int
    bwd_macs: int
    cross_fwd_macs: int  # portion of fwd_macs spent on neighbor-model forwards


@dataclass
class MetricsLog:
    config: dict
    seed: int
    rows: list = field(default_factory=list)
    evals: list = field(default_factory=list)  # (round_idx, consensus test accuracy)
    final_accuracy: float = 0.0
    total_rounds: int = 0
    final_params: list = field(default_factory=list)  # per-agent vectors at the end

    @property
    def total_bytes(self) -> int:
        return sum(r.bytes_sent for r in self.rows)


def compute_overhead(log: MetricsLog) -> float:
    """Fraction of all counted multiply-accumulates spent on cross-features."""
    if not log.rows:
        raise ValueError("compute_overhead needs a non-empty log")
    cross = sum(r.cross_fwd_macs for r in log.rows)
    total = sum(r.fwd_macs + r.bwd_macs for r in log.rows)
    return cross / total


def consensus_model(params_list) -> np.ndarray:
    """Plain average of agent parameter vectors (the end-of-run all-reduce)."""
    if len(params_list) == 0:
        raise ValueError("consensus over zero agents")
    out = params_list[0].astype(np.float64).copy()
    for p in params_list[1:]:
        out += p
    out /= len(params_list)
    return out


def evaluate(spec: ModelSpec, params: np.ndarray, data: Dataset) -> float:
    fb, _ = model.forward_features(spec, params, data.features, data.labels)
    logits = model.forward_logits(spec, params, fb)
    return model.accuracy(logits, data.labels)


@dataclass
class _Agent:
    idx: int
    params: np.ndarray
    opt: optim.OptState
    stream: BatchStream
    neighbors: tuple[int, ...]
    w_row: list  # [self weight, then neighbor weights in neighbor order]


def _pmap(fn, items, workers: int):
    """Order-preserving map over agents, optionally on a thread pool."""
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _derive_seed(master: int, *labels: int):
    return np.random.SeedSequence([int(master), *labels])


def _load_data(cfg: ExperimentConfig, master_seed: int) -> tuple[Dataset, Dataset | None]:
    if cfg.train_csv is not None:
        train = load_csv(cfg.train_csv, cfg.num_classes)
        test = load_csv(cfg.test_csv, cfg.num_classes) if cfg.test_csv else None
        return train, test
    blob_seed = _derive_seed(master_seed, _STREAM_BLOBS)
    full = make_blobs(cfg.num_classes, cfg.blob_per_class + cfg.blob_test_per_class,
                      cfg.input_dim, cfg.blob_spread, blob_seed)
    if cfg.blob_test_per_class == 0:
        return full, None
    return holdout_split(full, cfg.blob_test_per_class)


def run_experiment(cfg: ExperimentConfig, seed: int, workers: int | None = None) -> MetricsLog:
    """Simulate one full training run; deterministic in (cfg, seed).

    The worker count only sets how many threads map over agents inside each
    phase and never changes any result.
    """
    validate(cfg)
    workers = cfg.workers if workers is None else workers
    spec = cfg.model_spec()

    train, test = _load_data(cfg, seed)
    if train.features.shape[1] != cfg.input_dim:
        raise ValueError(f"dataset has {train.features.shape[1]} features, config says {cfg.input_dim}")

    topo = build_topology(cfg.topology, cfg.n_agents)
    w = uniform_mixing(topo)
    check_mixing_matrix(w, topo)

    shards = dirichlet_partition(train, PartitionSpec(cfg.alpha, cfg.n_agents,
                                                      _derive_seed(seed, _STREAM_PARTITION)))
    x0 = model.init_params(spec, _derive_seed(seed, _STREAM_INIT))

    agents = []
    for i in range(cfg.n_agents):
        rng = np.random.default_rng(_derive_seed(seed, _STREAM_BATCH, i))
        nbrs = topo.neighbors(i)
        w_row = [float(w[i, i])] + [float(w[i, j]) for j in nbrs]
        agents.append(_Agent(
            idx=i,
            params=x0.copy(),
            opt=optim.fresh_state(len(x0), cfg.momentum, cfg.lr, cfg.gamma),
            stream=BatchStream(shards[i], cfg.batch_size, rng),
            neighbors=nbrs,
            w_row=w_row,
        ))

    rounds_per_epoch = math.ceil(max(len(s) for s in shards) / cfg.batch_size)
    total_rounds = cfg.epochs * rounds_per_epoch
    eval_data = test if test is not None else train

    log = MetricsLog(config=config_dict(cfg), seed=seed, total_rounds=total_rounds)
    n_params = len(x0)
    p_bytes = param_msg_bytes(n_params)
    s_bytes = summary_msg_bytes(cfg.num_classes, spec.feature_dim)

    for k in range(total_rounds):
        eta = optim.lr_at([tuple(p) for p in cfg.lr_decay_schedule], k, total_rounds, cfg.lr)
        for a in agents:
            a.opt.eta = eta
        try:
            _run_round(cfg, spec, agents, k, log, workers, p_bytes, s_bytes)
        except FloatingPointError as exc:
            raise SimulationError(f"numeric failure at round {k}: {exc}") from exc
        for a in agents:
            if not np.all(np.isfinite(a.params)):
                raise SimulationError(f"non-finite parameters at round {k} on agent {a.idx}")
        if cfg.eval_interval and (k + 1) % cfg.eval_interval == 0 and k != total_rounds - 1:
            acc = evaluate(spec, consensus_model([a.params for a in agents]), eval_data)
            log.evals.append((k, acc))

    log.final_params = [a.params.copy() for a in agents]
    final = evaluate(spec, consensus_model(log.final_params), eval_data)
    log.evals.append((total_rounds - 1, final))
    log.final_accuracy = final
    return log


@dataclass
class _Stash:
    """Per-agent intermediates crossing the summary barrier within a round."""

    x: np.ndarray
    y: np.ndarray
    fb: FeatureBatch
    tape: model.ForwardTape
    mv: float
    dz_mv: np.ndarray
    own_summary: crossfeat.CrossFeatureSummary
    outgoing: dict


def _run_round(cfg: ExperimentConfig, spec: ModelSpec, agents: list, k: int,
               log: MetricsLog, workers: int, p_bytes: int, s_bytes: int) -> None:
    snapshot = [a.params for a in agents]  # round-start parameters, read-only

    def phase_features(a: _Agent) -> _Stash:
        x, y = a.stream.next_batch()
        fb, tape = model.forward_features(spec, a.params, x, y)
        outgoing = {}
        cross = []
        for j in a.neighbors:
            cfb, _ = model.forward_features(spec, snapshot[j], x, y)
            cross.append(cfb)
            outgoing[j] = crossfeat.summarize(cfb, cfg.num_classes)
        mv, dz_mv = crossfeat.model_variant_loss(fb, cross, cfg.similarity)
        return _Stash(x, y, fb, tape, mv, dz_mv,
                      crossfeat.summarize(fb, cfg.num_classes), outgoing)

    stash = _pmap(phase_features, agents, workers)

    is_ccl = cfg.method == "ccl"

    def phase_update(a: _Agent):
        st = stash[a.idx]
        pool = [st.own_summary] if cfg.dv_include_self else []
        pool += [stash[j].outgoing[a.idx] for j in a.neighbors]
        rep = crossfeat.aggregate(pool) if pool else None
        if rep is not None:
            dv, dz_dv = crossfeat.data_variant_loss(st.fb, rep, cfg.similarity)
        else:
            dv, dz_dv = 0.0, np.zeros_like(st.fb.z)

        upstream = None
        if is_ccl and (cfg.lambda_m != 0.0 or cfg.lambda_d != 0.0):
            upstream = cfg.lambda_m * st.dz_mv + cfg.lambda_d * dz_dv
        ce, grad, logits = model.ce_grad_from_tape(spec, a.params, st.tape, st.y, upstream)
        if cfg.weight_decay:
            grad = grad + cfg.weight_decay * a.params

        if cfg.method == "dsgdm-n":
            moved = optim.momentum_half_step(a.params, grad, a.opt, cfg.nesterov)
        else:
            moved = optim.qgm_step(a.params, grad, a.opt,
                                   [snapshot[j] for j in a.neighbors], a.w_row)

        rows = len(st.y)
        peers = len(a.neighbors)
        local_fwd = model.forward_feature_macs(spec, rows) + model.head_macs(spec, rows)
        cross_fwd = peers * model.forward_feature_macs(spec, rows) if is_ccl else 0
        metrics = RoundMetrics(
            round_idx=k,
            agent=a.idx,
            ce=ce,
            mv=st.mv,
            dv=dv,
            accuracy=model.accuracy(logits, st.y),
            bytes_sent=peers * p_bytes + (peers * s_bytes if is_ccl else 0),
            fwd_macs=local_fwd + cross_fwd,
            bwd_macs=model.backward_macs(spec, rows),
            cross_fwd_macs=cross_fwd,
        )
        return moved, metrics

    moved = _pmap(phase_update, agents, workers)

    if cfg.method == "dsgdm-n":
        halves = [m for m, _ in moved]

        def phase_mix(a: _Agent):
            return optim.mix(halves[a.idx], [halves[j] for j in a.neighbors], a.w_row)

        mixed = _pmap(phase_mix, agents, workers)
        for a, x_next in zip(agents, mixed):
            a.params = x_next
    else:
        for a, (x_next, _) in zip(agents, moved):
            a.params = x_next

    for _, m in moved:
        log.rows.append(m)


def write_metrics_csv(log: MetricsLog, path: str) -> None:
    """One row per agent per round; floats keep full round-trip precision."""
    with open(path, "w") as fh:
        fh.write("k,agent,lce,lmv,ldv,acc,bytes,fwd_mac,bwd_mac\n")
        for r in log.rows:
            fh.write(f"{r.round_idx},{r.agent},{float(r.ce)!r},{float(r.mv)!r},"
                     f"{float(r.dv)!r},{float(r.accuracy)!r},{r.bytes_sent},"
                     f"{r.fwd_macs},{r.bwd_macs}\n")


def write_summary_json(log: MetricsLog, path: str) -> None:
    summary = {
        "seed": log.seed,
        "rounds": log.total_rounds,
        "final_consensus_test_accuracy": float(log.final_accuracy),
        "total_bytes": int(log.total_bytes),
        "compute_overhead": float(compute_overhead(log)) if log.rows else 0.0,
        "eval_history": [[int(k), float(a)] for k, a in log.evals],
        "config": log.config,
    }
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
