"""Round orchestration: sampling, local training, dual clipping, aggregation.

Each round the server broadcasts the global model, sampled clients train
locally and transmit the parameter difference, the server picks the clipping
bound S (fixed or the median of the round's unclipped update norms), applies
the dual-threshold clip per client, averages, and adds Gaussian noise. All
client work inside a round is a pure function of (global weights, shard,
substream), so rounds are reproducible for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import models
from .clipping import dual_clip, compute_update
from .datagen import BiasTag, ClientShard
from .models import EvalMetrics, LabeledBatch, ModelSpec
from .numeric import ParamVector, RngStream, l2_norm, median
from .privacy import PrivacyLedger, add_noise, epsilon_per_round

S_FLOOR = 1e-12


class SimulationError(RuntimeError):
    """A round produced non-finite state; carries round/client context."""


@dataclass(frozen=True)
class FedConfig:
    K: int
    q: float = 1.0
    T: int = 1
    epochs: int = 1
    lr: float = 0.1
    batch_size: int = 32
    S_policy: str = "median_adaptive"  # median_adaptive | fixed
    S_fixed: float = 1.0
    M: float = math.inf
    sigma: float = 0.0
    delta_dp: float = 1e-5
    adjacency: str = "remove_one"
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 < self.q <= 1.0:
            raise ValueError("q must be in (0,1]")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.S_policy not in ("median_adaptive", "fixed"):
            raise ValueError(f"unknown S_policy {self.S_policy!r}")
        if self.S_policy == "fixed" and not self.S_fixed > 0:
            raise ValueError("fixed S must be > 0")
        if self.M <= 0:
            raise ValueError("M must be > 0 (use inf to disable)")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 < self.delta_dp < 1.0:
            raise ValueError("delta_dp must be strictly between 0 and 1")

    @property
    def m_t(self) -> int:
        return math.ceil(self.q * self.K)


@dataclass
class RoundRecord:
    round: int
    sampled_clients: list
    per_client: list  # {id, update_norm_pre, clip_factor, clipped_by, biased}
    S_used: float
    M_used: float
    noise_std: float
    eps_round: float
    eval: EvalMetrics

    def to_dict(self) -> dict:
        """Stable external schema for rounds.jsonl."""
        return {
            "round": self.round,
            "sampled_clients": list(self.sampled_clients),
            "per_client": [
                {
                    "id": c["id"],
                    "norm_pre": c["update_norm_pre"],
                    "clip_factor": c["clip_factor"],
                    "clipped_by": c["clipped_by"],
                    "biased": c["biased"],
                }
                for c in self.per_client
            ],
            "S_used": self.S_used,
            "M_used": self.M_used,
            "noise_std": self.noise_std,
            "eps_round": self.eps_round,
            "eval": {
                "accuracy": self.eval.accuracy,
                "loss": self.eval.loss,
                "per_group": {str(k): v for k, v in self.eval.per_group_accuracy.items()},
            },
        }


@dataclass
class ServerState:
    round: int
    w_global: ParamVector
    ledger: PrivacyLedger
    history: list = field(default_factory=list)


def sample_clients(K: int, q: float, rng: RngStream) -> list:
    """Uniform sample without replacement of size ceil(q*K), sorted ascending."""
    m = math.ceil(q * K)
    if m > K:
        raise ValueError("sample size exceeds K")
    ids = rng.generator().choice(K, size=m, replace=False)
    return sorted(int(i) for i in ids)

def adaptive_S(update_norms) -> float:
    """Median of the round's unclipped update norms, floored away from zero."""
    return max(median(update_norms), S_FLOOR)


def apply_update_bias(delta: ParamVector, tag: BiasTag) -> ParamVector:
    """Realize update-level bias at transmission time (direction preserved)."""
    if tag.mode == "update_scale":
        return delta * tag.factor
    return delta


def _client_update(spec, w_global, shard, config, stream):
    w_local = models.local_train(
        spec, w_global, shard.batch, config.epochs, config.lr, config.batch_size, stream
    )
    if not np.all(np.isfinite(w_local)):
        raise SimulationError("local training produced non-finite parameters")
    delta = compute_update(w_local, w_global)
    return apply_update_bias(delta, shard.bias_tag)


def aggregate_round(deltas, config: FedConfig):
    """Pick S, dual-clip each update, and average with 1/m_t.

    Returns (averaged update, S_used, list of ClipReport).
    """
    norms = [l2_norm(d) for d in deltas]
    if config.S_policy == "median_adaptive":
        S = adaptive_S(norms)
    else:
        S = config.S_fixed
    clipped, reports = [], []
    for d in deltas:
        c, rep = dual_clip(d, S, config.M)
        clipped.append(c)
        reports.append(rep)
    avg = np.sum(clipped, axis=0) / len(clipped)
    return avg, S, reports


def run_round(
    state: ServerState,
    shards,
    config: FedConfig,
    spec: ModelSpec,
    test: LabeledBatch,
    root: RngStream,
    workers: int = 1,
):
    """Execute one communication round, mutating and returning the state."""
    t = state.round
    sampled = sample_clients(config.K, config.q, root.child("sample", t))
    round_stream = root.child("round", t)

    def one(cid):
        try:
            return _client_update(
                spec, state.w_global, shards[cid], config,
                round_stream.child("client", cid),
            )
        except SimulationError as exc:
            raise SimulationError(
                f"non-finite update from client {cid} in round {t}"
            ) from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            deltas = list(pool.map(one, sampled))
    else:
        deltas = [one(cid) for cid in sampled]

    for cid, d in zip(sampled, deltas):
        if not np.all(np.isfinite(d)):
            raise SimulationError(
                f"non-finite update from client {cid} in round {t}"
            )

    avg, S_used, reports = aggregate_round(deltas, config)
    noise_std = config.sigma * S_used
    noisy = add_noise(avg, S_used, config.sigma, root.child("noise", t))
    w_next = state.w_global + noisy
    if not np.all(np.isfinite(w_next)):
        raise SimulationError(f"non-finite global model after round {t}")

    eps = epsilon_per_round(config.sigma, config.delta_dp, len(sampled), config.adjacency)
    state.ledger.record(t, S_used, config.sigma, eps if math.isfinite(eps) else math.inf)

    record = RoundRecord(
        round=t,
        sampled_clients=sampled,
        per_client=[
            {
                "id": cid,
                "update_norm_pre": rep.pre_norm,
                "clip_factor": rep.factor,
                "clipped_by": rep.clipped_by,
                "biased": shards[cid].bias_tag.mode != "clean",
            }
            for cid, rep in zip(sampled, reports)
        ],
        S_used=S_used,
        M_used=config.M,
        noise_std=noise_std,
        eps_round=eps,
        eval=models.evaluate(spec, w_next, test),
    )
    state.w_global = w_next
    state.round = t + 1
    state.history.append(record)
    return state, record


def run_training(
    config: FedConfig,
    spec: ModelSpec,
    shards,
    test: LabeledBatch,
    workers: int = 1,
):
    """Run T rounds from a shared initial model; deterministic in config.seed."""
    if len(shards) != config.K:
        raise ValueError(f"expected {config.K} shards, got {len(shards)}")
    root = RngStream(config.seed)
    w0 = models.init_params(spec, root.child("init"))
    state = ServerState(
        round=0,
        w_global=w0,
        ledger=PrivacyLedger(delta_dp=config.delta_dp),
    )
    for _ in range(config.T):
        state, _ = run_round(state, shards, config, spec, test, root, workers=workers)
    return state.w_global, state.history, state.ledger
