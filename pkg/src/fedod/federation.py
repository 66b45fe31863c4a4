"""Synchronous federated training of autoencoders.

The server only ever sees parameter lists and sample counts.  Each client
owns its training matrix and runs local Adam epochs; the per-round random
stream of every client is derived from ``(seed, round, client_id)`` so the
outcome does not depend on the order in which clients execute.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autoencoder import AutoencoderSpec, ColumnLayout, init_autoencoder, train_local
from .exceptions import ConfigError, ContractViolation
from .nn import ModelParams

FEDAVG = "fedavg"
FEDPROX = "fedprox"
_SERVER_STREAM = 2**31 - 1


@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 4
    fraction: float = 1.0
    rounds: int = 20
    local_epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    method: str = FEDAVG
    mu: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ConfigError("fraction must lie in (0, 1]")
        if self.rounds < 1 or self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigError("rounds, local_epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if self.method not in (FEDAVG, FEDPROX):
            raise ConfigError(f"method must be {FEDAVG!r} or {FEDPROX!r}")
        if self.mu < 0:
            raise ConfigError("mu must be nonnegative")

    @property
    def n_sampled(self):
        return max(math.ceil(self.fraction * self.n_clients), 1)

    def to_dict(self):
        return asdict(self)


@dataclass
class RoundLog:
    round: int
    sampled: List[int]
    n_samples: Dict[int, int]
    local_loss: Dict[int, float]
    checksum: str

    def to_dict(self):
        return {
            "round": self.round,
            "sampled": list(self.sampled),
            "n_samples": {str(k): v for k, v in self.n_samples.items()},
            "local_loss": {str(k): v for k, v in self.local_loss.items()},
            "checksum": self.checksum,
        }


def params_checksum(params: ModelParams) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def client_stream(seed, round_idx, client_id):
    return np.random.default_rng(np.random.SeedSequence([seed, round_idx, client_id]))


def init_global(spec: AutoencoderSpec, seed) -> ModelParams:
    """Server-side initial model ``w_0``."""
    return init_autoencoder(spec, np.random.SeedSequence([seed, _SERVER_STREAM]))


def aggregation_weights(counts: Sequence[int]) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise ContractViolation("no updates to aggregate")
    if np.any(counts < 1):
        raise ContractViolation("every client must report n_k >= 1")
    weights = counts / counts.sum()
    if abs(weights.sum() - 1.0) > 1e-12:
        raise ContractViolation(f"aggregation weights sum to {weights.sum()!r}")
    return weights


def fedavg_aggregate(updates: Sequence[Tuple[ModelParams, int]]) -> ModelParams:
    """Sample-count weighted mean of client parameters."""
    if not updates:
        raise ContractViolation("no updates to aggregate")
    shapes = [p.shape for p in updates[0][0]]
    for params, _ in updates[1:]:
        if [p.shape for p in params] != shapes:
            raise ContractViolation("client updates have mismatched parameter shapes")
    weights = aggregation_weights([n for _, n in updates])
    out = []
    for i in range(len(shapes)):
        first = updates[0][0][i]
        if all(np.array_equal(first, params[i]) for params, _ in updates[1:]):
            out.append(np.array(first, copy=True))
            continue
        acc = np.zeros(shapes[i])
        for w, (params, _) in zip(weights, updates):
            acc += w * params[i]
        out.append(acc)
    return out


def client_update(global_params, data, spec, layout, epochs, batch_size, lr, seed):
    """Plain local training started from the broadcast model."""
    return train_local(global_params, data, spec, layout, epochs, batch_size, lr, seed)


def fedprox_client_update(global_params, data, spec, layout, mu, epochs, batch_size, lr, seed):
    """Local training with the proximal pull ``mu/2 * ||w - w_global||^2``."""
    if mu < 0:
        raise ContractViolation("mu must be nonnegative")
    center = [np.array(p, copy=True) for p in global_params]
    return train_local(global_params, data, spec, layout, epochs, batch_size, lr, seed,
                       prox_center=center, mu=mu)


class Client:
    """A data owner: holds its private training matrix, returns only parameters."""

    def __init__(self, client_id, data, layout: ColumnLayout):
        self.client_id = client_id
        self._data = np.asarray(data, dtype=np.float64)
        self.layout = layout

    @property
    def n_samples(self):
        return self._data.shape[0]

    def update(self, global_params, spec, cfg: FederationConfig, round_idx):
        rng = client_stream(cfg.seed, round_idx, self.client_id)
        if cfg.method == FEDPROX:
            params, trace = fedprox_client_update(
                global_params, self._data, spec, self.layout, cfg.mu,
                cfg.local_epochs, cfg.batch_size, cfg.lr, rng)
        else:
            params, trace = client_update(
                global_params, self._data, spec, self.layout,
                cfg.local_epochs, cfg.batch_size, cfg.lr, rng)
        return params, self.n_samples, trace[-1]


class Server:
    def __init__(self, spec: AutoencoderSpec, cfg: FederationConfig):
        self.spec = spec
        self.cfg = cfg
        self.params = init_global(spec, cfg.seed)

    def sample_clients(self, round_idx) -> List[int]:
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, round_idx, _SERVER_STREAM]))
        m = self.cfg.n_sampled
        return sorted(int(k) for k in rng.choice(self.cfg.n_clients, size=m, replace=False))

    def aggregate(self, updates: Sequence[Tuple[ModelParams, int]]):
        self.params = fedavg_aggregate(updates)
        return self.params


def run_federation(clients, spec: AutoencoderSpec, cfg: FederationConfig, n_jobs=1,
                   initial_params: Optional[ModelParams] = None):
    """Run ``cfg.rounds`` synchronous rounds.

    ``clients`` are :class:`Client` objects or anything with ``features`` and
    ``layout`` attributes (a ``Dataset``).  Returns the final global model,
    the per-client models after the final broadcast, and one ``RoundLog`` per
    round.
    """
    clients = [c if isinstance(c, Client) else Client(k, c.features, c.layout)
               for k, c in enumerate(clients)]
    if len(clients) != cfg.n_clients:
        raise ContractViolation(f"config expects {cfg.n_clients} clients, got {len(clients)}")
    for c in clients:
        if c._data.shape[1] != spec.input_dim:
            raise ContractViolation(
                f"client {c.client_id} has {c._data.shape[1]} features, model expects {spec.input_dim}"
            )
    server = Server(spec, cfg)
    if initial_params is not None:
        server.params = [np.array(p, copy=True) for p in initial_params]
    logs = []
    pool = ThreadPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None
    try:
        for r in range(1, cfg.rounds + 1):
            sampled = server.sample_clients(r)
            broadcast = server.params

            def work(k, broadcast=broadcast, r=r):
                return clients[k].update(broadcast, spec, cfg, r)

            results = list(pool.map(work, sampled)) if pool else [work(k) for k in sampled]
            server.aggregate([(params, n) for params, n, _ in results])
            logs.append(RoundLog(
                round=r,
                sampled=sampled,
                n_samples={k: n for k, (_, n, _) in zip(sampled, results)},
                local_loss={k: float(loss) for k, (_, _, loss) in zip(sampled, results)},
                checksum=params_checksum(server.params),
            ))
    finally:
        if pool:
            pool.shutdown()
    final = server.params
    per_client = [[np.array(p, copy=True) for p in final] for _ in clients]
    return final, per_client, logs
