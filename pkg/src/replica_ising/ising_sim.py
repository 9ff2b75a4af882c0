"""Ground-truth Ising models, exact enumeration and Metropolis sampling."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

__all__ = [
    "IsingModel",
    "SpinDataset",
    "ExactDistribution",
    "GraphGenerationError",
    "gen_rr_graph",
    "gen_grid2d",
    "exact_distribution",
    "metropolis_sample",
    "neighborhood_table",
    "neighborhood_sampler",
    "save_dataset",
    "load_dataset",
    "MAGIC",
]

MAGIC = b"ISNG1"
DEFAULT_BURN_IN = 1000
DEFAULT_THIN = 10


class GraphGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IsingModel:
    """Zero-field Ising model: ``P(s) ~ exp(sum_{i<j} J_ij s_i s_j)``."""

    N: int
    edges: np.ndarray  # (E, 2) int, i < j
    couplings: np.ndarray  # (E,) float, nonzero
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        couplings = np.asarray(self.couplings, dtype=float).reshape(-1)
        if len(edges) != len(couplings):
            raise ValueError("edges and couplings differ in length")
        if len(edges):
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError("edges must satisfy i < j (no self-loops)")
            if edges.min() < 0 or edges.max() >= self.N:
                raise ValueError("edge index out of range")
            if len(np.unique(edges[:, 0] * self.N + edges[:, 1])) != len(edges):
                raise ValueError("duplicate edges")
            if np.any(couplings == 0):
                raise ValueError("stored couplings must be nonzero")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "couplings", couplings)

    @property
    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.N)

    def edge_list(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(J)) for (i, j), J in zip(self.edges, self.couplings)]

    def coupling_matrix(self) -> np.ndarray:
        W = np.zeros((self.N, self.N))
        if len(self.edges):
            W[self.edges[:, 0], self.edges[:, 1]] = self.couplings
            W[self.edges[:, 1], self.edges[:, 0]] = self.couplings
        return W

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Symmetric adjacency as (indptr, indices, weights)."""
        i = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        j = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        w = np.concatenate([self.couplings, self.couplings])
        order = np.lexsort((j, i))
        i, j, w = i[order], j[order], w[order]
        indptr = np.zeros(self.N + 1, dtype=np.int64)
        np.cumsum(np.bincount(i, minlength=self.N), out=indptr[1:])
        return indptr, j.astype(np.int64), w.astype(float)

    def neighbors(self, i: int) -> np.ndarray:
        indptr, idx, _ = self.csr()
        return idx[indptr[i] : indptr[i + 1]]

    def to_json(self) -> dict:
        return {"N": self.N, "edges": self.edge_list(), "meta": self.meta}

    @classmethod
    def from_json(cls, obj: dict) -> "IsingModel":
        e = obj.get("edges", [])
        edges = np.array([[a, b] for a, b, _ in e], dtype=np.int64).reshape(-1, 2)
        J = np.array([c for _, _, c in e], dtype=float)
        return cls(int(obj["N"]), edges, J, dict(obj.get("meta", {})))


@dataclass
class SpinDataset:
    """M x N matrix of +-1 spins with sampling provenance."""

    spins: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.spins = np.asarray(self.spins, dtype=np.int8)
        if self.spins.ndim != 2 or self.spins.shape[0] < 1:
            raise ValueError("spins must be a non-empty 2D array")
        if not np.all(np.abs(self.spins) == 1):
            raise ValueError("spins must be +-1")

    @property
    def M(self) -> int:
        return self.spins.shape[0]

    @property
    def N(self) -> int:
        return self.spins.shape[1]


def _signs(n: int, sign_mode: str, rng) -> np.ndarray:
    if sign_mode == "uniform":
        return np.ones(n)
    if sign_mode == "random_sign":
        return rng.choice([-1.0, 1.0], size=n)
    raise ValueError(f"unknown sign_mode {sign_mode!r}")


def gen_rr_graph(N: int, d: int, K0: float, sign_mode: str = "random_sign", rng=None,
                 max_restarts: int = 1000) -> IsingModel:
    """Uniform random d-regular graph by configuration-model pairing.

    Pairings containing a self-loop or multi-edge are discarded and redrawn.
    """
    rng = np.random.default_rng(rng)
    if (N * d) % 2:
        raise ValueError(f"N*d = {N * d} is odd; no d-regular graph exists")
    if not N > d:
        raise ValueError(f"need N > d, got N={N}, d={d}")
    stubs = np.repeat(np.arange(N), d)
    for attempt in range(max_restarts):
        pairs = rng.permutation(stubs).reshape(-1, 2)
        pairs.sort(axis=1)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            continue
        keys = pairs[:, 0] * N + pairs[:, 1]
        if len(np.unique(keys)) != len(keys):
            continue
        pairs = pairs[np.argsort(keys)]
        J = K0 * _signs(len(pairs), sign_mode, rng)
        return IsingModel(N, pairs, J, {"family": "rr", "d": d, "K0": K0,
                                        "sign_mode": sign_mode, "restarts": attempt})
    raise GraphGenerationError(f"no simple {d}-regular pairing on {N} nodes after {max_restarts} tries")


def gen_grid2d(L: int, K0: float) -> IsingModel:
    """L x L periodic square lattice with uniform coupling K0."""
    if L < 3:
        raise ValueError("L >= 3 required for a simple periodic grid")
    idx = np.arange(L * L).reshape(L, L)
    right = np.stack([idx.ravel(), np.roll(idx, -1, axis=1).ravel()], axis=1)
    down = np.stack([idx.ravel(), np.roll(idx, -1, axis=0).ravel()], axis=1)
    e = np.sort(np.concatenate([right, down]), axis=1)
    e = e[np.lexsort((e[:, 1], e[:, 0]))]
    return IsingModel(L * L, e, np.full(len(e), float(K0)), {"family": "grid2d", "L": L, "K0": K0, "d": 4})


def _all_states(n: int) -> np.ndarray:
    """All 2^n spin states; bit k of the row index set means s_k = +1."""
    bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


@dataclass(frozen=True)
class ExactDistribution:
    states: np.ndarray  # (2^N, N) int8
    probs: np.ndarray  # (2^N,)

    @property
    def covariance(self) -> np.ndarray:
        s = self.states.astype(float)
        return (s * self.probs[:, None]).T @ s

    def expect(self, f) -> float:
        return float(np.dot(self.probs, f(self.states.astype(float))))


def exact_distribution(model: IsingModel) -> ExactDistribution:
    """Brute-force Boltzmann table over all 2^N states (N <= 20)."""
    if model.N > 20:
        raise ValueError(f"N={model.N} too large for enumeration (max 20)")
    states = _all_states(model.N)
    s = states.astype(float)
    if len(model.edges):
        logw = (s[:, model.edges[:, 0]] * s[:, model.edges[:, 1]]) @ model.couplings
    else:
        logw = np.zeros(len(s))
    logw -= logw.max()
    p = np.exp(logw)
    return ExactDistribution(states, p / p.sum())


def state_index(spins: np.ndarray) -> np.ndarray:
    """Row-wise index of +-1 configurations, matching ``_all_states``."""
    bits = (np.asarray(spins) > 0).astype(np.int64)
    return bits @ (1 << np.arange(bits.shape[1], dtype=np.int64))


@njit(cache=True)
def _sweep(s, indptr, indices, weights):
    # random-scan: n uniformly chosen sites per sweep (a fixed scan order is
    # periodic when dE = 0, e.g. isolated spins always flip)
    n = s.shape[0]
    for _ in range(n):
        i = np.random.randint(n)
        h = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            h += weights[k] * s[indices[k]]
        dE = 2.0 * s[i] * h
        if dE <= 0.0 or np.random.random() < np.exp(-dE):
            s[i] = -s[i]


@njit(cache=True)
def _mh_chain(s, indptr, indices, weights, M, burn_in, thin, seed):
    np.random.seed(seed)
    out = np.empty((M, s.shape[0]), dtype=np.int8)
    for _ in range(burn_in):
        _sweep(s, indptr, indices, weights)
    for m in range(M):
        for _ in range(thin):
            _sweep(s, indptr, indices, weights)
        out[m] = s
    return out


@njit(cache=True)
def _mh_trace(s, indptr, indices, weights, n_sweeps, seed):
    """Configuration index after every single-site update (small N only)."""
    np.random.seed(seed)
    n = s.shape[0]
    trace = np.empty(n_sweeps * n, dtype=np.int64)
    pos = 0
    for _ in range(n_sweeps):
        for _ in range(n):
            i = np.random.randint(n)
            h = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                h += weights[k] * s[indices[k]]
            dE = 2.0 * s[i] * h
            if dE <= 0.0 or np.random.random() < np.exp(-dE):
                s[i] = -s[i]
            code = 0
            for j in range(n):
                if s[j] > 0:
                    code += 1 << j
            trace[pos] = code
            pos += 1
    return trace


def metropolis_sample(model: IsingModel, M: int, burn_in: int = DEFAULT_BURN_IN,
                      thin: int = DEFAULT_THIN, rng=None) -> SpinDataset:
    """Random-scan single-site Metropolis chain; one sample kept every ``thin`` sweeps."""
    if burn_in < 1 or thin < 1:
        raise ValueError("burn_in and thin must be >= 1 sweeps")
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.default_rng(rng)
    s0 = rng.choice(np.array([-1, 1], dtype=np.int8), size=model.N)
    seed = int(rng.integers(0, 2**31 - 1))
    indptr, indices, weights = model.csr()
    spins = _mh_chain(s0, indptr, indices, weights, int(M), int(burn_in), int(thin), seed)
    prov = {"sampler": "metropolis", "burn_in": burn_in, "thin": thin, "kernel_seed": seed}
    return SpinDataset(spins, prov)


def neighborhood_table(d: int, K0: float) -> tuple[np.ndarray, np.ndarray]:
    """Enumerated marginal of (s0, s_1..s_d), ``P ~ exp(K0 s0 sum_j s_j)``.

    Returns ``states`` of shape (2^(d+1), d+1) with column 0 the center spin,
    and their probabilities.
    """
    if d > 20:
        raise ValueError(f"d={d} too large for enumeration (max 20)")
    states = _all_states(d + 1)
    s = states.astype(float)
    logw = K0 * s[:, 0] * s[:, 1:].sum(axis=1)
    w = np.exp(logw - logw.max())
    return states, w / w.sum()


def neighborhood_sampler(d: int, K0: float, M: int, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """M i.i.d. draws of (s0, s_Psi) by inverse CDF over the enumerated table."""
    rng = np.random.default_rng(rng)
    states, p = neighborhood_table(d, K0)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(M), side="right")
    draw = states[idx]
    return draw[:, 0].copy(), draw[:, 1:].copy()


def save_dataset(ds: SpinDataset, path, model: IsingModel | None = None, csv: bool = False) -> Path:
    """Write the binary ``ISNG1`` file plus a JSON sidecar (and optional CSV)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", ds.N, ds.M))
        fh.write(((ds.spins + 1) // 2).astype(np.uint8).tobytes(order="C"))
    side = {"N": ds.N, "M": ds.M, "provenance": ds.provenance}
    if model is not None:
        side["model"] = model.to_json()
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, default=_jsonable))
    if csv:
        np.savetxt(path.with_suffix(".csv"), ds.spins, fmt="%d", delimiter=",",
                   header=",".join(f"s{i}" for i in range(ds.N)), comments="")
    return path


def load_dataset(path) -> tuple[SpinDataset, IsingModel | None]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:5]!r}")
    N, M = struct.unpack("<QQ", raw[5:21])
    body = np.frombuffer(raw, dtype=np.uint8, offset=21)
    if body.size != N * M:
        raise ValueError(f"{path}: expected {N * M} spin bytes, found {body.size}")
    spins = body.reshape(M, N).astype(np.int8) * 2 - 1
    prov, model = {}, None
    side = path.with_suffix(path.suffix + ".json")
    if side.exists():
        obj = json.loads(side.read_text())
        prov = obj.get("provenance", {})
        if "model" in obj:
            model = IsingModel.from_json(obj["model"])
    return SpinDataset(spins, prov), model


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))
