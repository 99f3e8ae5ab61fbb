"""Synthetic data: exact inverse-CDF sampling over the table, systematic-scan
Gibbs sampling from the single-site full conditionals, and rejection-filtered
datasets that avoid a forbidden set of cells."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .faces import Face, smallest_face
from .model import Model, cell_counts, theta_to_probabilities

RNG_ALGORITHM = "numpy.random.Generator(PCG64)"


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    N: int
    seed: int = 0
    method: str = "exact"  # exact | gibbs
    burn_in: int = 1000
    thinning: int = 10

    def __post_init__(self):
        if self.method not in ("exact", "gibbs"):
            raise ValueError("method must be 'exact' or 'gibbs'")
        if self.N < 0:
            raise ValueError("N must be non-negative")
        if self.method == "gibbs" and (self.burn_in < 1 or self.thinning < 1):
            raise ValueError("burn_in and thinning must be at least 1")

    def to_json(self) -> dict:
        return {**asdict(self), "rng": RNG_ALGORITHM}


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.uint64(seed % 2**64))


def sample_exact(model: Model, theta, config: SamplerConfig) -> np.ndarray:
    """I.i.d. draws by inverting the cumulative cell distribution."""
    p = theta_to_probabilities(theta, model)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    u = _rng(config.seed).random(config.N)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    return model.cells[idx].astype(np.int16)


def _site_terms(model: Model, theta: np.ndarray):
    """For each vertex: (levels of v, other-support positions, other-support levels, theta) per term."""
    out = []
    for v in range(model.p):
        terms = []
        for k, s in enumerate(model.j_supports):
            if v in s and theta[k] != 0.0:
                j = model.j_list[k]
                others = tuple(u for u in s if u != v)
                terms.append((j[v], others, tuple(j[u] for u in others), float(theta[k])))
        out.append(terms)
    return out


def sample_gibbs(model: Model, theta, config: SamplerConfig) -> np.ndarray:
    """Systematic-scan Gibbs sampler; one draw kept every ``thinning`` sweeps after burn-in."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.n_params,):
        raise ValueError(f"theta has shape {theta.shape}, model has {model.n_params} parameters")
    rng = _rng(config.seed)
    terms = _site_terms(model, theta)
    levels = model.levels
    x = [0] * model.p
    out = np.empty((config.N, model.p), dtype=np.int16)
    n_sweeps = config.burn_in + config.N * config.thinning
    u_all = rng.random((n_sweeps, model.p))
    kept = 0
    for sweep in range(n_sweeps):
        u_row = u_all[sweep]
        for v in range(model.p):
            w = [0.0] * levels[v]
            for a, others, lev, th in terms[v]:
                if all(x[o] == l for o, l in zip(others, lev)):
                    w[a] += th
            m = max(w)
            e = np.exp(np.array(w) - m)
            c = np.cumsum(e)
            x[v] = min(int(np.searchsorted(c, u_row[v] * c[-1], side="right")), levels[v] - 1)
        done = sweep + 1 - config.burn_in
        if done > 0 and done % config.thinning == 0:
            out[kept] = x
            kept += 1
    return out


def sample(model: Model, theta, config: SamplerConfig) -> np.ndarray:
    if config.method == "exact":
        return sample_exact(model, theta, config)
    return sample_gibbs(model, theta, config)


@dataclass
class FaceDataset:
    samples: np.ndarray
    face: Face
    acceptance_rate: float
    draws: int


def make_face_dataset(model: Model, theta, config: SamplerConfig, forbidden: Iterable[int],
                      *, max_rejection: float = 0.99, batch: int | None = None) -> FaceDataset:
    """Sample until N observations avoid every forbidden cell index.

    Gives up once more than ``max_rejection`` of the draws have been rejected
    after at least one full batch.  The resulting counts vanish on the
    forbidden cells and the certified smallest face is returned alongside.
    """
    forbidden = np.unique(np.asarray(list(forbidden), dtype=np.int64))
    bad = np.zeros(model.n_cells, dtype=bool)
    bad[forbidden] = True
    if bad.all():
        raise SamplerError("every cell is forbidden")
    batch = batch or max(config.N, 100)
    kept, draws, rep = [], 0, 0
    have = 0
    while have < config.N:
        cfg = SamplerConfig(batch, config.seed + rep, config.method, config.burn_in, config.thinning)
        x = sample(model, theta, cfg)
        ok = ~bad[model.cell_index(x)] if len(x) else np.zeros(0, dtype=bool)
        kept.append(x[ok])
        have += int(ok.sum())
        draws += batch
        rep += 1
        if 1 - have / draws > max_rejection:
            raise SamplerError(
                f"rejection rate {1 - have / draws:.4f} exceeds {max_rejection} after {draws} draws; "
                "the forbidden set carries almost all probability mass")
    x = np.concatenate(kept)[: config.N]
    face = smallest_face(cell_counts(x, model), model)
    return FaceDataset(x, face, have / draws, draws)
