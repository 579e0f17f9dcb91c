"""Synthetic feature corpora for end-to-end pipeline exercises.

Rows mimic the statistical shape of scaled static-malware features without
any real binaries: a small set of planted informative features carries a
class-conditional mean shift, a large block of nuisance features shares
high-variance latent factors (which is what makes variance-seeking
projections genuinely lossy here), the rest is heavy-tailed idiosyncratic
noise, and every feature gets its own affine placement so train-only
scaling has real work to do.

A covariate-shift transform (per-feature affine distortion plus zeroing a
fraction of features) stands in for obfuscation-induced drift at
evaluation time.
"""

from dataclasses import dataclass

import numpy as np

from .store import DatasetStore

DEFAULT_DIMS = 2381
DEFAULT_INFORMATIVE = 40
_N_FACTORS = 24


@dataclass
class CorpusInfo:
    informative: np.ndarray  # planted feature indices, ascending
    seed: int


def make_corpus(n: int, seed: int, n_dims: int = DEFAULT_DIMS,
                n_informative: int = DEFAULT_INFORMATIVE,
                tag: str = "synth") -> tuple[DatasetStore, CorpusInfo]:
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n).astype(np.int8)

    informative = np.sort(rng.choice(n_dims, size=n_informative, replace=False))

    # heavy-tailed idiosyncratic noise everywhere
    x = rng.standard_t(df=3.0, size=(n, n_dims))

    # shared latent factors over a large nuisance block: dominant variance
    # directions that carry no label signal
    noise_pool = np.setdiff1d(np.arange(n_dims), informative)
    block = rng.choice(noise_pool, size=min(len(noise_pool), n_dims // 2),
                       replace=False)
    factors = rng.normal(size=(n, _N_FACTORS))
    loadings = rng.normal(scale=3.0, size=(_N_FACTORS, len(block)))
    x[:, block] += factors @ loadings

    # planted signal: sparse spikes, the shape of hashed indicator features.
    # Class 1 fires feature j with probability fire_p[j], class 0 rarely;
    # a rotation smears spikes across dimensions, a per-feature split does not.
    fire_p = rng.uniform(0.15, 0.35, size=n_informative)
    spikes = rng.uniform(4.0, 8.0, size=n_informative)
    prob = np.where(y[:, None] == 1, fire_p[None, :], 0.01)
    fired = rng.uniform(size=(n, n_informative)) < prob
    x[:, informative] = rng.normal(size=(n, n_informative)) + fired * spikes[None, :]

    # arbitrary per-feature placement; the scaler has to undo this
    scale = np.exp(rng.uniform(np.log(0.2), np.log(5.0), size=n_dims))
    offset = rng.normal(scale=3.0, size=n_dims)
    x = x * scale + offset

    digests = [rng.bytes(32) for _ in range(n)]
    store = DatasetStore(features=x.astype(np.float32), labels=y,
                         sha256=digests, source_tags=[tag] * n)
    return store, CorpusInfo(informative=informative, seed=seed)


def apply_covariate_shift(store: DatasetStore, seed: int,
                          zero_fraction: float = 0.1,
                          tag_suffix: str = "-shifted") -> DatasetStore:
    """Distort evaluation features: per-feature affine warp plus zeroing a
    random fraction of features, the way packing and rewriting collapse
    whole feature groups."""
    rng = np.random.default_rng(seed)
    d = store.n_dims
    gain = rng.uniform(0.6, 1.5, size=d)
    bias = rng.normal(scale=0.5, size=d) * store.features.std(axis=0)
    x = store.features.astype(np.float64) * gain + bias
    zeroed = rng.choice(d, size=int(round(zero_fraction * d)), replace=False)
    x[:, zeroed] = 0.0
    return DatasetStore(features=x.astype(np.float32), labels=store.labels,
                        sha256=store.sha256,
                        source_tags=[t + tag_suffix for t in store.source_tags])
