"""Shared synthetic fixtures: datasets, adapters, distance instances."""

from __future__ import annotations

import numpy as np
import pytest

from loramix import adapters, corpus, mlp
from loramix.adapters import AdapterLayout, FlatAdapter, GramMatrix
from loramix.divergences import SENTINEL, DistanceMatrix, MetricKind


def make_dataset(dataset_id: str, vocab: int, n_tokens: int, seed: int,
                 concentration: float = 0.3) -> corpus.TokenizedDataset:
    """Dataset with its own random unigram distribution over the vocabulary."""
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.full(vocab, concentration))
    ids = rng.choice(vocab, size=n_tokens, p=probs)
    return corpus.TokenizedDataset.from_sequences(dataset_id, vocab, [ids])


def perturb_dataset(ds: corpus.TokenizedDataset, fraction: float, seed: int,
                    new_id: str) -> corpus.TokenizedDataset:
    """Copy with ``fraction`` of tokens replaced by uniform-random ids."""
    rng = np.random.default_rng(seed)
    ids = ds.flat_ids().copy()
    n_swap = int(round(fraction * ids.size))
    positions = rng.choice(ids.size, size=n_swap, replace=False)
    ids[positions] = rng.integers(0, ds.vocab_size, size=n_swap)
    return corpus.TokenizedDataset.from_sequences(new_id, ds.vocab_size, [ids])


def make_flat_adapter(adapter_id: str, layout: AdapterLayout, seed: int) -> FlatAdapter:
    rng = np.random.default_rng(seed)
    values = rng.normal(size=layout.total_params).astype(np.float32)
    return FlatAdapter(adapter_id, layout, values)


def small_layout(p: int = 16) -> AdapterLayout:
    assert p % 2 == 0
    half = p // 2
    return AdapterLayout((
        ("base.layers.0.attn.lora_A.weight", (2, half // 2)),
        ("base.layers.0.attn.lora_B.weight", (half // 2, 2)),
    ))


def random_bank(n: int, p: int, seed: int) -> adapters.AdapterBank:
    layout = AdapterLayout((("probe.weight", (p,)),))
    rng = np.random.default_rng(seed)
    flats = [FlatAdapter(f"a{k}", layout, rng.normal(size=p).astype(np.float32))
             for k in range(n)]
    return adapters.validate_bank(flats)


def random_distance_instance(n: int, seed: int, p: int = 32):
    """Self-masked random symmetric distances plus a PSD gram of matching ids."""
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0.1, 3.0, (n, n))
    vals = 0.5 * (vals + vals.T)
    np.fill_diagonal(vals, SENTINEL)
    ids = tuple(f"d{i}" for i in range(n))
    d = DistanceMatrix(MetricKind("js"), ids, vals, self_masked=True,
                       pair_evaluations=n * (n - 1) // 2)
    a = rng.normal(size=(n, p))
    g = a @ a.T
    gram = GramMatrix(ids, 0.5 * (g + g.T), total_params=p)
    return d, gram


def random_mlp_params(h: int, seed: int) -> mlp.MlpParameters:
    """Generic-position parameters (nonzero biases) for gradient checks."""
    rng = np.random.default_rng(seed)
    return mlp.MlpParameters(
        W1=rng.uniform(-1, 1, (h, 1)),
        b1=rng.uniform(-1, 1, h),
        ln1_gain=rng.uniform(0.5, 1.5, h),
        ln1_bias=rng.uniform(-0.5, 0.5, h),
        W2=rng.uniform(-1, 1, (h, h)) / np.sqrt(h),
        b2=rng.uniform(-1, 1, h),
        ln2_gain=rng.uniform(0.5, 1.5, h),
        ln2_bias=rng.uniform(-0.5, 0.5, h),
        W3=rng.uniform(-1, 1, (1, h)) / np.sqrt(h),
        b3=rng.uniform(-1, 1, 1),
    )


def paired_training_fixture(n: int = 8, p: int = 64, seed: int = 3):
    """Bank of dataset pairs: each adapter is duplicated across its pair and
    within-pair distances are far below cross-pair ones, so sharpening the
    softmin strictly improves reconstruction."""
    rng = np.random.default_rng(seed)
    ids = tuple(f"d{i}" for i in range(n))
    vals = np.full((n, n), 2.0) + rng.uniform(-0.05, 0.05, (n, n))
    vals = 0.5 * (vals + vals.T)
    for i in range(0, n, 2):
        vals[i, i + 1] = vals[i + 1, i] = 0.1
    np.fill_diagonal(vals, SENTINEL)
    d = DistanceMatrix(MetricKind("js"), ids, vals, self_masked=True,
                       pair_evaluations=n * (n - 1) // 2)
    base = rng.normal(size=(n // 2, p))
    stacked = np.repeat(base, 2, axis=0)
    g = stacked @ stacked.T
    gram = GramMatrix(ids, 0.5 * (g + g.T), total_params=p)
    return d, gram


@pytest.fixture
def tmp_bank(tmp_path):
    """Three distinct datasets plus matching small adapters on disk."""
    bank_dir = tmp_path / "bank"
    bank_dir.mkdir()
    layout = small_layout()
    for k in range(3):
        ds = make_dataset(f"task{k}", vocab=64, n_tokens=400, seed=10 + k)
        corpus.write_token_dataset(ds, bank_dir / f"task{k}.jsonl")
        adapters.save_adapter(make_flat_adapter(f"task{k}", layout, 50 + k),
                              bank_dir / f"task{k}.safetensors")
    return bank_dir
