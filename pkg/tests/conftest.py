"""Shared fixtures.

The expensive artifacts (standard bench, trained autoencoder, cloak and
purify populations) are session-scoped and shared between the module tests
and the acceptance suite. Everything is deterministic, so an opt-in disk
cache (CLOAKLAB_TEST_CACHE=<dir>) can short-circuit reruns while iterating;
leave it unset for an honest full run.
"""
from __future__ import annotations

import os
import pickle
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from cloaklab import (
    Autoencoder,
    OptConfig,
    PerceptualMetric,
    cloak,
    default_styles,
    purify,
    select_target_style,
    train,
)
from cloaklab.datagen import standard_bench
from cloaklab.nn import Rng, derive_seed

settings.register_profile(
    "det",
    derandomize=True,
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("det")

TRAIN_PARAMS = dict(epochs=40, lr=0.002, batch=8)
PIPELINE_ARTISTS = (
    "hist_romantic",
    "hist_realist",
    "indie_textured",
    "indie_smooth",
    "aux_textured_a",
)


def _cached(key, builder):
    cache_dir = os.environ.get("CLOAKLAB_TEST_CACHE")
    if not cache_dir:
        return builder()
    path = Path(cache_dir) / f"{key}.pkl"
    if path.is_file():
        with open(path, "rb") as f:
            return pickle.load(f)
    value = builder()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        pickle.dump(value, f)
    return value


@pytest.fixture(scope="session")
def bench():
    return standard_bench(0)


@pytest.fixture(scope="session")
def trained_ae(bench):
    def build():
        model = Autoencoder.create(8, seed=derive_seed(0, 0xAE))
        model, history = train(
            model, bench.training_corpus(), rng=Rng(derive_seed(0, 0x7A)), **TRAIN_PARAMS
        )
        return model, history

    return _cached("trained_ae", build)


@pytest.fixture(scope="session")
def metric(trained_ae):
    model, _ = trained_ae
    return PerceptualMetric.from_autoencoder(model)


@pytest.fixture(scope="session")
def style_pool():
    return default_styles()


@pytest.fixture(scope="session")
def artist_targets(bench, metric, style_pool):
    """Selected target style per pipeline artist (probe = first train image)."""
    pool = list(style_pool.values())
    out = {}
    for name in PIPELINE_ARTISTS:
        a = bench.artist(name)
        target = select_target_style(a.spec.style, pool, metric, a.train[0])
        out[name] = target
    return out


@pytest.fixture(scope="session")
def cloak30(bench, trained_ae, metric, artist_targets):
    """Default-config cloaks of hist_romantic's full train split (30 images)."""
    model, _ = trained_ae

    def build():
        a = bench.artist("hist_romantic")
        return [
            cloak(x, artist_targets["hist_romantic"], model, metric, OptConfig(seed=0 ^ i))
            for i, x in enumerate(a.train)
        ]

    return _cached("cloak30", build)


@pytest.fixture(scope="session")
def purified30(trained_ae, metric, cloak30):
    """Purifications of the 30 cloaks."""
    model, _ = trained_ae

    def build():
        return [
            purify(r.output, model, metric, OptConfig(seed=0 ^ i))
            for i, r in enumerate(cloak30)
        ]

    return _cached("purified30", build)


@pytest.fixture(scope="session")
def purified_clean_textured(bench, trained_ae, metric):
    """Default-config purifications of 20 clean textured (non-pretraining) images."""
    model, _ = trained_ae

    def build():
        a = bench.artist("indie_textured")
        return [
            purify(x, model, metric, OptConfig(seed=0 ^ i))
            for i, x in enumerate(a.train[:20])
        ]

    return _cached("purified_clean_textured", build)


@pytest.fixture(scope="session")
def pipeline10(bench, trained_ae, metric, artist_targets, cloak30, purified30):
    """cloak -> purify over 10 train images for each pipeline artist.

    hist_romantic reuses the first ten results of the 30-image populations.
    Returns {artist: (originals, cloaked OptResults, purified OptResults)}.
    """
    model, _ = trained_ae

    def build_one(name):
        a = bench.artist(name)
        originals = list(a.train[:10])
        cloaked = [
            cloak(x, artist_targets[name], model, metric, OptConfig(seed=0 ^ i))
            for i, x in enumerate(originals)
        ]
        purified = [
            purify(r.output, model, metric, OptConfig(seed=0 ^ i))
            for i, r in enumerate(cloaked)
        ]
        return originals, cloaked, purified

    out = {}
    for name in PIPELINE_ARTISTS:
        if name == "hist_romantic":
            a = bench.artist(name)
            out[name] = (list(a.train[:10]), cloak30[:10], purified30[:10])
        else:
            out[name] = _cached(f"pipeline10_{name}", lambda n=name: build_one(n))
    return out
