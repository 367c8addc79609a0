"""Shared fixtures. Eigendecompositions dominate the suite's runtime, so they
are computed once per session and persisted through the on-disk cache; set
ETHBATH_TEST_CACHE to a directory to reuse them across pytest invocations.
"""

import functools
import os

import numpy as np
import pytest

from ethbath import spectra
from ethbath.hamiltonian import (
    CouplingSpec,
    SpinChainParams,
    SystemParams,
    build_bath_hamiltonian,
    build_total_hamiltonian,
    model_spec_key,
)

OMEGA0 = 1.525
KAPPA = 0.15


def _make_params(L: int, preset: str) -> SpinChainParams:
    maker = SpinChainParams.chaotic if preset == "chaotic" else SpinChainParams.integrable
    return maker(L)


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    env = os.environ.get("ETHBATH_TEST_CACHE")
    if env:
        os.makedirs(env, exist_ok=True)
        return env
    return str(tmp_path_factory.mktemp("eigcache"))


@pytest.fixture(scope="session")
def bath_eig(cache_dir):
    """Factory: (L, preset) -> EigenSystem of the bare bath chain."""

    @functools.lru_cache(maxsize=None)
    def make(L: int, preset: str) -> spectra.EigenSystem:
        params = _make_params(L, preset)
        key = model_spec_key(SystemParams(OMEGA0), params, None) + "#bath"
        return spectra.cached_diagonalize(build_bath_hamiltonian(params), cache_dir, key)

    return make


@pytest.fixture(scope="session")
def total_eig(cache_dir):
    """Factory: (L, preset) -> EigenSystem of qubit + bath with the standard coupling."""

    @functools.lru_cache(maxsize=None)
    def make(L: int, preset: str) -> spectra.EigenSystem:
        params = _make_params(L, preset)
        system = SystemParams(OMEGA0)
        coupling = CouplingSpec(kappa=KAPPA)
        key = model_spec_key(system, params, coupling) + "#total"
        h = build_total_hamiltonian(system, params, coupling)
        return spectra.cached_diagonalize(h, cache_dir, key)

    return make


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260826)
