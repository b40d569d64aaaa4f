#!/usr/bin/env python3
"""
Tests for correlated Hamiltonian chains: forward recursion, bridge sampling and replay
"""

import sys

import numpy as np
import pytest

from ensemble.chain_sampler import (
    HamiltonianChain, bridge_coeffs, bridge_oracle_error, conditioning_oracle, endpoint_embed, iter_chain,
    markov_defect, ou_chain, sample_bridge_chain, verify_chain_covariance,
)
from tensor_core.hamiltonian import sample_hamiltonian


def test_single_step_correlation():
    print("\n1. 🔗 One-step chain correlation")
    chain = ou_chain(10, 3, 1, 0.2, seed=3)
    corr = np.corrcoef(chain[0].coefficients.ravel(), chain[1].coefficients.ravel())[0, 1]
    assert abs(corr - 0.8) <= 4.0 / np.sqrt(1000)
    assert chain.K == 1 and len(chain) == 2


@pytest.mark.parametrize("epsilon", [0.05, 0.3, 0.7, 0.0, 1.0])
def test_bridge_closed_form_matches_conditioning(epsilon):
    for K in range(2, 9):
        assert bridge_oracle_error(K, epsilon) <= 1e-12


def test_bridge_coefficient_limits():
    c = bridge_coeffs(1, 2, 1.0)
    assert (c.mean_prev, c.mean_end, c.noise_scale) == (0.0, 0.0, 1.0)
    c = bridge_coeffs(2, 5, 0.0)
    assert c.mean_prev == pytest.approx(3 / 4) and c.mean_end == pytest.approx(1 / 4)
    assert c.noise_scale == 0.0
    # close to the constant-chain limit
    tiny = bridge_coeffs(4, 5, 1e-9)
    assert tiny.mean_prev + tiny.mean_end == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        bridge_coeffs(0, 5, 0.1)
    with pytest.raises(ValueError):
        conditioning_oracle(5, 5, 0.1)
    with pytest.raises(ValueError):
        bridge_coeffs(1, 5, 1.5)


def test_bridge_chain_covariance():
    print("\n2. 🌉 Bridge chain covariance (K=6, eps=0.3)")
    chains = [sample_bridge_chain(8, 3, 6, 0.3, seed=100 + r) for r in range(20)]
    check = verify_chain_covariance(chains)
    print(f"   max |error| {check.max_abs_error:.4f}, max z {check.max_z:.2f}, n={check.samples}")
    assert check.passed
    assert check.samples == 20 * 8 ** 3
    assert markov_defect(check.empirical) <= 0.05


def test_forward_chain_covariance():
    chains = [ou_chain(6, 3, 4, 0.2, seed=r) for r in range(20)]
    assert verify_chain_covariance(chains).passed


def test_covariance_check_needs_samples():
    with pytest.raises(ValueError):
        verify_chain_covariance(ou_chain(2, 2, 2, 0.1, seed=0))
    with pytest.raises(ValueError):
        verify_chain_covariance([ou_chain(4, 3, 2, 0.1, seed=0), ou_chain(4, 3, 3, 0.1, seed=1)])


@pytest.mark.parametrize("builder", [ou_chain, sample_bridge_chain])
def test_manifest_replay_is_bit_exact(builder, tmp_path):
    chain = builder(5, 3, 4, 0.25, seed=8)
    path = chain.save_manifest(tmp_path / "chain.json")
    replayed = HamiltonianChain.from_manifest(path)
    assert replayed.mode == chain.mode
    for original, again in zip(chain.hams, replayed.hams):
        assert np.array_equal(original.coefficients, again.coefficients)
    streamed = list(iter_chain(chain.manifest()))
    assert np.array_equal(streamed[-1].coefficients, chain[-1].coefficients)


def test_zero_step_chain_is_constant():
    forward = ou_chain(5, 3, 3, 0.0, seed=2)
    assert all(np.array_equal(h.coefficients, forward[0].coefficients) for h in forward.hams)

    bridge = sample_bridge_chain(5, 3, 3, 0.0, seed=2)
    for h in bridge.hams:
        assert np.allclose(h.coefficients, bridge[0].coefficients, atol=1e-12)


def test_endpoint_embedding_and_markov_defect():
    H0 = sample_hamiltonian(6, 3, seed=1)
    H = sample_hamiltonian(6, 3, seed=2)
    end = endpoint_embed(H0, H, 3, 0.1)
    expected = 0.9 ** 3 * H0.coefficients + np.sqrt(1 - 0.9 ** 6) * H.coefficients
    assert np.allclose(end.coefficients, expected)
    with pytest.raises(ValueError):
        endpoint_embed(H0, sample_hamiltonian(5, 3, seed=3), 3, 0.1)

    idx = np.arange(5)
    exact = 0.7 ** np.abs(idx[:, None] - idx[None, :])
    assert markov_defect(exact) <= 1e-14
    squared = 0.7 ** (np.abs(idx[:, None] - idx[None, :]) ** 2)
    assert markov_defect(squared) > 0.1


def test_chain_validation():
    H = sample_hamiltonian(4, 3, seed=0)
    with pytest.raises(ValueError):
        HamiltonianChain(hams=[H], epsilon=0.1)
    with pytest.raises(ValueError):
        HamiltonianChain(hams=[H, sample_hamiltonian(5, 3, seed=1)], epsilon=0.1)
    with pytest.raises(ValueError):
        ou_chain(4, 3, 0, 0.1, seed=0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
