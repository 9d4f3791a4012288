import numpy as np
import pytest

from dirnet.compressor import (CompressConfig, assemble_report, compress_layer, compress_network,
                               compression_rate, dense_equivalent_params, layer_report, lossless_config,
                               topology_summary)
from dirnet.errors import ConfigError
from dirnet.model import LSTM, VANILLA, LayerWeights, stack_gates, unstack_gates
from dirnet.synthetic import planted_layer

from conftest import tiny_model


def test_rate_small_case_exact():
    assert compression_rate(4, 4, 2, 0, 0)[0] == 32 / 24


def test_rate_full_projection_expands():
    assert compression_rate(7, 7, 7, 0, 0)[0] == pytest.approx(2 / 3)


def test_rate_650_units():
    assert compression_rate(650, 650, 65, 0, 0)[0] == pytest.approx(6.67, abs=0.05)


def test_rate_monotone_in_p_and_nnz_accounting():
    rates = [compression_rate(64, 48, p, 0, 0)[0] for p in range(1, 65)]
    assert np.all(np.diff(rates) < 0)
    n, n_in, p = 64, 48, 16
    full = p * n + p * n_in
    _, r_full = compression_rate(n, n_in, p, p * n, p * n_in)
    _, r_sparse = compression_rate(n, n_in, p, 100, 150)
    # by hand: dictionary p*n plus 1.5 units per stored code entry
    assert r_full == pytest.approx((n * n + n_in * n) / (p * n + 1.5 * full))
    assert r_sparse >= r_full
    with pytest.raises(ConfigError):
        compression_rate(4, 4, 0, 0, 0)


def test_gated_rate_reduces_to_stacked_count():
    r, _ = compression_rate(8, 8, 4, 0, 0, gates=4)
    assert r == pytest.approx(4 * 128 / (4 * 4 * 8 + 4 * 8 + 4 * 8))
    assert dense_equivalent_params(8, 8, 4, gates=4, gatewise=False, bias=False) == 192
    assert dense_equivalent_params(8, 8, 4, gates=4, gatewise=True, bias=True) == 4 * 4 * 24 + 32


def test_topology_summary_five_by_500():
    s = topology_summary([500] * 5, [25, 35, 45, 50, 55], LSTM)
    assert s["params_dense_equivalent"] == 1_270_000
    assert [r["p"] for r in s["layers"]] == [25, 35, 45, 50, 55]
    with pytest.raises(ConfigError):
        topology_summary([500, 500], [25])


def test_gate_stack_round_trip(rng):
    blocks = [rng.standard_normal((3, 5)) for _ in range(4)]
    out = unstack_gates(stack_gates(*blocks))
    for a, b in zip(blocks, out):
        assert np.array_equal(a, b)


def test_lossless_corner_vanilla(rng):
    n = 8
    layer = LayerWeights(rng.standard_normal((n, n)), rng.standard_normal((n, n)),
                         rng.standard_normal(n), VANILLA)
    cl, info = compress_layer(layer, lossless_config(n))
    assert cl.recon_err_h < 1e-6 and cl.recon_err_x < 1e-6
    assert info["shared_d"]
    rep = assemble_report([layer_report(cl, info)], VANILLA)
    assert rep["layers"][0]["rate_dense"] < 1


def test_lossless_corner_lstm_needs_separate_dictionaries(rng):
    n = 8
    layer = LayerWeights(rng.standard_normal((4 * n, n)), rng.standard_normal((4 * n, n)),
                         rng.standard_normal(4 * n), LSTM)
    cl, info = compress_layer(layer, lossless_config(n, shared_dict=False))
    assert not info["shared_d"]
    assert cl.recon_err_h < 1e-6 and cl.recon_err_x < 1e-6
    # the stacked gate rows come back in (i, o, f, g) order
    for a, b in zip(unstack_gates(cl.dense_w_h()), unstack_gates(layer.w_h)):
        np.testing.assert_allclose(a, b, atol=1e-9)


def _planted_run(seed, density):
    L = planted_layer(32, 8, density, seed=seed, x_density=0.15)
    layer = LayerWeights(L.w_h, L.w_x, np.zeros(32), VANILLA)
    cfg = CompressConfig(seed=seed, initial_p=16, lambda1=0.01, max_offset=0, drop_tol=1e-3)
    return compress_layer(layer, cfg)[0]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_planted_layer_recurrent_factor(seed):
    cl = _planted_run(seed, 0.25)
    assert 6 <= cl.p <= 10
    assert cl.recon_err_h < 0.05


@pytest.mark.xfail(reason="32 columns do not identify the planted atoms; the learned basis "
                          "spans w_x but is rotated, so a 15%-dense input code misses 5% error",
                   strict=False)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_planted_layer_input_factor(seed):
    cl = _planted_run(seed, 0.25)
    assert cl.recon_err_x < 0.05


def test_initial_p_too_large():
    layer = LayerWeights(np.eye(4), np.eye(4), np.zeros(4), VANILLA)
    with pytest.raises(ConfigError):
        compress_layer(layer, CompressConfig(initial_p=5, max_offset=0))


def test_config_validation():
    with pytest.raises(ConfigError):
        CompressConfig(dict_source="both")
    with pytest.raises(ConfigError):
        CompressConfig(shrink_factor=2.0)
    assert CompressConfig().replace(seed=3).seed == 3


def test_network_reports():
    one = tiny_model(VANILLA, widths=(8,), embed_dim=8)
    _, rep = compress_network(one, CompressConfig(max_offset=0))
    assert len(rep["layers"]) == 1 and rep["report_version"] == 1

    two = tiny_model(VANILLA, widths=(8, 8), embed_dim=8)
    cm, rep = compress_network(two, CompressConfig(max_offset=0))
    assert all(e["shared_d"] for e in rep["layers"])
    for key in ("nnz_h", "nnz_x", "params_original", "params_dense_equivalent"):
        assert rep["totals"][key] == sum(e[key] for e in rep["layers"])
    for e, cl in zip(rep["layers"], cm.layers):
        assert e["rate_dense"] == compression_rate(e["n"], e["n_in"], e["p"], 0, 0)[0]
        assert e["p"] == cl.p


def test_width_mismatch_falls_back_and_is_reported():
    m = tiny_model(LSTM, widths=(8, 8), embed_dim=5)
    _, rep = compress_network(m, CompressConfig(max_offset=0))
    assert rep["layers"][0]["shared_d"] is False
    assert rep["layers"][1]["shared_d"] is True


def test_compression_is_deterministic():
    m = tiny_model(LSTM, widths=(8, 8))
    a, ra = compress_network(m, CompressConfig(seed=4))
    b, rb = compress_network(m, CompressConfig(seed=4))
    assert ra == rb
    for x, y in zip(a.layers, b.layers):
        assert np.array_equal(x.dict_h.atoms, y.dict_h.atoms)
        assert x.z_h.equals(y.z_h) and x.z_x.equals(y.z_x)
        assert np.array_equal(x.offsets_h, y.offsets_h)
