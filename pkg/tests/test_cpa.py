import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spsca import aes
from spsca.cpa import (CPA, CpaKernel, PowerModel, StreamingPearson, attack, attack_arrays,
                       hypothesis, hypothesis_matrix, pearson, pearson_ex)
from spsca.design import Plain, generate_baseline, uniform_config
from spsca.leakage import CellType
from spsca.simulate import SimOptions, generate_traces

from conftest import KEY, hd_oracle_traces

LRK = aes.key_schedule(KEY)[10]


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_pearson_degenerate_and_errors():
    assert pearson_ex([1, 1, 1], [1, 2, 3]) == (0.0, True)
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])


def test_streaming_matches_two_pass():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.0, 100_000)
    y = 0.3 * x + rng.normal(-7.0, 5.0, 100_000)
    acc = StreamingPearson()
    for s in range(0, len(x), 7919):
        acc.update(x[s:s + 7919], y[s:s + 7919])
    assert abs(acc.result() - pearson(x, y)) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=2, max_size=60))
def test_pearson_bounded(pairs):
    x, y = map(np.array, zip(*pairs))
    assert abs(pearson(x, y)) <= 1 + 1e-12


def test_hypothesis_examples():
    k = 0x3C
    ct = np.zeros(16, dtype=np.uint8)
    ct[5] = aes.sbox(0) ^ k
    assert hypothesis("HW", ct, 5, k) == 0
    m = aes.shift_rows_origin(5)
    ct2 = np.arange(16, dtype=np.uint8)
    v = aes.inv_sbox(int(ct2[5]) ^ k)
    ct2[m] = v
    assert hypothesis(PowerModel.HD, ct2, 5, k) == 0
    with pytest.raises(ValueError):
        hypothesis("HD", ct2, 16, 0)
    with pytest.raises(ValueError):
        PowerModel.parse("XX")


def test_hypothesis_matches_round_trace():
    # the true-key HD hypothesis is the flip-flop HD between D (ct) and Q (pre state)
    rng = np.random.default_rng(3)
    for _ in range(20):
        pt = rng.integers(0, 256, 16, dtype=np.uint8)
        rt = aes.encrypt(KEY, pt)
        pre = np.frombuffer(rt.pre_final_state, np.uint8)
        ct = np.frombuffer(rt.ciphertext, np.uint8)
        for j in range(16):
            m = aes.shift_rows_origin(j)
            assert hypothesis("HD", ct, j, LRK[j]) == aes.hd(ct[m], pre[m])
            assert hypothesis("HW", ct, j, LRK[j]) == aes.hw(pre[m])


def test_hypothesis_matrix_consistent():
    rng = np.random.default_rng(4)
    cts = rng.integers(0, 256, (10, 16), dtype=np.uint8)
    for model in ("HD", "HW"):
        H = hypothesis_matrix(model, cts, 7)
        for t in range(10):
            for k in (0, 17, 255):
                assert H[t, k] == hypothesis(model, cts[t], 7, k)


def test_per_byte_oracle_gives_unit_correlation():
    ts = hd_oracle_traces(n=300, seed=1)
    for j in range(16):
        p = hypothesis_matrix("HD", ts.ciphertexts, j)[:, LRK[j]].astype(float)
        res = attack_arrays(ts.ciphertexts, p, "HD", LRK)
        assert res.scores.pcc[j, LRK[j]] == pytest.approx(1.0, abs=1e-12)
        assert res.recovered_key[j] == LRK[j]


def test_summed_oracle_recovers_key():
    res = attack(hd_oracle_traces(n=3000, seed=2), "HD")
    assert res.success and not res.degenerate
    assert res.cipher_key.hex() == KEY
    assert res.report()["bytes"][0]["correct"] is True


@pytest.mark.parametrize("n", [500, 7000])
def test_direct_and_binned_paths_agree(n):
    ts = generate_traces(generate_baseline(6, 1), None, KEY, n, SimOptions(noise_sigma=2, seed=3))
    direct, _ = CpaKernel(ts.ciphertexts, ts.power, "HD", binned_min=10**9).scores()
    binned, _ = CpaKernel(ts.ciphertexts, ts.power, "HD", binned_min=0).scores()
    assert np.max(np.abs(direct - binned)) < 1e-10
    idx = np.sort(np.random.default_rng(0).choice(n, n // 2, replace=False))
    d2, _ = CpaKernel(ts.ciphertexts, ts.power, "HD", binned_min=10**9).scores(idx)
    b2, _ = CpaKernel(ts.ciphertexts, ts.power, "HD", binned_min=0).scores(idx)
    assert np.max(np.abs(d2 - b2)) < 1e-10


@pytest.mark.parametrize("model", ["HD", "HW"])
def test_kernel_matches_explicit_pearson(model):
    ts = generate_traces(generate_baseline(8, 2), None, KEY, 400, SimOptions(seed=5))
    pcc, _ = CpaKernel(ts.ciphertexts, ts.power, model).scores()
    for j in (0, 9):
        H = hypothesis_matrix(model, ts.ciphertexts, j).astype(float)
        for k in (0, 100, LRK[j]):
            assert pcc[j, k] == pytest.approx(pearson(H[:, k], ts.power), abs=1e-10)


def test_affine_invariance():
    ts = generate_traces(generate_baseline(5, 3), None, KEY, 800, SimOptions(noise_sigma=5, seed=8))
    base = attack(ts).recovered_key
    for a, b in [(3.0, 1e4), (-0.5, 7.0), (1e-3, -2.0)]:
        assert attack(ts.with_power(a * ts.power + b)).recovered_key == base


def test_constant_power_is_degenerate():
    ts = generate_traces(uniform_config(Plain(CellType.HVT)), None, KEY, 500, SimOptions(seed=1))
    res = attack(ts)
    assert res.degenerate and not res.success
    assert not CpaKernel(ts.ciphertexts, ts.power).succeeds(np.arange(500), LRK)


def test_shuffled_power_is_chance():
    ts = generate_traces(generate_baseline(8, 4), None, KEY, 400, SimOptions(seed=9))
    rng = np.random.default_rng(10)
    hits, reps = 0, 150
    for _ in range(reps):
        res = attack(ts.with_power(rng.permutation(ts.power)))
        hits += sum(a == b for a, b in zip(res.recovered_key, LRK))
    trials = reps * 16
    mean = trials / 256
    assert abs(hits - mean) <= 4 * np.sqrt(trials * (1 / 256) * (255 / 256)) + 1


def test_estimator_interface(oracle_pool):
    est = CPA(model="HD").fit(oracle_pool.ciphertexts, oracle_pool.power)
    assert est.last_round_key_ == LRK.tobytes()
    assert est.cipher_key_.hex() == KEY
    pred = est.predict(oracle_pool.ciphertexts[:5])
    assert pred.shape == (5, 16)
    assert np.array_equal(pred.sum(axis=1), oracle_pool.power[:5])
    assert est.get_params() == {"model": "HD"}
    with pytest.raises(ValueError):
        CPA().predict(oracle_pool.ciphertexts)
    with pytest.raises(ValueError):
        CPA().fit(oracle_pool.ciphertexts, oracle_pool.power[:-1])


def test_report_json(oracle_pool):
    import json
    doc = json.loads(attack(oracle_pool).dumps())
    assert doc["format"] == "spsca-attack-report"
    assert doc["recovered_last_round_key"] == LRK.tobytes().hex()
    assert len(doc["bytes"]) == 16 and len(doc["bytes"][3]["top"]) == 5
