import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairfl.aggregation import (
    AggregatorState,
    aggregate_weighted,
    fairfed_update,
    fedavg_weights,
    fqfedavg_update,
    krum,
    robust_aggregate,
    trimmed_mean,
    trimmed_median,
)
from fairfl.errors import AggregationError

from oracles import brute_krum, brute_median, brute_trimmed_mean


def _state(mech, n=2, **kw):
    return AggregatorState.initial(mech, {i: 1 for i in range(n)}, **kw)


# ----------------------------------------------------------------- fedavg


def test_fedavg_examples():
    assert fedavg_weights({"a": 1, "b": 1}) == {"a": 0.5, "b": 0.5}
    assert fedavg_weights({"a": 3, "b": 1}) == {"a": 0.75, "b": 0.25}
    with pytest.raises(AggregationError):
        fedavg_weights({})
    with pytest.raises(AggregationError):
        fedavg_weights({"a": 0})


@given(st.dictionaries(st.integers(0, 50), st.integers(1, 10_000), min_size=1))
def test_fedavg_sums_to_one(sizes):
    assert sum(fedavg_weights(sizes).values()) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- fairfed


def test_fairfed_uniform_gap_keeps_weights():
    st0 = AggregatorState.initial("fairfed", {0: 1, 1: 3, 2: 6})
    st1 = fairfed_update(st0, {0: 0.1, 1: 0.5, 2: 0.1}, global_dp=0.3)
    for i in range(3):
        assert st1.normalized[i] == pytest.approx(st0.normalized[i], abs=1e-12)
        assert st1.unnormalized[i] == pytest.approx(st0.unnormalized[i], abs=1e-12)


def test_fairfed_two_clients_favours_smaller_gap():
    # gaps (0.1, 0.3), equal priors 0.5, beta 1.5: raw = (0.5 + 0.15, 0.5 - 0.15) -> (0.65, 0.35)
    st1 = fairfed_update(_state("fairfed"), {0: 0.2, 1: 0.4}, global_dp=0.1, beta=1.5)
    assert st1.normalized[0] == pytest.approx(0.65, abs=1e-12)
    assert st1.normalized[1] == pytest.approx(0.35, abs=1e-12)


def test_fairfed_zero_beta_is_inert():
    st0 = AggregatorState.initial("fairfed", {0: 2, 1: 5})
    st1 = fairfed_update(st0, {0: -0.9, 1: 0.7}, global_dp=0.0, beta=0.0)
    assert st1.unnormalized == st0.unnormalized


def test_fairfed_clamps_and_falls_back():
    st1 = fairfed_update(_state("fairfed"), {0: 0.0, 1: 1.0}, global_dp=0.0, beta=100.0)
    assert st1.normalized == {0: 1.0, 1: 0.0}
    assert not st1.fell_back
    # a single selected client whose raw weight is already zero: everything collapses
    st2 = AggregatorState("fairfed", unnormalized={0: 0.0, 1: 1.0}, normalized={})
    st3 = fairfed_update(st2, {0: 0.3}, global_dp=0.0)
    assert st3.fell_back
    assert st3.normalized == {0: 1.0}


def test_fairfed_unselected_weights_frozen():
    st0 = AggregatorState.initial("fairfed", {0: 1, 1: 1, 2: 1})
    st1 = fairfed_update(st0, {0: 0.1, 1: 0.4}, global_dp=0.2)
    assert st1.unnormalized[2] == st0.unnormalized[2]
    assert set(st1.normalized) == {0, 1}


def test_fairfed_requires_defined_dp():
    with pytest.raises(AggregationError):
        fairfed_update(_state("fairfed"), {0: None, 1: 0.1}, global_dp=0.0)


# --------------------------------------------------------------- f-qFedAvg


def test_fq_derived_pair():
    # (1 - 0.5)^3 = 0.125 -> 1 : 0.125 -> (8/9, 1/9)
    st1 = fqfedavg_update(_state("f_qfedavg"), {0: 0.0, 1: 0.5}, q=2)
    assert st1.normalized[0] == pytest.approx(8 / 9, abs=1e-12)
    assert st1.normalized[1] == pytest.approx(1 / 9, abs=1e-12)


def test_fq_uniform_f_keeps_weights():
    st0 = AggregatorState.initial("f_qfedavg", {0: 1, 1: 2, 2: 7})
    st1 = fqfedavg_update(st0, {0: 0.3, 1: 0.3, 2: 0.3})
    for i in range(3):
        assert st1.normalized[i] == pytest.approx(st0.normalized[i], abs=1e-12)


def test_fq_large_q_concentrates_on_fairer_client():
    ws = [fqfedavg_update(_state("f_qfedavg"), {0: 0.1, 1: 0.2}, q=q).normalized[0] for q in (1, 2, 4, 8)]
    assert all(a < b for a, b in zip(ws, ws[1:]))
    assert ws[0] > 0.5


def test_fq_clamps_f_at_one():
    st1 = fqfedavg_update(_state("f_qfedavg"), {0: 1.0, 1: 0.0})
    assert st1.normalized[0] > 0
    assert st1.normalized[0] < 1e-12


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(1, 6),
    data=st.data(),
    mech=st.sampled_from(["fairfed", "f_qfedavg"]),
)
def test_weight_updates_stay_normalized(n, data, mech):
    sizes = {i: data.draw(st.integers(1, 100)) for i in range(n)}
    state = AggregatorState.initial(mech, sizes)
    for _ in range(3):
        dps = {i: data.draw(st.floats(-1, 1)) for i in range(n)}
        if mech == "fairfed":
            state = fairfed_update(state, dps, data.draw(st.floats(-1, 1)), sizes=sizes)
        else:
            state = fqfedavg_update(state, {i: abs(v) for i, v in dps.items()}, sizes=sizes)
        assert sum(state.normalized.values()) == pytest.approx(1.0, abs=1e-12)
        assert min(state.normalized.values()) >= 0


# --------------------------------------------------------- weighted average


def test_weighted_single_client_exact():
    u = np.array([0.1, 0.7, -3.3])
    out = aggregate_weighted(np.array([5.0, 5.0, 5.0]), {7: u}, {7: 1.0})
    assert out.tobytes() == u.tobytes()


def test_weighted_fixed_point():
    g = np.array([1.0, -2.0])
    out = aggregate_weighted(g, {0: g.copy(), 1: g.copy()}, {0: 0.3, 1: 0.7})
    np.testing.assert_array_equal(out, g)


def test_weighted_hand_arithmetic():
    g = np.array([1.0, 1.0])
    out = aggregate_weighted(g, {0: g + [4, 0], 1: g + [0, 4]}, {0: 0.25, 1: 0.75})
    np.testing.assert_allclose(out, g + [1.0, 3.0], atol=1e-15)


def test_weighted_errors():
    g = np.zeros(2)
    with pytest.raises(AggregationError):
        aggregate_weighted(g, {0: np.zeros(3)}, {0: 1.0})
    with pytest.raises(AggregationError):
        aggregate_weighted(g, {0: g, 1: g}, {0: 0.5, 1: 0.6})
    with pytest.raises(AggregationError):
        aggregate_weighted(g, {0: g}, {1: 1.0})


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-100, 100))
def test_weighted_affine_equivariance(seed, shift):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=4)
    ups = {i: rng.normal(size=4) for i in range(3)}
    w = rng.random(3)
    w = {i: v for i, v in enumerate(w / w.sum())}
    w[2] = 1.0 - w[0] - w[1]
    c = np.full(4, shift)
    a = aggregate_weighted(g, ups, w) + c
    b = aggregate_weighted(g + c, {i: u + c for i, u in ups.items()}, w)
    np.testing.assert_allclose(a, b, atol=1e-9 * (1 + abs(shift)))


# ------------------------------------------------------------------ robust


def test_trimmed_mean_examples():
    ups = [np.array([1.0]), np.array([2.0]), np.array([3.0]), np.array([100.0])]
    assert trimmed_mean(ups, 1)[0] == 2.5
    rng = np.random.default_rng(0)
    arr = rng.normal(size=(5, 3))
    np.testing.assert_allclose(trimmed_mean(list(arr), 0), arr.mean(axis=0), atol=1e-15)
    with pytest.raises(AggregationError):
        trimmed_mean(ups, 2)


def test_krum_examples():
    v = np.array([1.0, 1.0])
    ups = {3: v.copy(), 1: v.copy(), 2: v.copy(), 0: np.array([50.0, -50.0])}
    cid, vec = krum(ups, 0)
    assert cid == 1
    np.testing.assert_array_equal(vec, v)
    cid, _ = krum({i: v.copy() for i in (5, 2, 9, 4)}, 0)
    assert cid == 2
    with pytest.raises(AggregationError):
        krum(ups, 1)


def _instances(count=200):
    rng = np.random.default_rng(1234)
    for _ in range(count):
        n = int(rng.integers(1, 8))
        dim = int(rng.integers(1, 6))
        # integer-valued grids make ties common, which exercises the tie-breaks
        if rng.random() < 0.3:
            arr = rng.integers(-3, 4, size=(n, dim)).astype(float)
        else:
            arr = rng.normal(size=(n, dim)) * 10
        yield n, arr


def test_robust_aggregators_match_brute_force():
    checked = {"mean": 0, "median": 0, "krum": 0}
    for n, arr in _instances():
        vecs = [list(r) for r in arr]
        for k in range(0, (n + 1) // 2):
            if n > 2 * k:
                np.testing.assert_allclose(trimmed_mean(list(arr), k), brute_trimmed_mean(vecs, k), rtol=0, atol=1e-12)
                checked["mean"] += 1
        assert trimmed_median(list(arr)).tolist() == brute_median(vecs)
        checked["median"] += 1
        ids = list(np.random.default_rng(n).permutation(20)[:n])
        by_id = {int(i): arr[j] for j, i in enumerate(ids)}
        for f in range(0, n):
            if n > 2 * f + 2:
                cid, vec = krum(by_id, f)
                assert cid == brute_krum({i: list(v) for i, v in by_id.items()}, f)
                assert vec.tobytes() == by_id[cid].tobytes()
                checked["krum"] += 1
    assert min(checked.values()) > 50


def test_robust_aggregate_dispatch():
    ups = {i: np.array([float(i)]) for i in range(5)}
    assert robust_aggregate(_state("trimmed_mean", k=1), ups)[0][0] == 2.0
    assert robust_aggregate(_state("trimmed_median"), ups)[0][0] == 2.0
    out, cid = robust_aggregate(_state("krum", f=1), ups)
    assert out[0] == float(cid)
    with pytest.raises(AggregationError):
        robust_aggregate(_state("fedavg"), ups)


def test_state_validation():
    with pytest.raises(AggregationError):
        AggregatorState("median")
    with pytest.raises(AggregationError):
        AggregatorState("f_qfedavg", q=0)
