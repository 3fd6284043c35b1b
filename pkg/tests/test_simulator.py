import numpy as np
import pytest

import fairfl.simulator as sim
from fairfl.config import parse_config
from fairfl.errors import ConfigError
from fairfl.model import SgdConfig, sgd_train
from fairfl.simulator import client_seed, model_spec, prepare_data, run_attack_protocol, run_experiment

SMALL = {
    "data": {"synth": {"n_samples": 2000}},
    "federation": {"n_clients": 4, "rounds": 4},
    "local": {"epochs": 2},
}


def _cfg(**over):
    raw = {k: dict(v) for k, v in SMALL.items()}
    for k, v in over.items():
        if isinstance(v, dict) and k in raw:
            raw[k].update(v)
        else:
            raw[k] = v
    return parse_config(raw)


def _stream(records):
    return [r.as_dict(include_params=True) for r in records]


def test_single_client_equals_centralized_training():
    cfg = _cfg(
        federation={"n_clients": 1, "selection_fraction": 1.0, "rounds": 2},
        local={"debias": {"mechanism": "none"}},
        aggregator={"mechanism": "fedavg"},
    )
    shards, ev = prepare_data(cfg)
    recs = run_experiment(cfg, shards, ev, keep_params=True)
    spec = model_spec(cfg, ev.input_dim)
    theta = np.zeros(spec.param_count)
    for rnd in (1, 2):
        sgd = SgdConfig(cfg.local.learning_rate, cfg.local.epochs, cfg.local.batch_size, client_seed(cfg.seed, 1, rnd, 0))
        theta = sgd_train(spec, theta, shards[0], np.ones(len(shards[0])), sgd)
    assert recs[-1].params.tobytes() == theta.tobytes()


@pytest.mark.parametrize("mech", ["fedavg", "fairfed", "f_qfedavg", "trimmed_median"])
def test_runs_are_deterministic(mech):
    cfg = _cfg(local={"debias": {"mechanism": "fairbatch"}}, aggregator={"mechanism": mech}, attack={"attacker_ids": [1]})
    shards, ev = prepare_data(cfg)
    assert _stream(run_experiment(cfg, shards, ev, keep_params=True)) == _stream(
        run_experiment(cfg, shards, ev, keep_params=True)
    )


def test_threads_match_serial():
    cfg = _cfg(local={"debias": {"mechanism": "fairreg"}}, aggregator={"mechanism": "fairfed"}, attack={"attacker_ids": [2]})
    shards, ev = prepare_data(cfg)
    serial = run_experiment(cfg, shards, ev, keep_params=True)
    threaded = run_experiment(cfg.model_copy(update={"threads": 3}), shards, ev, keep_params=True)
    assert _stream(serial) == _stream(threaded)


def test_no_attack_conservation():
    base = _cfg(aggregator={"mechanism": "fairfed"}, federation={"rounds": 6})
    attacked = _cfg(aggregator={"mechanism": "fairfed"}, federation={"rounds": 6}, attack={"attacker_ids": [0]})
    shards, ev = prepare_data(base)
    a = run_experiment(base, shards, ev, keep_params=True)
    b = run_experiment(attacked, shards, ev, keep_params=True)
    first = min(attacked.attack.attack_rounds)
    assert first == 5
    for ra, rb in zip(a[: first - 1], b[: first - 1]):
        assert ra.as_dict(include_params=True) == rb.as_dict(include_params=True)
    assert a[first - 1].params.tobytes() != b[first - 1].params.tobytes()


def test_record_invariants():
    cfg = _cfg(aggregator={"mechanism": "f_qfedavg"}, local={"debias": {"mechanism": "fairbatch"}}, attack={"attacker_ids": [3]})
    shards, ev = prepare_data(cfg)
    recs = run_experiment(cfg, shards, ev, keep_params=True)
    spec = model_spec(cfg, ev.input_dim)
    assert [r.round for r in recs] == [1, 2, 3, 4]
    for r in recs:
        assert r.params.shape == (spec.param_count,)
        assert sum(r.weights.values()) == pytest.approx(1.0, abs=1e-12)
        assert len(r.selected) >= cfg.federation.n_selected
    attacked = [r for r in recs if r.attack]
    assert [r.round for r in attacked] == [3, 4]
    assert attacked[0].attack["w_source"] == "init" and attacked[0].attack["w_effective"] == 1.0
    assert attacked[1].attack["w_source"] == "latest"
    assert all(3 in r.selected for r in attacked)


def test_attackers_force_join():
    cfg = _cfg(attack={"attacker_ids": [0, 1, 2, 3], "attack_rounds": [2]})
    shards, ev = prepare_data(cfg)
    rec = run_experiment(cfg, shards, ev)[1]
    assert rec.selected == [0, 1, 2, 3]
    assert sorted(rec.forced + [i for i in rec.selected if i not in rec.forced]) == [0, 1, 2, 3]
    assert len(rec.forced) == 2


def test_exact_dynamics_replacement(monkeypatch):
    """With frozen benign clients the second attack lands on the goal."""
    goals = []
    real = sim.inverse_debias

    def capture(*args, **kw):
        res = real(*args, **kw)
        goals.append(res.theta_goal)
        return res

    monkeypatch.setattr(sim, "train_local", lambda spec, theta, shard, cfg, deb: (np.array(theta, copy=True), False))
    monkeypatch.setattr(sim, "inverse_debias", capture)
    cfg = _cfg(
        federation={"selection_fraction": 1.0}, aggregator={"mechanism": "fedavg"}, attack={"attacker_ids": [2]}
    )
    pre, post, recs = run_attack_protocol(cfg, keep_params=True)
    assert len(goals) == 1
    assert pre.round == 2 and post.round == 4
    # fedavg over 4 equal shards gives the attacker weight 1/4; estimation recovers it exactly
    assert recs[3].attack["estimate"] == pytest.approx(0.25, rel=1e-9)
    assert np.max(np.abs(post.params - goals[0])) <= 1e-6


def test_two_training_rounds_reset_and_record():
    cfg = _cfg(federation={"training_rounds": 2, "rounds": 2}, aggregator={"mechanism": "fairfed"})
    shards, ev = prepare_data(cfg)
    recs = run_experiment(cfg, shards, ev)
    assert [(r.training_round, r.round) for r in recs] == [(1, 1), (1, 2), (2, 1), (2, 2)]


def test_shard_count_must_match():
    cfg = _cfg()
    shards, ev = prepare_data(cfg)
    with pytest.raises(ConfigError):
        run_experiment(cfg, shards[:-1], ev)


def test_attack_protocol_needs_two_rounds():
    with pytest.raises(ConfigError):
        run_attack_protocol(_cfg(attack={"attacker_ids": [0], "attack_rounds": [4]}))
