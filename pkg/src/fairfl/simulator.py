"""Round orchestration for fair federated training, with or without an attacker."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import aggregation as agg
from .attack import craft_replacement, estimate_weight, inverse_debias
from .config import ExperimentConfig
from .data import (
    Dataset,
    PartitionConfig,
    SynthConfig,
    generate_synthetic,
    load_csv,
    partition,
    train_eval_split,
)
from .errors import ConfigError, EstimationError
from .local import DebiasConfig, train_local
from .metrics import FairnessReport, evaluate, global_fairness
from .model import Family, ModelSpec, SgdConfig, init_params

log = logging.getLogger(__name__)

# spawn-key tags that keep the seed streams of different roles apart
_SELECT, _CLIENT, _ATTACK, _INIT, _DATA = 1, 2, 3, 4, 5


def seed_stream(master_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))


def client_seed(master_seed: int, training_round: int, rnd: int, client: int) -> np.random.SeedSequence:
    return seed_stream(master_seed, _CLIENT, training_round, rnd, client)


@dataclass
class RoundRecord:
    training_round: int
    round: int
    selected: list[int]
    global_report: FairnessReport
    local_reports: dict[int, FairnessReport] = field(default_factory=dict)
    weights: dict[int, float] | None = None
    forced: list[int] = field(default_factory=list)
    fallbacks: list[int] = field(default_factory=list)
    weight_fallback: bool = False
    krum_selected: int | None = None
    attack: dict | None = None
    params: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self, include_params: bool = False) -> dict:
        g = self.global_report
        out = {
            "training_round": self.training_round,
            "round": self.round,
            "selected": list(self.selected),
            "forced": list(self.forced),
            "accuracy": g.accuracy,
            "dp_signed": g.dp_signed,
            "dp_abs": g.dp_abs,
            "dp_undefined": g.dp_undefined,
            "global": g.as_dict(),
            "local_dp": {str(i): r.dp_signed for i, r in sorted(self.local_reports.items())},
            "weights": None if self.weights is None else {str(i): w for i, w in sorted(self.weights.items())},
            "weight_fallback": self.weight_fallback,
            "debias_fallbacks": list(self.fallbacks),
            "krum_selected": self.krum_selected,
            "attack": self.attack,
        }
        if include_params and self.params is not None:
            out["params"] = [float(v) for v in self.params]
        return out


def model_spec(cfg: ExperimentConfig, input_dim: int) -> ModelSpec:
    fam = Family(cfg.model.family)
    return ModelSpec(fam, input_dim, cfg.model.hidden_dim if fam is Family.MLP1 else None)


def synth_config(cfg: ExperimentConfig) -> SynthConfig:
    s = cfg.data.synth
    return SynthConfig(
        n_samples=s.n_samples,
        input_dim=s.input_dim,
        group0_fraction=s.group0_fraction,
        bias_strength=s.bias_strength,
        correlation=s.correlation,
        label_noise=s.label_noise,
        seed=s.seed if s.seed is not None else cfg.seed,
        n_proxy=s.n_proxy,
        drop_sensitive_feature=s.drop_sensitive_feature,
    )


def prepare_data(cfg: ExperimentConfig, base_dir: Path | None = None) -> tuple[list[Dataset], Dataset]:
    """Build client shards and the held-out evaluation set described by ``cfg.data``."""
    d = cfg.data
    data_seed = d.synth.seed if d.synth.seed is not None else cfg.seed
    if d.source == "csv":
        path = Path(d.csv_path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        full = load_csv(path)
    else:
        full = generate_synthetic(synth_config(cfg))
    split_seed = seed_stream(data_seed, _DATA, 0)
    train, eval_set = train_eval_split(full, d.eval_fraction, seed=split_seed)
    n_clients = cfg.federation.n_clients
    if n_clients == 1:
        return [train], eval_set
    if len(train) < n_clients:
        raise ConfigError("federation.n_clients", f"{n_clients} clients but only {len(train)} training samples")
    shards = partition(
        train,
        PartitionConfig(
            n_clients=n_clients,
            scheme=d.partition.scheme,
            alpha=d.partition.alpha,
            seed=seed_stream(data_seed, _DATA, 1),
        ),
    )
    return list(shards), eval_set


class _Attacker:
    """Attack state carried across the attack rounds of one experiment."""

    def __init__(self, cfg: ExperimentConfig, ids: list[int]):
        self.plan = cfg.attack
        self.ids = ids
        self.rounds = set(self.plan.attack_rounds)
        self.goal: np.ndarray | None = None
        self.table = None
        self.finetune: dict = {}
        self.w_total: float | None = None  # latest estimate of the attackers' combined weight
        self.pending = None  # (theta_before, w_used) from the last attack round

    def effective_weight(self) -> tuple[float, str]:
        if self.plan.use_estimation and self.w_total is not None:
            return self.w_total, "latest"
        return len(self.ids) * self.plan.w_init, "init"


def _select(cfg: ExperimentConfig, tr: int, rnd: int) -> list[int]:
    n = cfg.federation.n_clients
    k = min(n, cfg.federation.n_selected)
    rng = np.random.default_rng(seed_stream(cfg.seed, _SELECT, tr, rnd))
    return sorted(int(i) for i in rng.choice(n, size=k, replace=False))


def run_experiment(
    cfg: ExperimentConfig,
    shards: list[Dataset],
    eval_set: Dataset,
    init: np.ndarray | None = None,
    keep_params: bool = False,
) -> list[RoundRecord]:
    """Run ``training_rounds`` x ``rounds`` communication rounds and record each one."""
    fed = cfg.federation
    if len(shards) != fed.n_clients:
        raise ConfigError("federation.n_clients", f"expected {fed.n_clients} shards, got {len(shards)}")
    if len(eval_set) == 0:
        raise ConfigError("data", "evaluation set is empty")
    spec = model_spec(cfg, eval_set.input_dim)
    sgd = SgdConfig(cfg.local.learning_rate, cfg.local.epochs, cfg.local.batch_size, 0)
    debias = DebiasConfig(cfg.local.debias.mechanism, cfg.local.debias.step, cfg.local.debias.mu)
    sizes = {i: len(s) for i, s in enumerate(shards)}
    a = cfg.aggregator
    theta = init_params(spec, seed=seed_stream(cfg.seed, _INIT)) if init is None else np.asarray(init, float).copy()

    attacker_ids = cfg.resolved_attackers()
    attacker = _Attacker(cfg, attacker_ids) if cfg.attack is not None else None
    if attacker is not None:
        atk_shard = Dataset.concat([shards[i] for i in attacker_ids])
        if not atk_shard.has_both_groups():
            raise ConfigError("attack.attacker_ids", "attacker data must contain both sensitive groups")

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    records: list[RoundRecord] = []
    try:
        for tr in range(1, fed.training_rounds + 1):
            state = agg.AggregatorState.initial(a.mechanism, sizes, beta=a.beta, q=a.q, k=a.k, f=a.f)
            for rnd in range(1, fed.rounds + 1):
                selected = _select(cfg, tr, rnd)
                attacking = attacker is not None and tr == 1 and rnd in attacker.rounds
                forced = []
                if attacking and attacker.plan.force_selection:
                    forced = [i for i in attacker.ids if i not in selected]
                    selected = sorted(selected + forced)
                active_attackers = [i for i in attacker.ids if i in selected] if attacking else []
                benign = [i for i in selected if i not in active_attackers]

                local_reports = {i: evaluate(spec, theta, shards[i]) for i in selected}

                def work(i, theta=theta, tr=tr, rnd=rnd):
                    seed = client_seed(cfg.seed, tr, rnd, i)
                    return i, train_local(spec, theta, shards[i], sgd.with_seed(seed), debias)

                results = pool.map(work, benign) if pool else map(work, benign)
                updates, fallbacks = {}, []
                for i, (params, fell_back) in results:
                    updates[i] = params
                    if fell_back:
                        fallbacks.append(i)

                attack_meta = None
                if active_attackers:
                    upload, attack_meta = _attack_round(cfg, spec, sgd, attacker, active_attackers, atk_shard, theta, tr, rnd)
                    for i in active_attackers:
                        updates[i] = upload
                    attack_meta["forced"] = forced

                weights, krum_sel = None, None
                if a.mechanism in agg.WEIGHTED:
                    if a.mechanism == "fedavg":
                        weights = agg.fedavg_weights({i: sizes[i] for i in selected})
                    elif a.mechanism == "fairfed":
                        pooled = global_fairness([local_reports[i] for i in selected])
                        if pooled.dp_undefined:
                            weights = state.weights_for(selected, sizes)
                        else:
                            local_dp = _neutral_fill(local_reports, signed=True)
                            state = agg.fairfed_update(state, local_dp, pooled.dp_signed, sizes=sizes)
                            weights = state.normalized
                    else:
                        state = agg.fqfedavg_update(state, _neutral_fill(local_reports, signed=False), sizes=sizes)
                        weights = state.normalized
                    new_theta = agg.aggregate_weighted(theta, updates, weights)
                else:
                    new_theta, krum_sel = agg.robust_aggregate(state, updates)

                if attacker is not None and active_attackers:
                    attacker.pending = (theta.copy(), attack_meta["w_effective"])
                theta = new_theta
                records.append(
                    RoundRecord(
                        training_round=tr,
                        round=rnd,
                        selected=selected,
                        global_report=evaluate(spec, theta, eval_set),
                        local_reports=local_reports,
                        weights=dict(weights) if weights is not None else None,
                        forced=forced,
                        fallbacks=sorted(fallbacks),
                        weight_fallback=bool(state.fell_back) if a.mechanism in ("fairfed", "f_qfedavg") else False,
                        krum_selected=krum_sel,
                        attack=attack_meta,
                        params=theta.copy() if keep_params else None,
                    )
                )
    finally:
        if pool is not None:
            pool.shutdown()
    return records


def _neutral_fill(reports: dict[int, FairnessReport], signed: bool) -> dict[int, float]:
    """Local DP per client; clients with an undefined DP get the mean of the defined ones."""
    vals = {i: (r.dp_signed if signed else r.dp_abs) for i, r in reports.items()}
    defined = [v for v in vals.values() if v is not None]
    fill = sum(defined) / len(defined) if defined else 0.0
    return {i: (fill if v is None else v) for i, v in vals.items()}


def _attack_round(cfg, spec, sgd, attacker: _Attacker, active: list[int], shard: Dataset, theta, tr, rnd):
    plan = attacker.plan
    meta: dict = {"attackers": list(active), "estimation_failed": False, "estimate": None}
    # the global just received lets the attacker estimate the weight its previous upload got
    if attacker.pending is not None and plan.use_estimation:
        before, w_used = attacker.pending
        try:
            attacker.w_total = estimate_weight(w_used, attacker.goal, before, theta)
            meta["estimate"] = attacker.w_total
        except EstimationError:
            meta["estimation_failed"] = True
            log.warning("weight estimation failed in round %d; keeping w_init", rnd)
        attacker.pending = None
    if attacker.goal is None:
        seed = seed_stream(cfg.seed, _ATTACK, tr, rnd)
        ft = SgdConfig(plan.finetune_lr, plan.finetune_epochs, sgd.batch_size, seed)
        res = inverse_debias(
            spec, theta, shard, plan.gamma, ft, local_cfg=sgd.with_seed(seed), stop_at_local_bias=plan.stop_at_local_bias
        )
        attacker.goal = res.theta_goal
        attacker.table = res.table
        attacker.finetune = {"steps": res.steps, "reached_target": res.reached_target}
    w_eff, source = attacker.effective_weight()
    # identical uploads crafted for the combined weight split the delta equally
    upload = craft_replacement(attacker.goal, theta, w_eff, plan.scale_cap)
    meta.update(
        {
            "w_effective": w_eff,
            "w_source": source,
            "upload_max_delta": float(np.max(np.abs(upload - theta))),
            "lambda": attacker.table.as_dict(),
            "finetune": attacker.finetune,
        }
    )
    return upload, meta


def final_record(records: list[RoundRecord]) -> RoundRecord:
    return records[-1]


def run_attack_protocol(cfg: ExperimentConfig, shards=None, eval_set=None, keep_params: bool = False):
    """Run an attacked experiment and return the records just before and after the attack.

    The attack schedule must hold two rounds: the first uses w_init, the
    second the weight estimated from the first. Returns ``(pre, post, records)``
    where ``pre`` is the last round before the first attack round.
    """
    if cfg.attack is None or len(cfg.attack.attack_rounds or []) != 2:
        raise ConfigError("attack.attack_rounds", "the two-phase attack needs exactly two attack rounds")
    if shards is None or eval_set is None:
        shards, eval_set = prepare_data(cfg)
    records = run_experiment(cfg, shards, eval_set, keep_params=keep_params)
    first = min(cfg.attack.attack_rounds)
    last = max(cfg.attack.attack_rounds)
    in_first = [r for r in records if r.training_round == 1]
    pre = in_first[first - 2] if first >= 2 else None
    post = in_first[last - 1]
    return pre, post, records
