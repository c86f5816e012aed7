"""Experiment engine: dataset generation, training sweeps over demonstration
budgets and methods, online test-time evaluation, and metric tables.

Every (method, budget) cell owns an isolated RNG stream derived by hashing
the master seed with the cell coordinates, so cells can run in any order or
in parallel and still reproduce byte-identically. Completed cells (model and
metrics on disk with a matching config hash) are skipped on re-runs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from jsonschema import Draft202012Validator

from . import action_embed, bnn, clustering, counterfactual, hybrid, jobshop, lstm, mlp, serialize
from .bnn import TrainConfig
from .encoding import candidate_distribution, policy_input, rank_candidates
from .errors import ConfigError, DataError, UsageError
from .jobshop import DemoStep, Demonstration

METHODS = (
    "nn",
    "kmeans_nn",
    "gmm_nn",
    "bnn",
    "lstm",
    "blstm",
    "hybrid",
    "cf_nn",
    "cf_bnn",
    "cf_hybrid",
    "action_embed_cf",
)

DEFAULT_BUDGETS = [3, 9, 15, 150, 1500]
SEED_ENV_VAR = "HLFD_SEED"

CSV_HEADER = "method,budget,top1_mean,top1_stderr,top3_mean,top3_stderr,n_episodes"

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["dataset", "test"],
    "additionalProperties": False,
    "properties": {
        "dataset": {
            "type": "object",
            "required": ["seed"],
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer"},
                "budgets": {
                    "type": "array",
                    "items": {"type": "integer", "exclusiveMinimum": 0},
                    "minItems": 1,
                },
                "policy_mix": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0},
                    "minItems": 3,
                    "maxItems": 3,
                },
                "num_tasks": {"type": "integer", "minimum": 1},
                "num_agents": {"type": "integer", "minimum": 1},
            },
        },
        "methods": {
            "type": "array",
            "items": {"enum": list(METHODS)},
            "minItems": 1,
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "default": {"type": "object"},
                "per_method": {"type": "object"},
            },
        },
        "test": {
            "type": "object",
            "required": ["seed"],
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer"},
                "episodes": {"type": "integer", "minimum": 1},
                "policy_mix": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0},
                    "minItems": 3,
                    "maxItems": 3,
                },
                "mixture_demonstrators": {"type": "boolean"},
            },
        },
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "topk": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            },
        },
        "cluster_k": {"type": "integer", "minimum": 1},
    },
}

# method-specific training defaults; config per_method entries override these
METHOD_TRAIN_DEFAULTS: dict[str, dict] = {
    "nn": {"epochs": 60, "minibatch_size": 8},
    "kmeans_nn": {"epochs": 60, "minibatch_size": 8},
    "gmm_nn": {"epochs": 60, "minibatch_size": 8},
    "bnn": {"epochs": 60, "minibatch_size": 8},
    "hybrid": {"epochs": 60, "minibatch_size": 8},
    "lstm": {"epochs": 20, "minibatch_size": 1},
    "blstm": {"epochs": 20, "minibatch_size": 1},
    "cf_nn": {"epochs": 12, "minibatch_size": 32, "lr_omega": 0.0},
    "cf_bnn": {"epochs": 12, "minibatch_size": 32},
    "cf_hybrid": {"epochs": 12, "minibatch_size": 32},
    "action_embed_cf": {"epochs": 12, "minibatch_size": 32},
}


def validate_config(raw: dict) -> None:
    validator = Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        details = "; ".join(
            f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
            for e in errors
        )
        raise ConfigError(f"invalid experiment config: {details}")


def normalize_config(raw: dict) -> dict:
    """Validate, apply defaults and the seed env override, sort budgets."""
    validate_config(raw)
    cfg = json.loads(json.dumps(raw))  # deep copy
    ds = cfg["dataset"]
    ds.setdefault("budgets", list(DEFAULT_BUDGETS))
    ds.setdefault("policy_mix", [1.0, 1.0, 1.0])
    ds.setdefault("num_tasks", 20)
    ds.setdefault("num_agents", 2)
    if sorted(ds["budgets"]) != ds["budgets"]:
        raise ConfigError("dataset/budgets: budgets must be ascending")
    cfg.setdefault("methods", list(METHODS))
    cfg.setdefault("train", {})
    cfg["train"].setdefault("default", {})
    cfg["train"].setdefault("per_method", {})
    t = cfg["test"]
    t.setdefault("episodes", 200)
    t.setdefault("policy_mix", list(ds["policy_mix"]))
    t.setdefault("mixture_demonstrators", False)
    cfg.setdefault("metrics", {})
    cfg["metrics"].setdefault("topk", [1, 3])
    cfg.setdefault("cluster_k", 3)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        ds["seed"] = int(env_seed)
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def derive_seed(master: int, *parts) -> int:
    text = ":".join([str(master), *map(str, parts)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") % (2**62)


def train_config_for(cfg: dict, method: str, budget: int) -> TrainConfig:
    fields = dict(METHOD_TRAIN_DEFAULTS.get(method, {}))
    fields.update(cfg["train"]["default"])
    fields.update(cfg["train"]["per_method"].get(method, {}))
    if "hidden_sizes" in fields:
        fields["hidden_sizes"] = tuple(fields["hidden_sizes"])
    fields["seed"] = derive_seed(cfg["dataset"]["seed"], method, budget)
    return TrainConfig(**fields)


# ---------------------------------------------------------------------------
# dataset plumbing


class RunPaths:
    def __init__(self, out_dir: str | Path):
        self.root = Path(out_dir)
        self.datasets = self.root / "datasets"
        self.models = self.root / "models"
        self.metrics = self.root / "metrics"
        self.traces = self.root / "traces"
        for p in (self.root, self.datasets, self.models, self.metrics, self.traces):
            p.mkdir(parents=True, exist_ok=True)

    def dataset(self, budget: int) -> Path:
        return self.datasets / f"budget_{budget}.jsonl"

    def testset(self) -> Path:
        return self.datasets / "testset.jsonl"

    def model(self, method: str, budget: int) -> Path:
        return self.models / f"{method}_{budget}.json"

    def cell_metrics(self, method: str, budget: int) -> Path:
        return self.metrics / f"{method}_{budget}.json"

    def trace(self, method: str, budget: int) -> Path:
        return self.traces / f"{method}_{budget}.jsonl"

    def table(self) -> Path:
        return self.root / "metrics.csv"

    def runlog(self) -> Path:
        return self.root / "runlog.jsonl"


def cmd_generate(cfg: dict, paths: RunPaths) -> dict[int, Path]:
    """Write one dataset file per budget plus the shared test set; returns
    the per-budget paths and prints per-policy counts."""
    ds = cfg["dataset"]
    out = {}
    for budget in ds["budgets"]:
        path = paths.dataset(budget)
        demos = jobshop.generate_demonstrations(
            budget,
            ds["policy_mix"],
            seed=derive_seed(ds["seed"], "dataset", budget),
            num_tasks=ds["num_tasks"],
            num_agents=ds["num_agents"],
            id_prefix="train",
        )
        jobshop.save_demonstrations(path, demos)
        counts = {p: sum(1 for d in demos if d.hidden_policy == p) for p in jobshop.POLICIES}
        print(f"budget {budget}: {len(demos)} schedules  " + "  ".join(f"{k}={v}" for k, v in counts.items()))
        out[budget] = path
    test_path = paths.testset()
    episodes = generate_test_episodes(cfg)
    jobshop.save_demonstrations(test_path, episodes)
    counts = {p: sum(1 for d in episodes if d.hidden_policy == p) for p in jobshop.POLICIES}
    print(f"test: {len(episodes)} episodes  " + "  ".join(f"{k}={v}" for k, v in counts.items()))
    return out


def generate_test_episodes(cfg: dict) -> list[Demonstration]:
    t, ds = cfg["test"], cfg["dataset"]
    gen = (
        jobshop.generate_mixture_demonstrations
        if t["mixture_demonstrators"]
        else jobshop.generate_demonstrations
    )
    return gen(
        t["episodes"],
        t["policy_mix"],
        seed=derive_seed(t["seed"], "testset"),
        num_tasks=ds["num_tasks"],
        num_agents=ds["num_agents"],
        id_prefix="test",
    )


def audit_train_test_separation(train_demos, test_demos) -> None:
    train_ids = {d.demonstrator_id for d in train_demos}
    test_ids = {d.demonstrator_id for d in test_demos}
    overlap = train_ids & test_ids
    if overlap:
        raise DataError(f"test demonstrators leaked into training data: {sorted(overlap)[:5]}")


# ---------------------------------------------------------------------------
# training


def train_method(method: str, demos: list[Demonstration], tc: TrainConfig, cluster_k: int) -> dict:
    """Train one method; returns the model payload (without bookkeeping)."""
    if method == "nn":
        theta, curve = bnn.train_homogeneous(demos, tc)
        return {"kind": "nn", "network": serialize.network_to_dict(theta), "loss_curve": curve}
    if method == "bnn":
        theta, table, curve = bnn.train_concurrent(demos, tc)
        return {
            "kind": "bnn",
            "network": serialize.network_to_dict(theta),
            "embeddings": serialize.embeddings_to_dict(table),
            "loss_curve": curve,
        }
    if method == "hybrid":
        theta, table, curve = bnn.train_concurrent(demos, tc)
        base_tc = replace(tc, seed=derive_seed(tc.seed, "baseline"))
        base, base_curve = bnn.train_homogeneous(demos, base_tc)
        return {
            "kind": "hybrid",
            "network": serialize.network_to_dict(theta),
            "embeddings": serialize.embeddings_to_dict(table),
            "baseline_network": serialize.network_to_dict(base),
            "loss_curve": curve,
            "baseline_loss_curve": base_curve,
        }
    if method == "kmeans_nn":
        model, nets = clustering.train_clustered_nns(demos, cluster_k, tc)
        return {
            "kind": "kmeans_nn",
            "cluster": {"kind": "kmeans", "centroids": model.centroids.tolist()},
            "networks": [serialize.network_to_dict(n) for n in nets],
        }
    if method == "gmm_nn":
        model, theta = clustering.train_gmm_augmented_nn(demos, cluster_k, tc)
        return {
            "kind": "gmm_nn",
            "cluster": {
                "kind": "gmm",
                "centroids": model.centroids.tolist(),
                "weights": model.weights.tolist(),
                "variances": model.variances.tolist(),
            },
            "network": serialize.network_to_dict(theta),
        }
    if method in ("lstm", "blstm"):
        bayes = method == "blstm"
        params, table, curve = lstm.train_bptt(demos, tc, bayesian=bayes)
        doc = {"kind": method, "lstm": lstm_to_dict(params), "loss_curve": curve}
        if bayes:
            doc["embeddings"] = serialize.embeddings_to_dict(table)
        return doc
    if method in ("cf_nn", "cf_bnn"):
        theta, table, curve = counterfactual.train_pairwise_bnn(demos, tc)
        doc = {"kind": method, "network": serialize.network_to_dict(theta), "loss_curve": curve}
        if method == "cf_bnn":
            doc["embeddings"] = serialize.embeddings_to_dict(table)
        return doc
    if method == "cf_hybrid":
        theta, table, curve = counterfactual.train_pairwise_bnn(demos, tc)
        base_tc = replace(tc, seed=derive_seed(tc.seed, "baseline"), lr_omega=0.0)
        base, _, base_curve = counterfactual.train_pairwise_bnn(demos, base_tc)
        return {
            "kind": "cf_hybrid",
            "network": serialize.network_to_dict(theta),
            "embeddings": serialize.embeddings_to_dict(table),
            "baseline_network": serialize.network_to_dict(base),
            "loss_curve": curve,
            "baseline_loss_curve": base_curve,
        }
    if method == "action_embed_cf":
        trans_tc = replace(tc, seed=derive_seed(tc.seed, "transition"), epochs=max(tc.epochs, 10))
        psi, table, trans_curve = action_embed.train_transition(demos, trans_tc)
        substituted = action_embed.substitute_embeddings(demos, table)
        theta, omega_table, curve = counterfactual.train_pairwise_bnn(substituted, tc)
        return {
            "kind": "action_embed_cf",
            "network": serialize.network_to_dict(theta),
            "embeddings": serialize.embeddings_to_dict(omega_table),
            "transition_network": serialize.network_to_dict(psi),
            "action_embeddings": {str(k): v.tolist() for k, v in sorted(table.items())},
            "loss_curve": curve,
            "transition_loss_curve": trans_curve,
        }
    raise UsageError(f"unknown method {method!r}")


def lstm_to_dict(params: lstm.LstmParams) -> dict:
    return {
        name: getattr(params, name).tolist()
        for name in ("w_i", "w_f", "w_o", "w_g", "b_i", "b_f", "b_o", "b_g", "w_out", "b_out")
    }


def lstm_from_dict(doc: dict) -> lstm.LstmParams:
    return lstm.LstmParams(
        *(np.asarray(doc[name], dtype=np.float64)
          for name in ("w_i", "w_f", "w_o", "w_g", "b_i", "b_f", "b_o", "b_g", "w_out", "b_out"))
    )


def cmd_train(cfg: dict, paths: RunPaths, method: str, budget: int) -> Path:
    """Train one cell; skipped when a model with a matching config hash
    already exists."""
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}")
    chash = config_hash(cfg)
    model_path = paths.model(method, budget)
    if model_path.exists():
        existing = serialize.load_model(model_path)
        if existing.get("config_hash") == chash:
            return model_path
    data_path = paths.dataset(budget)
    if not data_path.exists():
        raise UsageError(f"dataset for budget {budget} not found; run generate first")
    demos = jobshop.load_demonstrations(data_path)
    tc = train_config_for(cfg, method, budget)
    payload = train_method(method, demos, tc, cfg["cluster_k"])
    curve = payload.pop("loss_curve", None)
    doc = {
        "kind": payload.pop("kind"),
        "method": method,
        "budget": budget,
        "config_hash": chash,
        "train_config": asdict(tc),
        **payload,
    }
    serialize.save_model(model_path, doc)
    if curve is not None:
        with open(paths.runlog(), "a", encoding="utf-8") as fh:
            fh.write(
                serialize.dumps(
                    {"event": "train", "method": method, "budget": budget, "loss_curve": curve}
                )
                + "\n"
            )
    return model_path


# ---------------------------------------------------------------------------
# online evaluation

EpisodeRunner = Callable[[Demonstration], list[dict]]
# an episode runner returns one record per step:
#   {"ranking": [...], "predictor_used": optional str}


def _tc_from_doc(doc: dict) -> TrainConfig:
    fields = dict(doc["train_config"])
    fields["hidden_sizes"] = tuple(fields["hidden_sizes"])
    return TrainConfig(**fields)


def _slot_ranker(theta: mlp.NetworkParams, num_slots: int):
    def rank(step: DemoStep, omega: np.ndarray | None) -> list[int]:
        logits = bnn.slot_logits(theta, step, num_slots, omega)
        probs = candidate_distribution(logits, step.action_ids)
        return rank_candidates(probs, step.action_ids)

    return rank


def build_episode_runner(doc: dict, cfg: dict) -> EpisodeRunner:
    """Wire a trained model document into a per-episode online predictor."""
    ds = cfg["dataset"]
    num_slots = jobshop.num_action_slots(ds["num_tasks"], ds["num_agents"])
    kind = doc["kind"]

    if kind == "nn":
        theta = serialize.network_from_dict(doc["network"])
        rank = _slot_ranker(theta, num_slots)

        def run(episode: Demonstration) -> list[dict]:
            return [{"ranking": rank(step, None)} for step in episode.steps]

        return run

    if kind == "bnn":
        theta = serialize.network_from_dict(doc["network"])
        tc = _tc_from_doc(doc)
        rank = _slot_ranker(theta, num_slots)

        def run(episode: Demonstration) -> list[dict]:
            omega = bnn.new_embedding(tc)
            records = []
            for step in episode.steps:
                records.append({"ranking": rank(step, omega)})
                if tc.lr_omega > 0.0:
                    grad = bnn.omega_gradient(theta, step, num_slots, omega, tc.renyi_alpha)
                    omega = omega - tc.lr_omega * grad
            return records

        return run

    if kind == "hybrid":
        theta = serialize.network_from_dict(doc["network"])
        base = serialize.network_from_dict(doc["baseline_network"])
        tc = _tc_from_doc(doc)

        def run(episode: Demonstration) -> list[dict]:
            trace = hybrid.run_episode(theta, tc, base, episode.steps, num_slots)
            return [
                {"ranking": s.ranking, "predictor_used": s.predictor_used} for s in trace.steps
            ]

        return run

    if kind == "kmeans_nn":
        centroids = np.asarray(doc["cluster"]["centroids"], dtype=np.float64)
        model = clustering.ClusterModel("kmeans", centroids)
        nets = [serialize.network_from_dict(n) for n in doc["networks"]]
        rankers = [_slot_ranker(n, num_slots) for n in nets]

        def run(episode: Demonstration) -> list[dict]:
            sig = clustering.PrefixSignature(ds["num_tasks"], ds["num_agents"])
            records = []
            for step in episode.steps:
                route = clustering.kmeans_assign(model, sig.vector())
                records.append({"ranking": rankers[route](step, None), "cluster": route})
                sig.observe(step, step.chosen_action_id)
            return records

        return run

    if kind == "gmm_nn":
        model = clustering.ClusterModel(
            "gmm",
            np.asarray(doc["cluster"]["centroids"], dtype=np.float64),
            weights=np.asarray(doc["cluster"]["weights"], dtype=np.float64),
            variances=np.asarray(doc["cluster"]["variances"], dtype=np.float64),
        )
        theta = serialize.network_from_dict(doc["network"])

        def run(episode: Demonstration) -> list[dict]:
            sig = clustering.PrefixSignature(ds["num_tasks"], ds["num_agents"])
            records = []
            for step in episode.steps:
                if sig.count == 0:
                    posterior = model.weights.copy()  # no evidence yet: prior weights
                else:
                    posterior = clustering.gmm_posterior(model, sig.vector())
                _, cache = mlp.forward(theta, policy_input(step, num_slots, extra=posterior))
                logits = cache.activations[-1][0]
                probs = candidate_distribution(logits, step.action_ids)
                records.append({"ranking": rank_candidates(probs, step.action_ids)})
                sig.observe(step, step.chosen_action_id)
            return records

        return run

    if kind in ("lstm", "blstm"):
        params = lstm_from_dict(doc["lstm"])
        tc = _tc_from_doc(doc)

        def run(episode: Demonstration) -> list[dict]:
            state = lstm.LstmState.zeros(params.hidden_size)
            omega = bnn.new_embedding(tc) if kind == "blstm" else None
            records = []
            for step in episode.steps:
                if kind == "blstm":
                    logits, omega_grad, state = lstm.step_omega_gradient(
                        params, state, step, num_slots, omega, tc.renyi_alpha
                    )
                else:
                    logits, state = lstm.lstm_step(params, state, policy_input(step, num_slots))
                probs = candidate_distribution(logits, step.action_ids)
                records.append({"ranking": rank_candidates(probs, step.action_ids)})
                if kind == "blstm" and tc.lr_omega > 0.0:
                    omega = omega - tc.lr_omega * omega_grad
            return records

        return run

    if kind in ("cf_nn", "cf_bnn"):
        theta = serialize.network_from_dict(doc["network"])
        tc = _tc_from_doc(doc)
        adaptive = kind == "cf_bnn"

        def run(episode: Demonstration) -> list[dict]:
            omega = bnn.new_embedding(tc)
            records = []
            for step in episode.steps:
                ranking = counterfactual.rank_actions(
                    counterfactual.net_preference, theta, omega,
                    step.state_features, step.action_ids, step.action_features,
                )
                records.append({"ranking": ranking})
                if adaptive and tc.lr_omega > 0.0:
                    grad = counterfactual.step_omega_gradient(theta, step, omega, tc.renyi_alpha)
                    omega = omega - tc.lr_omega * grad
            return records

        return run

    if kind == "action_embed_cf":
        theta = serialize.network_from_dict(doc["network"])
        tc = _tc_from_doc(doc)
        ae_table = {
            int(k): np.asarray(v, dtype=np.float64) for k, v in doc["action_embeddings"].items()
        }

        def run(episode: Demonstration) -> list[dict]:
            omega = bnn.new_embedding(tc)
            records = []
            for raw_step in episode.steps:
                step = action_embed.substitute_step(
                    raw_step, ae_table, episode.num_tasks, episode.num_agents
                )
                ranking = counterfactual.rank_actions(
                    counterfactual.net_preference, theta, omega,
                    step.state_features, step.action_ids, step.action_features,
                )
                records.append({"ranking": ranking})
                if tc.lr_omega > 0.0:
                    grad = counterfactual.step_omega_gradient(theta, step, omega, tc.renyi_alpha)
                    omega = omega - tc.lr_omega * grad
            return records

        return run

    if kind == "cf_hybrid":
        theta = serialize.network_from_dict(doc["network"])
        base = serialize.network_from_dict(doc["baseline_network"])
        tc = _tc_from_doc(doc)

        def cf_rank(net):
            def rank(step: DemoStep, omega: np.ndarray) -> list[int]:
                return counterfactual.rank_actions(
                    counterfactual.net_preference, net, omega,
                    step.state_features, step.action_ids, step.action_features,
                )

            return rank

        zero = np.zeros(tc.embed_dim)
        base_rank = cf_rank(base)

        def run(episode: Demonstration) -> list[dict]:
            trace = hybrid.run_shift(
                lambda step, _omega: base_rank(step, zero),
                cf_rank(theta),
                lambda step, omega: omega
                - tc.lr_omega * counterfactual.step_omega_gradient(theta, step, omega, tc.renyi_alpha)
                if tc.lr_omega > 0.0
                else omega.copy(),
                episode.steps,
                tc.epsilon,
                bnn.new_embedding(tc),
            )
            return [
                {"ranking": s.ranking, "predictor_used": s.predictor_used} for s in trace.steps
            ]

        return run

    raise UsageError(f"unknown model kind {kind!r}")


def score_episode(episode: Demonstration, records: list[dict], topk: Sequence[int]) -> dict:
    """Per-episode mean top-k accuracy; every prediction must come from the
    step's recorded legal set."""
    if len(records) != len(episode.steps):
        raise UsageError("episode runner returned the wrong number of steps")
    hits = {k: 0 for k in topk}
    for step, rec in zip(episode.steps, records):
        ranking = rec["ranking"]
        if any(aid not in step.action_ids for aid in ranking):
            raise DataError("prediction outside the recorded legal set")
        for k in topk:
            if step.chosen_action_id in ranking[:k]:
                hits[k] += 1
    n = len(episode.steps)
    return {f"top{k}": hits[k] / n for k in topk}


def evaluate_runner(
    runner: EpisodeRunner, episodes: Sequence[Demonstration], topk: Sequence[int]
) -> tuple[dict, list[dict]]:
    """Run one method over the test episodes; returns (metric row, traces)."""
    per_episode = {k: [] for k in topk}
    traces = []
    for episode in episodes:
        records = runner(episode)
        scores = score_episode(episode, records, topk)
        for k in topk:
            per_episode[k].append(scores[f"top{k}"])
        trace_steps = []
        for t, (step, rec) in enumerate(zip(episode.steps, records)):
            entry = {
                "t": t,
                "n_candidates": step.num_candidates,
                "chosen": step.chosen_action_id,
                "predicted": rec["ranking"][0],
                "top3": rec["ranking"][:3],
            }
            if "predictor_used" in rec:
                entry["predictor_used"] = rec["predictor_used"]
            trace_steps.append(entry)
        trace = {
            "episode": episode.demonstrator_id,
            "hidden_policy": episode.hidden_policy,
            "steps": trace_steps,
        }
        switch = next(
            (i for i, r in enumerate(records) if r.get("predictor_used") == "bnn"), None
        )
        if any("predictor_used" in r for r in records):
            trace["switch_step"] = switch
        traces.append(trace)
    row = {"n_episodes": len(episodes)}
    for k in topk:
        vals = np.asarray(per_episode[k], dtype=np.float64)
        row[f"top{k}_mean"] = float(vals.mean())
        row[f"top{k}_stderr"] = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return row, traces


def cmd_evaluate(cfg: dict, paths: RunPaths, method: str, budget: int) -> dict:
    """Evaluate one trained cell over the shared test episodes."""
    chash = config_hash(cfg)
    metrics_path = paths.cell_metrics(method, budget)
    if metrics_path.exists():
        existing = json.loads(metrics_path.read_text())
        if existing.get("config_hash") == chash and "error" not in existing:
            return existing
    model_path = paths.model(method, budget)
    if not model_path.exists():
        raise UsageError(f"model for {method}@{budget} not found; run train first")
    doc = serialize.load_model(model_path)
    if doc.get("config_hash") != chash:
        raise UsageError(
            f"model {model_path.name} was trained under a different config; retrain it"
        )
    test_path = paths.testset()
    if not test_path.exists():
        raise UsageError("test set not found; run generate first")
    episodes = jobshop.load_demonstrations(test_path, strip_eval=False)
    train_demos = jobshop.load_demonstrations(paths.dataset(budget))
    audit_train_test_separation(train_demos, episodes)

    runner = build_episode_runner(doc, cfg)
    row, traces = evaluate_runner(runner, episodes, cfg["metrics"]["topk"])
    result = {"method": method, "budget": budget, "config_hash": chash, **row}
    Path(metrics_path).write_text(serialize.dumps(result) + "\n", encoding="utf-8")
    with open(paths.trace(method, budget), "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(serialize.dumps(trace) + "\n")
    return result


# ---------------------------------------------------------------------------
# sweep + table assembly


def format_csv_row(row: dict) -> str:
    return (
        f"{row['method']},{row['budget']},"
        f"{row['top1_mean']:.6f},{row['top1_stderr']:.6f},"
        f"{row['top3_mean']:.6f},{row['top3_stderr']:.6f},{row['n_episodes']}"
    )


def write_table(cfg: dict, paths: RunPaths, rows: list[dict]) -> Path:
    lines = [CSV_HEADER]
    ordered = [(m, b) for m in cfg["methods"] for b in cfg["dataset"]["budgets"]]
    by_cell = {(r["method"], r["budget"]): r for r in rows if "error" not in r}
    for cell in ordered:
        if cell in by_cell:
            lines.append(format_csv_row(by_cell[cell]))
    path = paths.table()
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def run_cell(cfg: dict, paths: RunPaths, method: str, budget: int) -> dict:
    try:
        cmd_train(cfg, paths, method, budget)
        return cmd_evaluate(cfg, paths, method, budget)
    except Exception as exc:  # failed cells are recorded, the sweep continues
        return {"method": method, "budget": budget, "error": f"{type(exc).__name__}: {exc}"}


def cmd_sweep(cfg: dict, paths: RunPaths, jobs: int = 1) -> Path:
    """Full methods x budgets sweep with per-cell isolation and resumability."""
    cmd_generate(cfg, paths)
    cells = [(m, b) for m in cfg["methods"] for b in cfg["dataset"]["budgets"]]
    rows: list[dict] = []
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, cfg, paths, m, b) for m, b in cells]
            rows = [f.result() for f in futures]
    else:
        for m, b in cells:
            rows.append(run_cell(cfg, paths, m, b))
    for row in rows:
        if "error" in row:
            print(f"cell {row['method']}@{row['budget']} failed: {row['error']}")
    return write_table(cfg, paths, rows)
