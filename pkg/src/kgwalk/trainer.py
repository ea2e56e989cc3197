"""Four-stage training: embeddings, rule mining, relation-agent pretraining, joint REINFORCE."""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import core as C
from .agents import AgentConfig, Policy
from .embed import EmbeddingConfig, EmbeddingModel, train_embeddings
from .inference import beam_search, evaluate, write_report
from .kg import ConfigError
from .reward import RewardConfig, batch_rule_rewards, batch_total_rewards
from .rules import MinerConfig, load_rules, mine, save_rules

log = logging.getLogger(__name__)

ABLATIONS = ("full", "freeze-pretrained", "no-pretrain", "single-agent")


@dataclass
class TrainConfig:
    # data
    bandwidth: int = 500
    unseen: str = "skip"
    # stage switches
    ablation: str = "full"
    train_embeddings: bool = True
    mine_rules: bool = True
    pretrain: bool = True
    joint_train: bool = True
    reuse_artifacts: bool = True
    # stage 1
    embedding_kind: str = "complex"
    embedding_dim: int = 200
    embedding_epochs: int = 100
    embedding_lr: float = 0.01
    embedding_batch_size: int = 128
    negatives: int = 10
    embedding_l2: float = 0.0
    # stage 2
    rule_samples: int = 10_000
    max_rule_length: int = 0  # 0 -> hops
    threshold: float = 0.15
    grounding_cap: int = 10_000
    # policy
    hops: int = 3
    history_dim: int = 200
    history_layers: int = 3
    init_from_embeddings: bool = True
    tune_embeddings: bool = True
    # stages 3 and 4
    epochs: int = 50
    pretrain_epochs: int = -1  # -1 -> 20% of epochs
    batch_size: int = 256
    learning_rate: float = 0.001
    beta: float = 0.0
    emb_dropout: float = 0.1
    hidden_dropout: float = 0.1
    relation_dropout: float = 0.1
    entity_dropout: float = 0.1
    lam: float = 0.65
    rollouts: int = 20
    baseline_decay: float = 0.9
    use_baseline: bool = False
    grad_clip: float = 5.0
    beam_width: int = 128
    eval_every: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if self.batch_size < 1 or self.rollouts < 1:
            raise ConfigError("batch_size and rollouts must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        for name in ("emb_dropout", "hidden_dropout", "relation_dropout", "entity_dropout"):
            v = getattr(self, name)
            limit = 0.95 if name in ("relation_dropout", "entity_dropout") else 0.3
            if not 0.0 <= v <= limit:
                raise ConfigError(f"{name}={v} outside [0, {limit}]")
        if self.bandwidth < 1:
            raise ConfigError("bandwidth must be positive")

    @property
    def stage3_epochs(self):
        if self.pretrain_epochs >= 0:
            return self.pretrain_epochs
        return max(1, round(0.2 * self.epochs))

    @property
    def stage4_epochs(self):
        if self.pretrain_epochs >= 0:
            return self.epochs
        return self.epochs - self.stage3_epochs

    def agent_config(self):
        return AgentConfig(dim=self.embedding_dim, hidden=self.history_dim, layers=self.history_layers,
                           hops=self.hops, emb_dropout=self.emb_dropout, hidden_dropout=self.hidden_dropout,
                           relation_dropout=self.relation_dropout, entity_dropout=self.entity_dropout,
                           single_agent=self.ablation == "single-agent", seed=self.seed)

    def embedding_config(self):
        return EmbeddingConfig(kind=self.embedding_kind, dim=self.embedding_dim, negatives=self.negatives,
                               lr=self.embedding_lr, epochs=self.embedding_epochs,
                               batch_size=self.embedding_batch_size, l2=self.embedding_l2, seed=self.seed)

    def miner_config(self):
        return MinerConfig(samples=self.rule_samples, max_rule_length=self.max_rule_length or self.hops,
                           threshold=self.threshold, grounding_cap=self.grounding_cap, seed=self.seed)

    def reward_config(self):
        return RewardConfig(lam=self.lam)

    # ------------------------------------------------------------ config files

    @classmethod
    def from_file(cls, path, **overrides):
        values = parse_config_file(path)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(fields))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        typed = {k: _coerce(k, v, fields[k].default) for k, v in values.items()}
        return cls(**typed)

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def parse_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip()] = value.strip()
    return values


def _coerce(key, value, default):
    if not isinstance(value, str):
        return value
    try:
        if isinstance(default, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


# ---------------------------------------------------------------- objective

def reinforce_loss(batch, rewards, baseline=0.0, beta=0.0):
    """Negative advantage-weighted log-likelihood minus an entropy bonus.

    ``loss = -mean_b[(R_b - baseline) * sum_t log pi] - beta * mean entropy``
    where the entropy is averaged over every distribution emitted in the batch.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    adv = np.asarray(rewards, dtype=np.float64) - baseline
    logp = batch.log_prob_sum()
    loss = -C.mean(C.mul(logp, adv.astype(logp.dtype)))
    if beta:
        ent = batch.mean_entropy()
        if ent is not None:
            loss = loss - ent * beta
    return loss


# ---------------------------------------------------------------- trainer

class Trainer:
    def __init__(self, graph, config, rule_index, embedding_model=None, log_path=None):
        self.graph = graph
        self.config = config
        self.rules = rule_index
        self.embeddings = embedding_model
        init = embedding_model if (config.init_from_embeddings and embedding_model is not None
                                   and embedding_model.dim == config.embedding_dim) else None
        self.policy = Policy(graph, config.agent_config(), embeddings=init)
        self.rng = np.random.default_rng(config.seed + 1)
        self.baseline = 0.0
        self.history = []
        self.log_path = log_path
        if log_path:
            with open(log_path, "w", encoding="utf-8") as f:
                f.write("epoch\tstage\tmean_reward\tloss\tdev_hits1\tdev_mrr\trule_usage_pct\n")
        self.train_queries = [q for q in graph.queries("train")]

    # ------------------------------------------------------------ helpers

    def _log(self, epoch, stage, mean_reward, loss, report):
        row = (epoch, stage, mean_reward, loss,
               report.hits1 if report else float("nan"),
               report.mrr if report else float("nan"),
               report.rule_usage if report else float("nan"))
        self.history.append(row)
        log.info("epoch %d stage %d reward %.4f loss %.4f dev_hits1 %.2f dev_mrr %.2f rule_usage %.2f", *row)
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as f:
                f.write("\t".join([str(epoch), str(stage)] + [f"{v:.6f}" for v in row[2:]]) + "\n")

    def evaluate(self, split="dev", mode="filtered", queries=None):
        queries = queries if queries is not None else self.graph.queries(split)
        if not queries:
            return None
        preds = beam_search(self.policy, queries, self.config.beam_width, self.rules)
        return evaluate(preds, self.graph, mode, self.rules)

    def _batches(self):
        order = self.rng.permutation(len(self.train_queries))
        bs = self.config.batch_size
        for start in range(0, len(order), bs):
            yield [self.train_queries[i] for i in order[start:start + bs]]

    def _step(self, queries, names, stage):
        cfg = self.config
        expanded = [q for q in queries for _ in range(cfg.rollouts)]
        uniform = stage == 3
        batch = self.policy.rollout(expanded, mode="sample", train=True, rng=self.rng,
                                    entity_mode="uniform" if uniform else "agent")
        if stage == 3:
            rewards = batch_rule_rewards(batch, self.rules, self.graph.vocab.self_loop)
        else:
            rewards = batch_total_rewards(batch, self.graph, self.rules, self.embeddings, cfg.reward_config())[0]
        baseline = self.baseline if cfg.use_baseline else 0.0
        loss = reinforce_loss(batch, rewards, baseline, cfg.beta)
        params = self.policy.params
        params.zero_grad()
        loss.backward()
        C.clip_grad_norm(params, names, cfg.grad_clip)
        self.optimizer.step(names)
        if cfg.use_baseline:
            self.baseline = cfg.baseline_decay * self.baseline + (1 - cfg.baseline_decay) * float(rewards.mean())
        return float(rewards.mean()), loss.item()

    def _epoch(self, names, stage):
        rewards, losses = [], []
        for queries in self._batches():
            r, l = self._step(queries, names, stage)
            rewards.append(r)
            losses.append(l)
        return float(np.mean(rewards)), float(np.mean(losses))

    # ------------------------------------------------------------ stages

    def stage3_pretrain(self, epochs=None):
        """Train the relation agent on rule confidence alone; entity picks are uniform."""
        epochs = self.config.stage3_epochs if epochs is None else epochs
        if len(self.rules) == 0:
            log.warning("rule index is empty; skipping relation-agent pretraining")
            return self.policy
        names = self.policy.relation_agent_names()
        self.optimizer = C.Adam(self.policy.params, lr=self.config.learning_rate)
        self.baseline = 0.0
        for epoch in range(epochs):
            mean_r, loss = self._epoch(names, 3)
            report = self.evaluate("dev") if self._should_eval(epoch, epochs) else None
            self._log(epoch, 3, mean_r, loss, report)
        return self.policy

    def stage4_joint_train(self, epochs=None):
        """Train both agents on the mixed reward, keeping the best-dev-MRR parameters."""
        cfg = self.config
        epochs = cfg.stage4_epochs if epochs is None else epochs
        names = list(self.policy.entity_agent_names())
        if cfg.ablation != "freeze-pretrained":
            names += self.policy.relation_agent_names()
        if cfg.tune_embeddings:
            names += self.policy.embedding_names()
        self.optimizer = C.Adam(self.policy.params, lr=cfg.learning_rate)
        self.baseline = 0.0
        best_mrr, best_state = -1.0, None
        for epoch in range(epochs):
            mean_r, loss = self._epoch(names, 4)
            report = self.evaluate("dev") if self._should_eval(epoch, epochs) else None
            self._log(epoch, 4, mean_r, loss, report)
            if report is not None and report.mrr > best_mrr:
                best_mrr, best_state = report.mrr, self.policy.params.state_dict()
        if best_state is not None:
            self.policy.params.load_state_dict(best_state)
        return self.policy

    def _should_eval(self, epoch, epochs):
        return bool(self.graph.dev) and ((epoch + 1) % max(1, self.config.eval_every) == 0 or epoch + 1 == epochs)


# ---------------------------------------------------------------- checkpoints

def save_policy(path, policy):
    meta = dataclasses.asdict(policy.config)
    C.save_checkpoint(path, policy.params.state_dict(), meta=meta)


def load_policy(path, graph):
    arrays, meta = C.load_checkpoint(path)
    fields = {f.name: f for f in dataclasses.fields(AgentConfig)}
    cfg = AgentConfig(**{k: _coerce(k, v, fields[k].default) for k, v in meta.items() if k in fields})
    policy = Policy(graph, cfg)
    policy.params.load_state_dict(arrays)
    return policy


class MissingArtifact(FileNotFoundError):
    pass


def _require(path, stage):
    if not os.path.exists(path):
        raise MissingArtifact(f"missing {stage} artifact: {path}")
    return path


def artifact_paths(out_dir):
    return {
        "pagerank": os.path.join(out_dir, "pagerank.tsv"),
        "embeddings": os.path.join(out_dir, "embeddings.ckpt"),
        "rules": os.path.join(out_dir, "rules.tsv"),
        "pretrain": os.path.join(out_dir, "pretrain.ckpt"),
        "model": os.path.join(out_dir, "model.ckpt"),
        "log": os.path.join(out_dir, "train_log.tsv"),
    }


def run_pipeline(graph, config, out_dir, splits=("dev", "test"), on_stage=None):
    """Run stages 1-4 on ``graph`` writing artifacts into ``out_dir``.

    Existing stage artifacts are reused when ``config.reuse_artifacts`` is set
    (or when the stage is switched off). ``on_stage(name, trainer)`` is called
    with "init" before stage 3 and "pretrained" after it.
    Returns (policy, {split: report}).
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = artifact_paths(out_dir)
    t0 = time.perf_counter()

    if config.train_embeddings and not (config.reuse_artifacts and os.path.exists(paths["embeddings"])):
        model = train_embeddings(graph, config.embedding_config())
        model.save(paths["embeddings"])
    else:
        model = EmbeddingModel.load(_require(paths["embeddings"], "stage-1 embedding"))

    if config.mine_rules and not (config.reuse_artifacts and os.path.exists(paths["rules"])):
        index = mine(graph, config.miner_config())
        save_rules(paths["rules"], index, graph.vocab)
    index = load_rules(_require(paths["rules"], "stage-2 rule"), graph.vocab, config.threshold)

    trainer = Trainer(graph, config, index, model, log_path=paths["log"])
    if on_stage:
        on_stage("init", trainer)
    if config.pretrain and config.ablation != "no-pretrain":
        if config.reuse_artifacts and os.path.exists(paths["pretrain"]):
            trainer.policy.params.load_state_dict(load_policy(paths["pretrain"], graph).params.state_dict())
        else:
            trainer.stage3_pretrain()
            save_policy(paths["pretrain"], trainer.policy)
        if on_stage:
            on_stage("pretrained", trainer)
    if config.joint_train:
        trainer.stage4_joint_train()
    save_policy(paths["model"], trainer.policy)

    reports = {}
    for split in splits:
        report = trainer.evaluate(split)
        if report is not None:
            reports[split] = report
            write_report(os.path.join(out_dir, f"metrics_{split}.tsv"), report, split, "filtered")
    log.info("pipeline finished in %.1fs", time.perf_counter() - t0)
    return trainer.policy, reports
