"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary
section at the end lists every criterion.
"""

import itertools
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, TOY, random_kg
from _oracles import block_rel_error, brute_confidence, dense_pagerank, enumerate_paths, numeric_grad
from kgwalk.agents import AgentConfig, Policy
from kgwalk.benchmark import run_kinship
from kgwalk.embed import EmbeddingConfig, EmbeddingModel, filtered_mrr, train_embeddings
from kgwalk.inference import RankedPrediction, beam_search, evaluate, ranks
from kgwalk.kg import Query
from kgwalk.pagerank import compute_pagerank
from kgwalk.reward import RewardConfig, hit_reward, mix, total_reward
from kgwalk.rules import MinerConfig, mine
from kgwalk.synthetic import build_graph, kinship, tiny_groups
from kgwalk.trainer import reinforce_loss


def report(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, detail


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("kinship")
    t0 = time.perf_counter()
    full = run_kinship(root / "full")
    again = run_kinship(root / "full_again")
    no_pretrain = run_kinship(root / "no_pretrain", ablation="no-pretrain")
    return full, again, no_pretrain, time.perf_counter() - t0


def test_criterion_01_gradient_fidelity():
    t0 = time.perf_counter()
    g = build_graph(TOY, [], [])
    queries = [Query(0, 0, 1), Query(1, 1, 2), Query(3, 0, 2), Query(0, 1, 3)]
    worst = 0.0
    for single in (False, True):
        pol = Policy(g, AgentConfig(dim=4, hidden=3, layers=2, hops=2, dtype="float64", seed=1,
                                    single_agent=single))
        walk = pol.rollout(queries, "sample", rng=np.random.default_rng(0))
        forced = (walk.relations.copy(), walk.entities.copy())
        rewards = np.array([1.0, 0.3, 0.5, 0.9])

        def loss():
            return reinforce_loss(pol.rollout(queries, forced=forced), rewards, 0.2, 0.05)

        value = loss()
        pol.params.zero_grad()
        value.backward()
        for _, p in pol.params.items():
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            worst = max(worst, block_rel_error(analytic, numeric_grad(lambda: loss().item(), p.data)))
    seconds = time.perf_counter() - t0
    report(1, worst < 1e-4 and seconds < 60 and g.num_entities == 5,
           f"max relative error {worst:.2e} (< 1e-4) over every parameter block, {seconds:.1f}s")


def test_criterion_02_beam_search_oracle():
    t0 = time.perf_counter()
    mismatches = checked = 0
    for seed in range(20):
        g = build_graph(random_kg(seed, n_entities=8, n_relations=2, n_triples=10), [], [])
        pol = Policy(g, AgentConfig(dim=4, hidden=4, layers=1, hops=2 + seed % 2, dtype="float64", seed=seed))
        for s in range(0, g.num_entities, 2):
            q = Query(s, seed % 2)
            paths = enumerate_paths(pol, q)
            best = {}
            for path, score in paths:
                e = path[-1][1]
                best[e] = max(best.get(e, -np.inf), score)
            pred = beam_search(pol, [q], beam_width=len(paths))[0]
            oracle = sorted(best, key=lambda e: (-best[e], e))
            got = dict(zip(pred.entities, pred.log_probs))
            same_scores = got.keys() == best.keys() and all(abs(got[e] - best[e]) < 1e-9 for e in best)
            # identical order, allowing swaps only between entities tied to within 1e-9
            order_ok = all(abs(best[a] - best[b]) < 1e-9 for a, b in zip(pred.entities, oracle) if a != b)
            mismatches += not (same_scores and order_ok)
            checked += 1
    seconds = time.perf_counter() - t0
    report(2, mismatches == 0 and seconds < 60,
           f"{checked} queries on 20 random KGs (T=2..3): {mismatches} mismatches vs enumeration, {seconds:.1f}s")


def test_criterion_03_rule_miner_oracle():
    mismatches = rules_checked = 0
    for seed in range(6):
        g = build_graph(random_kg(seed, n_entities=7, n_relations=2, n_triples=14), [], [])
        facts = set(g.train_reversed)
        for rule in mine(g, MinerConfig(samples=400, max_rule_length=3, threshold=0.0, seed=seed)):
            support, body, conf = brute_confidence(facts, rule.head, rule.body)
            mismatches += (rule.support, rule.body_count, rule.confidence) != (support, body, conf)
            rules_checked += 1
    big = build_graph(random_kg(3, n_entities=60, n_relations=3, n_triples=1000), [], [])
    n = big.num_entities
    mats = {}
    for s, r, o in big.train_reversed:
        mats.setdefault(r, np.zeros((n, n), dtype=np.int64))[s, o] = 1
    for rule in mine(big, MinerConfig(samples=1500, max_rule_length=2, threshold=0.0, grounding_cap=10 ** 9)):
        reach = np.eye(n, dtype=np.int64)
        for r in rule.body:
            reach = (reach @ mats[r] > 0).astype(np.int64)
        body = int(reach.sum())
        support = int((reach * mats.get(rule.head, np.zeros((n, n), dtype=np.int64))).sum())
        mismatches += (rule.support, rule.body_count, rule.confidence) != (support, body, support / (body + 5))
        rules_checked += 1
    train, dev, test = kinship()
    kg = build_graph(train, dev, test, eta=64)
    v = kg.vocab
    planted = mine(kg, MinerConfig(samples=5000, max_rule_length=2, threshold=0.15)).lookup(
        v.relation_id("grandparentOf"), (v.relation_id("parentOf"),) * 2)
    conf = planted.confidence if planted else 0.0
    report(3, mismatches == 0 and conf > 0.9,
           f"{rules_checked} mined rules equal brute-force counts (p_c=5), planted kinship rule conf {conf:.3f}")


def test_criterion_04_reward_algebra():
    g = build_graph(TOY, [], [])
    rng = np.random.default_rng(0)
    model = EmbeddingModel("complex", rng.normal(size=(5, 4)), rng.normal(size=(2, 4)))
    pol = Policy(g, AgentConfig(dim=4, hidden=3, layers=1, hops=2))
    from kgwalk.rules import Rule, RuleIndex
    index = RuleIndex([Rule(0, (0, 1), 0.7), Rule(1, (0,), 0.4)])
    walks = pol.rollout([(s, r) for s in range(5) for r in range(2)], rng=rng).trajectories()
    ok = True
    for tr in walks:
        r0 = total_reward(tr, g, index, model, RewardConfig(lam=0.0))
        r1 = total_reward(tr, g, index, model, RewardConfig(lam=1.0))
        for lam in (0.25, 0.65):
            ok &= total_reward(tr, g, index, model, RewardConfig(lam=lam)) == pytest.approx(lam * r1 + (1 - lam) * r0)
    for s, r, o in itertools.product(range(5), range(2), range(5)):
        val = hit_reward(s, r, o, g, model)
        ok &= (val == 1.0) == ((s, r, o) in g.train_set)
        ok &= 0.0 < val <= 1.0
    ok &= mix(0.8, 1.0, 0.65) == pytest.approx(0.87)
    report(4, ok, "endpoints, affinity in lambda, R_h = 1 iff train fact, shaping in (0,1), 0.65*0.8+0.35*1 = 0.87")


def test_criterion_05_synthetic_benchmark(benchmark):
    full, _, no_pretrain, seconds = benchmark
    follow = full.rule_following_pretrained
    h1 = full.reports["dev"].hits1 / 100
    h1_no = no_pretrain.reports["dev"].hits1 / 100
    ok = follow >= 0.9 and h1 >= 0.8 and h1 >= h1_no and seconds < 600
    report(5, ok, f"(a) stage-3 rule following {follow:.2f} (b) dev Hits@1 {h1:.2f} "
                  f"(c) full {h1:.2f} >= no-pretrain {h1_no:.2f}; 3 pipeline runs in {seconds:.0f}s")


def test_criterion_06_rule_usage_rises_after_pretraining(benchmark):
    full = benchmark[0]
    before, after = full.rule_usage_untrained, full.rule_usage_pretrained
    report(6, after > before, f"dev rule usage {before:.1f}% untrained -> {after:.1f}% after stage 3")


def test_criterion_07_metrics():
    g = build_graph([("a", "r", "b"), ("a", "r", "x"), ("c", "r", "d"), ("e", "r", "f")], [], [])
    v = g.vocab
    a, b, c, d, e, x = (v.entity_id(n) for n in "abcdex")
    r = v.relation_id("r")
    mk = lambda q, ents: RankedPrediction(q, ents, [((r, en),) for en in ents], [-i for i in range(len(ents))])
    fixtures = [
        ([mk(Query(c, r, d), [d, e]), mk(Query(a, r, b), [x, c, b]), mk(Query(e, r, a), [b, c])],
         (100 / 3, 200 / 3, 200 / 3, 50.0)),
        ([mk(Query(c, r, d), [e, a, b, c, x, d]), mk(Query(a, r, b), [b]), mk(Query(e, r, a), [a])],
         (200 / 3, 200 / 3, 100.0, 100 * (1 + 1 + 1 / 6) / 3)),
    ]
    ok = True
    for preds, expected in fixtures:
        m = evaluate(preds, g, "filtered")
        ok &= (m.hits1, m.hits5, m.hits10, m.mrr) == pytest.approx(expected)
        for raw, filt in zip(ranks(preds, g, "raw"), ranks(preds, g, "filtered")):
            ok &= raw is None or filt <= raw
    report(7, ok, "hand-computed Hits@1/5/10 and MRR reproduced on 3-query fixtures; filtered <= raw")


def test_criterion_08_embeddings():
    rng = np.random.default_rng(0)
    dm = EmbeddingModel("distmult", rng.normal(size=(20, 8)), rng.normal(size=(4, 8)))
    triples = rng.integers(0, [20, 4, 20], size=(500, 3))
    symmetric = all(np.isclose(dm.score(s, r, o), dm.score(o, r, s), rtol=1e-12, atol=1e-12)
                    for s, r, o in triples)
    cx = EmbeddingModel("complex", rng.normal(size=(20, 8)), rng.normal(size=(4, 8)))
    gap = abs(cx.score(0, 1, 2) - cx.score(2, 1, 0))
    train, dev, _ = tiny_groups()
    g = build_graph(train, dev, [])
    model = train_embeddings(g, EmbeddingConfig(kind="complex", dim=16, epochs=200, batch_size=16))
    mrr = filtered_mrr(model, g.dev, g.known_answers)
    report(8, symmetric and gap > 1e-3 and mrr > 0.8,
           f"DistMult symmetric on 500 triples, ComplEx asymmetry {gap:.3f}, 10-entity dev MRR {mrr:.3f}")


def test_criterion_09_data_layer():
    ok = True
    worst_norm = worst_oracle = 0.0
    for seed in range(10):
        g = build_graph(random_kg(seed, n_entities=12, n_relations=3, n_triples=40), [], [], eta=3)
        v = g.vocab
        ok &= all((o, v.inv(r), s) in g.train_set for s, r, o in g.train_reversed)
        ok &= all(len(pairs) <= 3 + 1 for pairs in g.adjacency)
        worst_norm = max(worst_norm, abs(g.pagerank.sum() - 1))
        edges = [tuple(e) for e in np.random.default_rng(seed).integers(0, 50, size=(150, 2))]
        worst_oracle = max(worst_oracle, np.abs(compute_pagerank(50, edges) - dense_pagerank(50, edges)).max())
    ok &= worst_norm < 1e-9 and worst_oracle < 1e-8
    report(9, ok, f"reverse closure, degree <= eta+1, |sum-1| {worst_norm:.1e}, "
                  f"50-node oracle gap {worst_oracle:.1e}")


def test_criterion_10_determinism(benchmark):
    full, again, _, _ = benchmark
    same = {k: v.line() for k, v in full.reports.items()} == {k: v.line() for k, v in again.reports.items()}
    same &= full.history == again.history
    report(10, same, "two seeded pipeline runs give identical reports and training logs")
