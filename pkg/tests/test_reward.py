import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgwalk.agents import AgentConfig, Policy
from kgwalk.embed import EmbeddingModel
from kgwalk.reward import (RewardConfig, batch_total_rewards, hit_reward, mix, rule_reward,
                           total_reward)
from kgwalk.rules import Rule, RuleIndex


def test_mix_example():
    assert mix(0.8, 1.0, 0.65) == pytest.approx(0.87)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_mix_endpoints_and_affinity(rr, rh, lam):
    assert mix(rr, rh, 1.0) == rr
    assert mix(rr, rh, 0.0) == rh
    # affine in lambda: value at lam equals interpolation of the endpoints
    assert mix(rr, rh, lam) == pytest.approx(lam * mix(rr, rh, 1.0) + (1 - lam) * mix(rr, rh, 0.0))


def test_reward_config_rejects_out_of_range_lambda():
    with pytest.raises(ValueError):
        RewardConfig(lam=1.5)


@pytest.fixture
def setup(toy_graph):
    rng = np.random.default_rng(0)
    v = toy_graph.vocab
    model = EmbeddingModel("distmult", rng.normal(size=(toy_graph.num_entities, 4)),
                           rng.normal(size=(v.num_relations, 4)))
    index = RuleIndex([Rule(0, (1, 0), 0.8)])
    return toy_graph, model, index


def test_rule_reward(setup):
    g, _, index = setup
    loop = g.vocab.self_loop
    assert rule_reward([1, 0], 0, index, loop) == 0.8
    assert rule_reward([1, 0, loop], 0, index, loop) == 0.8
    assert rule_reward([0, 1], 0, index, loop) == 0.0


def test_hit_reward_is_one_exactly_on_train_facts(setup):
    g, model, _ = setup
    for s in range(g.num_entities):
        for r in range(g.vocab.num_relations):
            for o in range(g.num_entities):
                val = hit_reward(s, r, o, g, model)
                if (s, r, o) in g.train_set:
                    assert val == 1.0
                else:
                    assert 0.0 < val < 1.0
                    assert val == pytest.approx(model.shaping(s, r, o))
    assert hit_reward(0, 0, 4, g, None) == 0.0


def test_batch_rewards_agree_with_scalar_rewards(setup):
    g, model, index = setup
    pol = Policy(g, AgentConfig(dim=4, hidden=3, layers=1, hops=2))
    batch = pol.rollout([(s, r) for s in range(5) for r in range(2)], rng=np.random.default_rng(1))
    cfg = RewardConfig(lam=0.65)
    total, rr, rh = batch_total_rewards(batch, g, index, model, cfg)
    for b, tr in enumerate(batch.trajectories()):
        assert total[b] == pytest.approx(total_reward(tr, g, index, model, cfg))
        assert total[b] == pytest.approx(mix(rr[b], rh[b], 0.65))
