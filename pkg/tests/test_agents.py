import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgwalk.agents import AgentConfig, Policy, action_dropout, export_trajectories
from kgwalk.embed import EmbeddingModel
from kgwalk.kg import Query

CFG = AgentConfig(dim=4, hidden=3, layers=2, hops=2, dtype="float64", seed=1)
QUERIES = [Query(0, 0, 1), Query(1, 1, 2), Query(3, 0, 2), Query(0, 1, 3)]


def _sig(x):
    return 1 / (1 + np.exp(-x))


def _np_lstm(P, prefix, layers, x, state):
    out = []
    for l in range(layers):
        h, c = state[l]
        W, b = P[f"{prefix}.{l}.W"], P[f"{prefix}.{l}.b"]
        H = h.shape[0]
        z = W @ np.concatenate([x, h]) + b
        i, f, g, o = _sig(z[:H]), _sig(z[H:2 * H]), np.tanh(z[2 * H:3 * H]), _sig(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append((h, c))
        x = h
    return out


def _np_softmax(z):
    z = z - z.max()
    return np.exp(z) / np.exp(z).sum()


def _reference_first_hop(policy, q):
    """Relation and entity distributions at t=0, written from scratch in numpy."""
    P = {n: p.data for n, p in policy.params.items()}
    g, v, cfg = policy.graph, policy.vocab, policy.config
    E, R = P["entity_emb"], P["relation_emb"]
    zero = [(np.zeros(cfg.hidden), np.zeros(cfg.hidden))] * cfg.layers
    hr = _np_lstm(P, "rel_lstm", cfg.layers, R[v.start_relation], zero)[-1][0]
    he = _np_lstm(P, "ent_lstm", cfg.layers, E[q.source], zero)[-1][0]
    rels = sorted({r for r, _ in g.adjacency[q.source]})
    u = P["W1"] @ np.maximum(P["W2"] @ np.concatenate([hr, R[q.relation]]), 0)
    p_rel = dict(zip(rels, _np_softmax(np.array([R[r] @ u for r in rels]))))
    ue = P["W3"] @ np.maximum(P["W4"] @ np.concatenate([he, R[q.relation], E[q.source], E[q.source]]), 0)
    p_ent = {}
    for r in rels:
        ents = [e for rr, e in g.adjacency[q.source] if rr == r]
        p_ent[r] = dict(zip(ents, _np_softmax(np.array([E[e] @ ue for e in ents]))))
    return p_rel, p_ent


def test_distributions_match_dense_reference(toy_graph):
    pol = Policy(toy_graph, CFG)
    for q in QUERIES:
        ref_rel, ref_ent = _reference_first_hop(pol, q)
        state = pol.init_state([q.source], [q.relation])
        rd = pol.relation_distribution(state)
        got = {int(r): p for r, p, m in zip(rd.candidates[0], rd.probs[0], rd.mask[0]) if m}
        assert got.keys() == ref_rel.keys()
        for r in got:
            assert abs(got[r] - ref_rel[r]) < 1e-6
            ed, ae = pol.entity_distribution(state, np.array([r]))
            ent = {int(ae[0, k]): ed.probs[0, k] for k in np.flatnonzero(ed.mask[0])}
            assert ent.keys() == ref_ent[r].keys()
            for e in ent:
                assert abs(ent[e] - ref_ent[r][e]) < 1e-6


def test_zero_w1_gives_uniform_relations(toy_graph):
    pol = Policy(toy_graph, CFG)
    pol.params["W1"].data[:] = 0
    rd = pol.relation_distribution(pol.init_state([0, 1], [0, 0]))
    for row in range(2):
        p = rd.probs[row][rd.mask[row]]
        np.testing.assert_allclose(p, 1 / len(p))


def test_rollouts_stay_on_the_graph(small_kinship):
    g = small_kinship
    cfg = AgentConfig(dim=4, hidden=4, layers=1, hops=3, relation_dropout=0.3, entity_dropout=0.3)
    pol = Policy(g, cfg)
    queries = g.queries("train")[:40]
    for mode, train in (("sample", True), ("sample", False), ("greedy", False)):
        batch = pol.rollout(queries, mode=mode, train=train, rng=np.random.default_rng(0))
        for b, q in enumerate(queries):
            cur = q.source
            for t in range(cfg.hops):
                pair = (batch.relations[b, t], batch.entities[b, t])
                assert pair in g.adjacency[cur]
                cur = pair[1]


def test_initial_state_shapes():
    from kgwalk.synthetic import build_graph
    from conftest import TOY
    g = build_graph(TOY, [], [])
    pol = Policy(g, AgentConfig(dim=6, hidden=5, layers=3))
    s = pol.init_state([0, 1], [0, 1])
    assert s.t == 0 and list(s.entity) == [0, 1]
    assert len(s.rel_state) == 3 and s.rel_state[0][0].shape == (2, 5)


def test_histories_are_separate(toy_graph):
    """The relation history sees only relations; the entity history only entities."""
    pol = Policy(toy_graph, CFG)
    s0 = pol.init_state([0], [0])
    a = pol.advance(s0, np.array([0]), np.array([1]))
    b = pol.advance(s0, np.array([0]), np.array([2]))
    c = pol.advance(s0, np.array([1]), np.array([1]))
    np.testing.assert_array_equal(a.rel_state[-1][0].data, b.rel_state[-1][0].data)
    assert not np.allclose(a.ent_state[-1][0].data, b.ent_state[-1][0].data)
    np.testing.assert_array_equal(a.ent_state[-1][0].data, c.ent_state[-1][0].data)
    assert not np.allclose(a.rel_state[-1][0].data, c.rel_state[-1][0].data)


def test_forced_replay_reproduces_log_probs(toy_graph):
    pol = Policy(toy_graph, CFG)
    b = pol.rollout(QUERIES, "sample", rng=np.random.default_rng(4))
    again = pol.rollout(QUERIES, forced=(b.relations, b.entities))
    np.testing.assert_allclose(again.log_prob_sum().data, b.log_prob_sum().data)
    with pytest.raises(ValueError):
        bad = b.relations.copy()
        bad[0, 0] = toy_graph.vocab.pad_relation
        pol.rollout(QUERIES, forced=(bad, b.entities))


def test_seeded_sampling_is_reproducible(small_kinship):
    pol = Policy(small_kinship, AgentConfig(dim=4, hidden=4, layers=1, relation_dropout=0.2))
    qs = small_kinship.queries("train")[:30]
    a = pol.rollout(qs, "sample", train=True, rng=np.random.default_rng(9))
    b = pol.rollout(qs, "sample", train=True, rng=np.random.default_rng(9))
    np.testing.assert_array_equal(a.entities, b.entities)


def test_uniform_entity_mode_emits_no_entity_log_probs(toy_graph):
    b = Policy(toy_graph, CFG).rollout(QUERIES, entity_mode="uniform", rng=np.random.default_rng(0))
    assert b.ent_logps == [] and len(b.rel_logps) == CFG.hops


def test_single_agent_mode(toy_graph):
    pol = Policy(toy_graph, AgentConfig(dim=4, hidden=3, layers=1, hops=2, single_agent=True))
    assert pol.entity_agent_names() == []
    b = pol.rollout(QUERIES, rng=np.random.default_rng(0))
    assert b.ent_logps == [] and b.relations.shape == (4, 2)
    with pytest.raises(RuntimeError):
        pol.relation_distribution(pol.init_state([0], [0]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.95))
def test_action_dropout_never_empties_a_row(seed, rate):
    rng = np.random.default_rng(seed)
    mask = rng.random((8, 5)) < 0.5
    mask[:, 0] |= ~mask.any(axis=1)
    keep = action_dropout(mask, rate, True, rng)
    assert np.all(keep.any(axis=1))
    assert not np.any(keep & ~mask)
    assert action_dropout(mask, rate, False, rng) is mask


def test_pretrained_embeddings_are_rescaled_and_inverted(toy_graph):
    v = toy_graph.vocab
    rng = np.random.default_rng(0)
    model = EmbeddingModel("complex", rng.normal(size=(toy_graph.num_entities, 4)) * 10,
                           rng.normal(size=(v.num_relations, 4)) * 10)
    pol = Policy(toy_graph, AgentConfig(dim=4, hidden=3, layers=1, dtype="float64"), embeddings=model)
    ent, rel = pol.params["entity_emb"].data, pol.params["relation_emb"].data
    target = 0.08 / np.sqrt(3)
    assert np.sqrt(np.mean(ent ** 2)) == pytest.approx(target)
    R = v.num_relations
    np.testing.assert_allclose(rel[R:2 * R, :2], rel[:R, :2])
    np.testing.assert_allclose(rel[R:2 * R, 2:], -rel[:R, 2:])
    ratio = rel[:R] / model.relation
    np.testing.assert_allclose(ratio, ratio.flat[0])


def test_export_trajectories(tmp_path, toy_graph):
    pol = Policy(toy_graph, CFG)
    b = pol.rollout(QUERIES[:2], rng=np.random.default_rng(0))
    b.rewards = np.array([1.0, 0.25])
    export_trajectories(tmp_path / "t.tsv", b.trajectories(), toy_graph.vocab)
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert len(lines) == 2
    cols = lines[1].split("\t")
    assert cols[0] == toy_graph.vocab.id2entity[1] and float(cols[-1]) == 0.25
    assert len(cols) == 2 + 2 * CFG.hops + 1
