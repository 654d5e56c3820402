import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motnet.bayes import (BayesNet, BayesNode, EmptyPathGroupError, InconsistentEvidenceError, NoisyIntAdd,
                          NoisyOr, RootPrior, build_delivery_bn, build_pathcount_bn, delivery_belief, infer,
                          likelihood_weighting, noisy_int_add_cpd, noisy_or_cpd, posterior)
from motnet.topology import (PathGroup, build_dag, build_grid_mesh, detangle, enumerate_ihop_paths,
                             sample_link_uncertainty)
from oracles import joint_posterior, noisy_int_add_enum, noisy_or_enum, random_net


def chain(qs, integer=False):
    gate = NoisyIntAdd if integer else NoisyOr
    nodes = [BayesNode("a", integer, (), RootPrior(0.5))]
    prev = "a"
    for i, q in enumerate(qs):
        nodes.append(BayesNode(f"n{i}", integer, (prev,), gate((q,))))
        prev = f"n{i}"
    return BayesNet(nodes)


def test_noisy_or_cpd_examples():
    assert noisy_or_cpd([], []) == 0.0
    assert noisy_or_cpd([0, 1], [0.5, 0.5]) == pytest.approx(0.75)
    assert noisy_or_cpd(["x"], {"x": 0.2, "y": 0.9}) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        noisy_or_cpd([0], [1.5])


def test_noisy_int_add_examples():
    assert np.allclose(noisy_int_add_cpd([1, 1], [0.5, 0.5]), [0.25, 0.5, 0.25])
    assert np.allclose(noisy_int_add_cpd([2, 0], [0.0, 0.3]), [0, 0, 1])
    assert np.allclose(noisy_int_add_cpd([], []), [1.0])
    with pytest.raises(ValueError):
        noisy_int_add_cpd([1], [0.5, 0.5])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(0, 1)), min_size=1, max_size=5))
def test_noisy_or_matches_enumeration(parents):
    active = [a for a, _ in parents]
    qs = [q for _, q in parents]
    got = noisy_or_cpd([i for i, a in enumerate(active) if a], qs)
    assert got == pytest.approx(noisy_or_enum(active, qs), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.floats(0, 1)), min_size=1, max_size=5))
def test_noisy_int_add_matches_enumeration(parents):
    states = [s for s, _ in parents]
    qs = [q for _, q in parents]
    got = noisy_int_add_cpd(states, qs)
    ref = noisy_int_add_enum(states, qs)
    assert got.sum() == pytest.approx(1.0)
    for k, p in enumerate(got):
        assert p == pytest.approx(ref.get(k, 0.0), abs=1e-12)


def test_chain_belief():
    net = chain([0.1, 0.2, 0.3])
    assert delivery_belief(net, "a", "n2") == pytest.approx(0.9 * 0.8 * 0.7)


def test_integer_diamond_counts_paths():
    nodes = [BayesNode("s", True, (), RootPrior(0.5)),
             BayesNode("x", True, ("s",), NoisyIntAdd((0.0,))),
             BayesNode("y", True, ("s",), NoisyIntAdd((0.0,))),
             BayesNode("d", True, ("x", "y"), NoisyIntAdd((0.0, 0.0)))]
    net = BayesNet(nodes)
    assert net.s_max == {"s": 1, "x": 1, "y": 1, "d": 2}
    b = infer(net, {"s": 1}, "d")
    assert b.distribution == pytest.approx({0: 0.0, 1: 0.0, 2: 1.0})


@pytest.mark.parametrize("seed", range(30))
def test_random_nets_match_joint(seed):
    rng = np.random.default_rng(seed)
    integer = bool(seed % 2)
    net = random_net(rng, integer, 6 if integer else 8)
    ids = list(net.nodes)
    roots = [k for k in ids if not net.nodes[k].parents]
    ev = {roots[0]: 1}
    q = ids[-1]
    ref = joint_posterior(net, ev, q)
    got = infer(net, ev, q).probs
    assert np.allclose(got, ref, atol=1e-9)


def test_evidence_on_child():
    net = chain([0.4, 0.5])
    got = infer(net, {"n1": 1}, "a").probs
    assert np.allclose(got, joint_posterior(net, {"n1": 1}, "a"), atol=1e-12)
    assert got[1] == pytest.approx(1.0)


def test_inconsistent_evidence():
    net = chain([1.0])
    with pytest.raises(InconsistentEvidenceError):
        infer(net, {"a": 1, "n0": 1}, "a")
    with pytest.raises(ValueError):
        infer(net, {"a": 2}, "n0")
    with pytest.raises(KeyError):
        infer(net, {"zz": 1}, "n0")


def test_net_validation():
    with pytest.raises(ValueError):
        BayesNet([BayesNode("a", False, (), RootPrior()), BayesNode("b", False, ("a",), NoisyOr((0.1, 0.2)))])
    with pytest.raises(ValueError):
        BayesNet([BayesNode("a", False, ("b",), NoisyOr((0.1,))), BayesNode("b", False, ("a",), NoisyOr((0.1,)))])
    with pytest.raises(ValueError):
        BayesNet([BayesNode("a", False, (), RootPrior()), BayesNode("b", False, ("a",), NoisyIntAdd((0.1,)))])


def test_batched_equals_per_trial():
    t = build_grid_mesh(scenario=1)
    samples = sample_link_uncertainty(t, 12, seed=3)
    dag = build_dag(t, "S7", "C")
    batched = posterior(build_pathcount_bn(dag, samples), {"S7": 1}, "C")
    for i, s in enumerate(samples):
        single = posterior(build_pathcount_bn(dag, s), {"S7": 1}, "C")[0]
        assert np.allclose(batched[i], single, atol=1e-12)


def test_binary_dag_matches_integer_delivery():
    t = build_grid_mesh(scenario=3)
    samples = sample_link_uncertainty(t, 20, seed=9)
    dag = build_dag(t, "S1", "C")
    p_int = 1 - posterior(build_pathcount_bn(dag, samples), {"S1": 1}, "C")[:, 0]
    p_bin = delivery_belief(build_pathcount_bn(dag, samples, binary=True), "S1", "C")
    assert np.allclose(p_int, p_bin, atol=1e-12)


def test_pathcount_states_cover_paths():
    t = build_grid_mesh(scenario=3)
    dag = build_dag(t, "S1", "C")
    s = sample_link_uncertainty(t, 1, seed=0)[0]
    net = build_pathcount_bn(dag, s)
    assert net.s_max["C"] == dag.path_count == 10


def test_empty_dag_gives_zero_delivery():
    t = detangle(build_grid_mesh(scenario=1), {"S3", "S4", "S5", "S6"})
    s = sample_link_uncertainty(t, 1, seed=0)[0]
    net = build_pathcount_bn(build_dag(t, "S1", "C"), s)
    assert delivery_belief(net, "S1", "C") == 0.0
    assert infer(net, {"S1": 1}, "C").distribution == {0: 1.0}


def test_delivery_bn_breaks_union_cycles():
    t = build_grid_mesh(scenario=1)
    s = sample_link_uncertainty(t, 1, seed=2)[0]
    group = enumerate_ihop_paths(t, "S1", "C", 4)
    net = build_delivery_bn(group, s)  # would raise on a cycle
    assert set(net.nodes) == group.nodes
    assert 0 < delivery_belief(net, "S1", "C") < 1
    with pytest.raises(EmptyPathGroupError):
        build_delivery_bn(PathGroup(2, ()), s)


def test_single_path_group_is_product():
    s_links = {("a", "b"): 0.2, ("b", "c"): 0.5}
    from motnet.topology import LinkSample
    sample = LinkSample(s_links, {l: 1.0 for l in s_links}, 0)
    net = build_delivery_bn(PathGroup(2, (("a", "b", "c"),)), sample)
    assert delivery_belief(net, "a", "c") == pytest.approx(0.8 * 0.5)


def test_likelihood_weighting_close_to_exact():
    rng = np.random.default_rng(4)
    net = random_net(rng, False, 7)
    root = next(k for k in net.nodes if not net.nodes[k].parents)
    q = list(net.nodes)[-1]
    exact = infer(net, {root: 1}, q).probs
    approx = likelihood_weighting(net, {root: 1}, q, n_samples=60_000, seed=1)[0]
    assert np.allclose(exact, approx, atol=0.01)


def test_cap_falls_back_to_sampling():
    net = chain([0.3, 0.3])
    approx = posterior(net, {"a": 1}, "n1", max_factor_size=1, lw_samples=40_000, seed=2)[0]
    assert approx[1] == pytest.approx(0.49, abs=0.01)


def test_json_export():
    net = chain([0.25], integer=True)
    d = json.loads(net.to_json())
    assert d["nodes"][1] == {"id": "n0", "state_space": "integer", "s_max": 1, "parents": ["a"],
                             "cpd": {"kind": "noisy_int_add", "inhibitions": [0.25]}}


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_removing_a_relay_never_helps_delivery(seed):
    t = build_grid_mesh(scenario=1)
    samples = sample_link_uncertainty(t, 4, seed)
    base = delivery_belief(build_pathcount_bn(build_dag(t, "S7", "C"), samples, binary=True), "S7", "C")
    cut = detangle(t, {"S10"})
    after = delivery_belief(build_pathcount_bn(build_dag(cut, "S7", "C"), samples, binary=True), "S7", "C")
    assert np.all(after <= base + 1e-12)
