"""Property-based checks of the numerical and data-handling invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rankaware.attention import AttentionModule, diversity_loss
from rankaware.data import PairAnnotation, make_split, reversed_pairs, transitive_closure
from rankaware.eval import accuracy_from_scores
from rankaware.losses import LossConfig, pair_total_loss
from rankaware.model import BranchScores
from rankaware.numcore import softmax_stable

finite = st.floats(-1e3, 1e3, allow_nan=False)
vectors = arrays(np.float64, st.integers(1, 30), elements=finite)


@given(vectors)
def test_softmax_is_a_distribution(x):
    p = softmax_stable(x)
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.all(p >= 0)


@given(vectors, st.randoms(use_true_random=False))
def test_softmax_permutation_equivariant(x, rnd):
    perm = list(range(x.size))
    rnd.shuffle(perm)
    assert np.allclose(softmax_stable(x)[perm], softmax_stable(x[perm]), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 4))
def test_attention_rows_stochastic(seed, T, K):
    rng = np.random.default_rng(seed)
    module = AttentionModule.init(3, 4, K, rng)
    A = module.attention_matrix(rng.normal(size=(T, 3)) * 10)
    assert np.allclose(A.sum(axis=1), 1.0, atol=1e-9)


@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, (4, 2, 3), elements=st.floats(0, 1)))
def test_losses_non_negative(s, mats):
    out = pair_total_loss(BranchScores(*s[:3]), BranchScores(*s[3:]), *mats, LossConfig())
    assert all(v >= 0 for v in out.as_dict().values())
    assert diversity_loss(mats[0]) >= 0


@st.composite
def dags(draw):
    n = draw(st.integers(2, 8))
    ids = [f"n{i}" for i in range(n)]
    edges = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=15))
    # orient every edge from lower to higher index: acyclic by construction
    return [PairAnnotation(ids[min(a, b)], ids[max(a, b)]) for a, b in edges if a != b]


@given(dags())
def test_closure_idempotent(pairs):
    once = transitive_closure(pairs)
    assert transitive_closure(once) == once
    assert {p.key for p in pairs} <= {p.key for p in once}


@given(dags())
def test_closure_of_reversed_is_reversed_closure(pairs):
    forward = {p.key for p in transitive_closure(pairs)}
    backward = {p.key for p in transitive_closure(reversed_pairs(pairs))}
    assert backward == {(b, a) for a, b in forward}


@settings(max_examples=50)
@given(st.integers(4, 20), st.floats(0.1, 0.9), st.integers(0, 1000))
def test_split_disjoint(n, fraction, seed):
    ids = [f"v{i}" for i in range(n)]
    pairs = [PairAnnotation(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]
    try:
        s = make_split(ids, pairs, fraction, seed)
    except Exception as exc:  # only the empty-side error is acceptable
        assert type(exc).__name__ == "EmptySplitError"
        return
    train, test = set(s.train_videos), set(s.test_videos)
    assert not train & test and train | test == set(ids)
    assert all({p.better, p.worse} <= train for p in s.train_pairs)
    assert all({p.better, p.worse} <= test for p in s.test_pairs)


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)).filter(lambda t: t[0] != t[1]), min_size=1),
       st.integers(0, 1000))
def test_accuracy_antisymmetry(raw, seed):
    scores = dict(zip([f"v{i}" for i in range(10)], np.random.default_rng(seed).permutation(10).astype(float)))
    pairs = [PairAnnotation(f"v{a}", f"v{b}") for a, b in raw]
    acc, ties = accuracy_from_scores(scores, pairs)
    rev, _ = accuracy_from_scores(scores, reversed_pairs(pairs))
    assert ties == 0
    assert acc + rev == 1.0
