import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tgpop.graphstore import SplitSpec, TemporalDataset, batch_iter, chronological_split
from tgpop.negatives import gen_eval_negatives_naive
from tgpop.poptrack import (
    PopTrackScorer,
    consume_batch,
    grid_search_lambda,
    init_state,
    load_snapshot,
    predict_topk,
    run_and_score,
    save_snapshot,
    score,
    topk_indices,
)


def closed_form(dst_batches, lam, num_nodes):
    """Sum of lam ** age over every occurrence; age counts the decays applied since."""
    total = len(dst_batches)
    out = [0.0] * num_nodes
    for b, batch in enumerate(dst_batches):
        for d in batch:
            out[d] += lam ** (total - b)
    return np.array(out)


def oracle_topk(counts, k):
    return sorted(range(len(counts)), key=lambda i: (-counts[i], i))[:k]


def test_init_state():
    s = init_state(4, 0.9, 200)
    assert s.counts.tolist() == [0, 0, 0, 0]
    assert init_state(3, 1.0).lam == 1.0
    for bad in (0.0, -0.1, 1.5, float("nan")):
        with pytest.raises(ValueError):
            init_state(4, bad)
    with pytest.raises(ValueError):
        init_state(0, 0.5)


def test_consume_examples():
    s = consume_batch(init_state(4, 0.5), [3])
    assert s.counts[3] == 0.5
    s = consume_batch(init_state(4, 0.5), [3, 3])
    assert s.counts[3] == 1.0
    s = consume_batch(consume_batch(init_state(4, 0.5), [3]), [])
    assert s.counts[3] == closed_form([[3], []], 0.5, 4)[3] == 0.25
    assert s.batches_consumed == 2
    with pytest.raises(IndexError):
        consume_batch(init_state(4, 0.5), [4])


def test_topk_examples():
    s = init_state(4, 0.5)
    s.counts[:] = [0, 2, 2, 5]
    assert predict_topk(s, 2).tolist() == [3, 1]
    assert predict_topk(init_state(3, 0.5), 3).tolist() == [0, 1, 2]
    one = init_state(1, 0.5)
    one.counts[0] = 1
    assert predict_topk(one, 5).tolist() == [0]
    with pytest.raises(ValueError):
        predict_topk(s, 0)


def test_score_examples():
    s = init_state(4, 0.5)
    assert score(s, 2) == 0.0
    consume_batch(s, [3])
    assert score(s, 3) == 0.5 and score(s, 0) == 0.0
    with pytest.raises(IndexError):
        score(s, 9)


@pytest.mark.parametrize("b", [1, 2, 5, 12])
@pytest.mark.parametrize("lam", [0.3, 0.9, 1.0])
def test_score_geometric_sum(lam, b):
    s = init_state(5, lam)
    for _ in range(b):
        consume_batch(s, [2])
    expected = sum(lam ** i for i in range(1, b + 1))
    assert score(s, 2) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2 ** 31), lam=st.sampled_from([0.5, 0.9, 0.99, 1.0]),
       n_batches=st.integers(0, 30), n_nodes=st.integers(1, 15))
def test_closed_form_property(seed, lam, n_batches, n_nodes):
    rng = np.random.default_rng(seed)
    batches = [rng.integers(0, n_nodes, rng.integers(0, 12)).tolist() for _ in range(n_batches)]
    s = init_state(n_nodes, lam)
    for b in batches:
        consume_batch(s, b)
    np.testing.assert_allclose(s.counts, closed_form(batches, lam, n_nodes), rtol=1e-9, atol=0)
    assert (s.counts >= 0).all() and np.isfinite(s.counts).all()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(1, 40), k=st.integers(1, 45))
def test_topk_matches_sorted_oracle(seed, n, k):
    rng = np.random.default_rng(seed)
    values = rng.integers(0, 4, n).astype(float)
    assert topk_indices(values, k).tolist() == oracle_topk(values.tolist(), k)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), c=st.floats(1e-3, 1e3))
def test_topk_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    values = rng.random(30) * (rng.random(30) < 0.6)
    assert topk_indices(values, 10).tolist() == topk_indices(values * c, 10).tolist()


def test_lambda_one_counts_are_cumulative():
    rng = np.random.default_rng(1)
    dst = rng.integers(0, 20, 1000)
    s = init_state(20, 1.0, 37)
    ds = TemporalDataset.from_arrays(np.zeros(1000, int), dst, np.arange(1000), num_nodes=20)
    for b in batch_iter(ds, 37):
        consume_batch(s, b)
    assert np.array_equal(s.counts, np.bincount(dst, minlength=20).astype(float))


def test_prediction_is_causal():
    """The state used to score batch i is unchanged by rewriting batches >= i."""
    rng = np.random.default_rng(2)
    dst = rng.integers(0, 30, 1000)
    other = dst.copy()
    other[600:] = rng.integers(0, 30, 400)
    states = []
    for d in (dst, other):
        s = init_state(30, 0.8)
        for i in range(0, 600, 100):
            consume_batch(s, d[i:i + 100])
        states.append(s.counts.copy())
    assert np.array_equal(*states)


def test_snapshot_round_trip(tmp_path):
    s = init_state(6, 0.37, 50)
    consume_batch(s, [1, 2, 2, 5])
    consume_batch(s, [0])
    p = tmp_path / "snap.txt"
    save_snapshot(s, p)
    back = load_snapshot(p)
    assert np.array_equal(back.counts, s.counts)
    assert (back.lam, back.batch_size, back.batches_consumed, back.edges_consumed) == (0.37, 50, 2, 5)
    assert p.read_text().splitlines()[0].startswith("# num_nodes=6 lambda=0.37")


# --- streaming evaluation ----------------------------------------------------

def small_splits(seed=0, n=240, nodes=25):
    rng = np.random.default_rng(seed)
    ds = TemporalDataset.from_arrays(rng.integers(0, nodes, n), rng.integers(0, nodes, n),
                                     np.sort(rng.integers(0, 80, n)), num_nodes=nodes, name="toy")
    return chronological_split(ds, SplitSpec.ratio(0.6, 0.2))


def brute_force_poptrack_mrr(splits, lam, batch_size, neg, split):
    """Replay with plain Python lists: score every list before updating the counter."""
    counts = [0.0] * splits.full.num_nodes
    rr = []
    order = ["train", "val", "test"][: ["train", "val", "test"].index(split) + 1]
    for name in order:
        part = splits[name]
        for a in range(0, len(part), batch_size):
            idx = range(a, min(a + batch_size, len(part)))
            if name == split:
                for i in idx:
                    p = counts[int(part.dst[i])]
                    ns = [counts[x] for x in neg[i].tolist()]
                    rank = 1 + sum(x > p for x in ns) + sum(x == p for x in ns) / 2
                    rr.append(1 / rank)
            for i in idx:
                counts[int(part.dst[i])] += 1
            counts = [c * lam for c in counts]
    return sum(rr) / len(rr)


@pytest.mark.parametrize("lam,batch_size", [(0.5, 7), (0.9, 20), (1.0, 200)])
def test_run_and_score_matches_replay(lam, batch_size):
    sp = small_splits()
    neg = gen_eval_negatives_naive(sp, "test", q=8, seed=4)
    got = run_and_score(sp, lam, batch_size, neg).value
    assert got == pytest.approx(brute_force_poptrack_mrr(sp, lam, batch_size, neg, "test"), abs=1e-12)


def test_run_and_score_is_deterministic():
    sp = small_splits(3)
    neg = gen_eval_negatives_naive(sp, "val", q=8, seed=1)
    a = run_and_score(sp, 0.9, 20, neg, split="val", keep_per_edge=True)
    b = run_and_score(sp, 0.9, 20, neg, split="val", keep_per_edge=True)
    assert a.value == b.value and np.array_equal(a.per_edge_rr, b.per_edge_rr)


def test_unique_max_positive_has_rr_one():
    ds = TemporalDataset.from_arrays([0] * 6 + [1], [5] * 6 + [5], list(range(7)), num_nodes=30)
    sp = chronological_split(ds, SplitSpec.boundary(3, 5))
    scorer = PopTrackScorer(30, 0.9, 1)
    from tgpop.evaluation import evaluate
    from tgpop.negatives import NegativeSampleSet
    from tgpop.graphstore import split_fingerprint
    ids = np.arange(10, 30)
    neg = NegativeSampleSet("naive", {"q": 20}, 0, split_fingerprint(sp.test, "test"),
                            np.array([0, 20]), ids)
    rep = evaluate(scorer, sp, "test", neg, batch_size=1, keep_per_edge=True)
    assert rep.per_edge_rr.tolist() == [1.0]


def test_all_unseen_tie_gives_one_over_eleven():
    # positive and all 20 negatives have never been a destination
    ds = TemporalDataset.from_arrays([0, 0, 0], [1, 1, 2], [0, 1, 2], num_nodes=30)
    sp = chronological_split(ds, SplitSpec.boundary(0, 1))
    from tgpop.evaluation import evaluate
    from tgpop.negatives import NegativeSampleSet
    from tgpop.graphstore import split_fingerprint
    neg = NegativeSampleSet("naive", {"q": 20}, 0, split_fingerprint(sp.test, "test"),
                            np.array([0, 20]), np.arange(10, 30))
    rep = evaluate(PopTrackScorer(30, 0.9), sp, "test", neg, keep_per_edge=True)
    assert rep.per_edge_rr[0] == pytest.approx(1 / 11)


def test_misaligned_negatives_rejected():
    sp = small_splits()
    neg = gen_eval_negatives_naive(sp, "val", q=8, seed=1)
    from tgpop.negatives import SplitMismatch
    with pytest.raises(SplitMismatch):
        run_and_score(sp, 0.9, 20, neg, split="test")


def test_grid_search():
    sp = small_splits(5)
    neg = gen_eval_negatives_naive(sp, "val", q=8, seed=2)
    res = grid_search_lambda(sp, [0.94], 20, neg)
    assert res.best_lambda == 0.94
    res = grid_search_lambda(sp, [0.3, 0.6, 0.9, 0.99], 20, neg)
    assert res.table[res.best_lambda] == max(res.table.values())
    with pytest.raises(ValueError):
        grid_search_lambda(sp, [], 20, neg)


def test_grid_search_ties_pick_smaller_lambda():
    # every positive is a never-seen node, so all lambdas tie
    ds = TemporalDataset.from_arrays([0] * 40, list(range(40)), list(range(40)), num_nodes=80)
    sp = chronological_split(ds, SplitSpec.ratio(0.5, 0.25))
    neg = gen_eval_negatives_naive(sp, "val", q=5, seed=0)
    res = grid_search_lambda(sp, [0.99, 0.5, 0.7], 4, neg)
    assert len(set(res.table.values())) == 1
    assert res.best_lambda == 0.5
