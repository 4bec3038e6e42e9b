import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masvqa.container import DumpMeta, EmptyGroup, layout_of, synth_dump
from masvqa.phrases import (
    CharSpan,
    extract_phrases,
    interaction_matrix,
    knowledge_token_scores,
    merge_spans,
    select_phrases,
    select_top_tokens,
    tokens_to_spans,
)


def text_layout(knowledge="alpha beta gamma delta", truncated=False, effective=None):
    """Layout over a real string: CLS, 4 knowledge tokens, SEP, 2 question
    tokens, SEP -> L = 9."""
    words = knowledge.split(" ")
    offsets = [(0, 0)]
    pos = 0
    for w in words:
        offsets.append((pos, pos + len(w)))
        pos += len(w) + 1
    offsets.append((0, 0))
    offsets.extend([(0, 0)] * 2)
    offsets.append((0, 0))
    L = len(offsets)
    meta = DumpMeta(
        heads=1,
        seq_len=L,
        patches=4,
        grid=2,
        block=7,
        sep_positions=(1 + len(words), L - 1),
        offset_mapping=tuple(offsets),
        knowledge_text=knowledge,
        question_text="q1 q2",
        truncated=truncated,
        effective_knowledge_len=effective,
    )
    return layout_of(meta)


def closure_merge(spans, gap):
    """O(n^2) union-closure oracle: repeatedly fuse any two spans within the
    gap until a fixpoint is reached."""
    items = [[s.start, s.end] for s in spans]
    changed = True
    while changed:
        changed = False
        for i in range(len(items)):
            for j in range(len(items)):
                if i == j:
                    continue
                a, b = items[i], items[j]
                if a[0] <= b[0] and b[0] - a[1] <= gap:
                    items[i] = [a[0], max(a[1], b[1])]
                    items.pop(j)
                    changed = True
                    break
            if changed:
                break
    return sorted((s, e) for s, e in items)


class TestInteractionMatrix:
    def test_all_nonpositive_gradients(self):
        attn = np.random.default_rng(0).random((2, 4, 4)).astype(np.float32)
        grad = -np.ones((2, 4, 4), dtype=np.float32)
        assert (interaction_matrix(attn, grad) == 0).all()

    def test_identity_attention_unit_gradient(self):
        attn = np.eye(3, dtype=np.float32)[None]
        grad = np.ones((1, 3, 3), dtype=np.float32)
        np.testing.assert_allclose(interaction_matrix(attn, grad), np.eye(3))

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(21)
        attn = rng.random((2, 5, 5)).astype(np.float32)
        grad = rng.standard_normal((2, 5, 5)).astype(np.float32)
        got = interaction_matrix(attn, grad)
        H = 2
        for i in range(5):
            for j in range(5):
                acc = 0.0
                for h in range(H):
                    g = grad[h, i, j]
                    if g > 0:
                        acc += float(attn[h, i, j]) * float(g)
                assert got[i, j] == pytest.approx(acc / H, rel=1e-6, abs=1e-12)


class TestKnowledgeTokenScores:
    def test_against_summation_oracle(self):
        layout = text_layout()
        matrix = np.random.default_rng(1).random((9, 9))
        scores = knowledge_token_scores(matrix, layout)
        idx_q = list(layout.idx_question)
        for j in layout.idx_knowledge:
            expect = sum(matrix[i, j] for i in idx_q) / len(idx_q)
            assert scores[j] == pytest.approx(expect, rel=1e-12)

    def test_zero_matrix(self):
        layout = text_layout()
        scores = knowledge_token_scores(np.zeros((9, 9)), layout)
        assert all(v == 0 for v in scores.values())


class TestSelectTopTokens:
    def test_basic_top2(self):
        scores = {10: 0.1, 11: 0.9, 12: 0.5}
        assert select_top_tokens(scores, 2) == [11, 12]

    def test_tie_breaks_to_smaller_index(self):
        scores = {5: 0.5, 3: 0.5, 9: 0.5}
        assert select_top_tokens(scores, 2) == [3, 5]

    def test_against_full_sort_oracle(self):
        rng = np.random.default_rng(2)
        scores = {int(i): float(v) for i, v in enumerate(rng.random(40))}
        got = select_top_tokens(scores, 7)
        expect = sorted(sorted(scores, key=lambda j: (-scores[j], j))[:7])
        assert got == expect

    def test_m_larger_than_pool(self):
        assert select_top_tokens({1: 0.2, 2: 0.1}, 30) == [1, 2]

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_permutation_stability(self, seed):
        rng = np.random.default_rng(seed)
        values = rng.integers(0, 3, size=12) / 2  # plenty of ties
        scores = {int(i): float(v) for i, v in enumerate(values)}
        shuffled_keys = list(scores)
        rng.shuffle(shuffled_keys)
        shuffled = {k: scores[k] for k in shuffled_keys}
        assert select_top_tokens(scores, 5) == select_top_tokens(shuffled, 5)


class TestTokensToSpans:
    def test_direct_mapping(self):
        layout = text_layout()
        spans = tokens_to_spans([2], layout)  # token 2 = "beta" at [6, 10)
        assert spans == [CharSpan(6, 10)]
        assert layout.knowledge_text[6:10] == "beta"

    def test_zero_offset_dropped(self):
        layout = text_layout()
        assert tokens_to_spans([1, 5], layout) == [CharSpan(0, 5)]  # SEP at 5 dropped

    def test_truncation_clips_and_drops(self):
        layout = text_layout(truncated=True, effective=12)
        # "gamma" spans [11,16) -> clipped to [11,12); "delta" [17,22) -> dropped
        spans = tokens_to_spans([3, 4], layout)
        assert spans == [CharSpan(11, 12)]


class TestMergeSpans:
    def test_distance_one_merges_with_gap_three(self):
        assert merge_spans([CharSpan(0, 3), CharSpan(4, 7)], 3) == [CharSpan(0, 7)]

    def test_distance_four_does_not_merge_with_gap_three(self):
        spans = [CharSpan(0, 3), CharSpan(7, 9)]
        assert merge_spans(spans, 3) == spans

    def test_distance_three_boundary_merges(self):
        assert merge_spans([CharSpan(0, 3), CharSpan(6, 9)], 3) == [CharSpan(0, 9)]

    def test_adjacent_always_merges_at_gap_zero(self):
        assert merge_spans([CharSpan(0, 3), CharSpan(3, 5)], 0) == [CharSpan(0, 5)]

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            merge_spans([CharSpan(5, 8), CharSpan(0, 2)], 3)

    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0, 1, 3, 10]))
    @settings(max_examples=60, deadline=None)
    def test_closure_oracle_and_idempotence(self, seed, gap):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 12))
        starts = np.sort(rng.integers(0, 80, size=n))
        spans = [CharSpan(int(s), int(s) + int(rng.integers(1, 9))) for s in starts]
        merged = merge_spans(spans, gap)
        assert [(s.start, s.end) for s in merged] == closure_merge(spans, gap)
        assert merge_spans(merged, gap) == merged
        for a, b in zip(merged, merged[1:]):
            assert b.start - a.end > gap


class TestExtractPhrases:
    def test_exact_substring(self):
        knowledge = "Aldrovanda vesiculosa is a plant"
        layout = text_layout(knowledge=knowledge)
        kws = extract_phrases([CharSpan(0, 21)], layout, 10, {})
        assert kws.texts() == ["Aldrovanda vesiculosa"]

    def test_first_max_phrases_kept_in_text_order(self):
        knowledge = " ".join(f"w{i}" for i in range(12))
        layout = text_layout(knowledge=knowledge)
        spans = []
        pos = 0
        for i in range(12):
            w = f"w{i}"
            spans.append(CharSpan(pos, pos + len(w)))
            pos += len(w) + 1
        kws = extract_phrases(spans, layout, 10, {})
        assert len(kws.phrases) == 10
        assert kws.texts() == [f"w{i}" for i in range(10)]

    def test_whitespace_only_excluded(self):
        layout = text_layout(knowledge="ab   cd ef gh")
        kws = extract_phrases([CharSpan(2, 5), CharSpan(5, 7)], layout, 10, {})
        assert kws.texts() == ["cd"]

    def test_duplicate_texts_deduplicated(self):
        layout = text_layout(knowledge="cat xy cat zz")
        kws = extract_phrases([CharSpan(0, 3), CharSpan(7, 10)], layout, 10, {})
        assert kws.texts() == ["cat"]

    def test_out_of_bounds_span(self):
        layout = text_layout(knowledge="abc def ghi jkl")
        with pytest.raises(ValueError):
            extract_phrases([CharSpan(0, 99)], layout, 10, {})

    def test_score_is_max_over_intersecting_tokens(self):
        layout = text_layout(knowledge="alpha beta gamma delta")
        scores = {1: 0.2, 2: 0.9, 3: 0.4, 4: 0.1}
        kws = extract_phrases([CharSpan(0, 16)], layout, 10, scores)  # covers tokens 1-3
        assert kws.phrases[0].score == pytest.approx(0.9)


class TestEndToEnd:
    def test_deterministic_serialization(self):
        dump = synth_dump(5, 2, 20, 3)
        a = select_phrases(dump, m=5, gap=3, max_phrases=10)
        b = select_phrases(dump, m=5, gap=3, max_phrases=10)
        import json

        assert json.dumps(a.to_json()) == json.dumps(b.to_json())

    def test_phrases_are_verbatim_substrings(self):
        dump = synth_dump(6, 2, 24, 3)
        kws = select_phrases(dump, m=4, gap=1)
        for p in kws.phrases:
            assert dump.meta.knowledge_text[p.span.start : p.span.end] == p.text
