import json

import numpy as np
import pytest

from bess_om.knowledge import (
    KnowledgeError,
    KnowledgeIndex,
    MockEmbeddingProvider,
    embed,
    expand_query,
    parse_slices,
    render_snippets,
    retrieve_topk,
)
from bess_om.llm import MockLLM

from conftest import SAMPLE_CORPUS, ScriptedLLM
from oracles import brute_force_retrieval


class StubProvider:
    """Handcrafted vectors keyed by exact text."""

    def __init__(self, mapping, dim):
        self.mapping = mapping
        self.dim = dim
        self.fingerprint = "stub-v1"

    def embed(self, texts):
        return [list(self.mapping[t]) for t in texts]


class TestParseSlices:
    def test_two_headings_two_slices(self):
        slices, diags = parse_slices("# One\nbody one text\n\n# Two\nbody two text\n")
        assert [s.key for s in slices] == ["One", "Two"]
        assert slices[0].body == "body one text"

    def test_heading_without_body_skipped_with_diagnostic(self):
        slices, diags = parse_slices("# Empty\n\n# Full\nsome body\n")
        assert [s.key for s in slices] == ["Full"]
        assert any("no body" in d for d in diags)

    def test_body_length_outside_band_warns_only(self):
        slices, diags = parse_slices("# Short\ntiny body\n")
        assert len(slices) == 1
        assert any("advisory" in d for d in diags)

    def test_no_headings_is_error(self):
        with pytest.raises(KnowledgeError, match="no '# ' headings"):
            parse_slices("just some text\nwithout headings\n")

    def test_sample_corpus_parses_clean(self):
        slices, diags = parse_slices(SAMPLE_CORPUS, source="sample")
        assert len(slices) == 6
        assert diags == []
        assert all(40 <= len(s.body.split()) <= 200 for s in slices)


class TestEmbed:
    def test_deterministic(self, mock_embedder):
        a = embed(["same text", "other"], mock_embedder)
        b = embed(["same text", "other"], mock_embedder)
        assert np.array_equal(a, b)

    def test_unit_norm(self, mock_embedder):
        vectors = embed([f"text {i}" for i in range(10)], mock_embedder)
        norms = np.linalg.norm(vectors, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6

    def test_dimension_mismatch_detected(self):
        class BadProvider:
            fingerprint = "bad"

            def embed(self, texts):
                return [[1.0, 0.0], [1.0, 0.0, 0.0]]

        with pytest.raises(KnowledgeError, match="dimension mismatch"):
            embed(["a", "b"], BadProvider())


class TestRetrieveTopk:
    def test_self_similarity_ranks_first(self, sample_index, mock_embedder):
        key = sample_index.slices[2].key
        hits = retrieve_topk([key], sample_index, mock_embedder, k=3)
        assert hits[0].slice_id == sample_index.slices[2].id
        assert hits[0].fused_score == pytest.approx(1.0, abs=1e-6)

    def test_matches_brute_force_oracle_randomized(self, mock_embedder):
        rng = np.random.default_rng(101)
        for trial in range(100):
            n_keys = 50
            keys = [f"key {trial}-{i} " + "".join(rng.choice(list("abcdef"), 4))
                    for i in range(n_keys)]
            slices_md = "\n".join(
                f"# {k}\nbody text for slice number {i} with some words\n"
                for i, k in enumerate(keys)
            )
            slices, _ = parse_slices(slices_md, source=f"t{trial}")
            index = KnowledgeIndex.build(slices, mock_embedder)
            queries = [f"query {trial}-{j}" for j in range(3)]
            hits = retrieve_topk(queries, index, mock_embedder, k=5)

            q_vecs = embed(queries, mock_embedder)
            expected = brute_force_retrieval(q_vecs, index.vectors,
                                             [s.id for s in slices], k=5)
            got = [(h.slice_id, h.fused_score, h.best_query_index) for h in hits]
            for (gid, gscore, gq), (eid, escore, eq) in zip(got, expected):
                assert gid == eid
                assert gscore == pytest.approx(escore, abs=1e-12)
                assert gq == eq
            assert all(-1.0 <= h.fused_score <= 1.0 for h in hits)

    def test_query_permutation_invariant_ids(self, sample_index, mock_embedder):
        queries = ["voltage spread", "cooling fault", "capacity fade"]
        a = retrieve_topk(queries, sample_index, mock_embedder, k=4)
        b = retrieve_topk(queries[::-1], sample_index, mock_embedder, k=4)
        assert [h.slice_id for h in a] == [h.slice_id for h in b]
        assert [h.fused_score for h in a] == pytest.approx(
            [h.fused_score for h in b])

    def test_orthogonal_slice_keeps_order(self):
        dim = 4
        mapping = {
            "q": np.array([1.0, 0.0, 0.0, 0.0]),
            "key a": np.array([0.9, 0.1, 0.0, 0.0]) / np.linalg.norm([0.9, 0.1, 0, 0]),
            "key b": np.array([0.5, 0.5, 0.0, 0.0]) / np.linalg.norm([0.5, 0.5, 0, 0]),
            "key c": np.array([0.0, 0.0, 0.0, 1.0]),
        }
        provider = StubProvider(mapping, dim)

        def build(keys):
            md = "\n".join(f"# {k}\nbody for {k} with enough words\n" for k in keys)
            slices, _ = parse_slices(md, source="stub")
            return KnowledgeIndex.build(slices, provider)

        without = retrieve_topk(["q"], build(["key a", "key b"]), provider, k=2)
        with_extra = retrieve_topk(["q"], build(["key a", "key b", "key c"]),
                                   provider, k=3)
        assert [h.fused_score for h in with_extra[:2]] == pytest.approx(
            [h.fused_score for h in without])

    def test_k_larger_than_corpus_returns_all(self, sample_index, mock_embedder):
        hits = retrieve_topk(["anything"], sample_index, mock_embedder, k=100)
        assert len(hits) == len(sample_index)

    def test_k_zero_rejected(self, sample_index, mock_embedder):
        with pytest.raises(ValueError):
            retrieve_topk(["x"], sample_index, mock_embedder, k=0)

    def test_provider_fingerprint_mismatch(self, sample_index):
        other = MockEmbeddingProvider(dim=32)
        with pytest.raises(KnowledgeError, match="provider"):
            retrieve_topk(["x"], sample_index, other, k=2)


class TestIndexPersistence:
    def test_round_trip(self, sample_index, tmp_path, mock_embedder):
        sample_index.save(tmp_path / "idx")
        loaded = KnowledgeIndex.load(tmp_path / "idx")
        assert [s.id for s in loaded.slices] == [s.id for s in sample_index.slices]
        assert np.allclose(loaded.vectors, sample_index.vectors)
        hits_a = retrieve_topk(["thermal fault"], sample_index, mock_embedder, k=3)
        hits_b = retrieve_topk(["thermal fault"], loaded, mock_embedder, k=3)
        assert [h.slice_id for h in hits_a] == [h.slice_id for h in hits_b]

    def test_snippets_rendering(self, sample_index, mock_embedder):
        hits = retrieve_topk(["cooling"], sample_index, mock_embedder, k=2)
        text = render_snippets(hits, sample_index)
        assert text.startswith("[S1] ")
        assert "[S2]" in text


class TestExpandQuery:
    def test_mock_expansion_three_plus_original(self, mock_llm):
        result = expand_query("Why does voltage spread grow?", mock_llm)
        assert len(result.queries) == 4
        assert result.queries[-1] == "Why does voltage spread grow?"
        assert not result.degraded

    def test_malformed_reply_degrades_to_original(self):
        llm = ScriptedLLM({"expansion": ["not json at all"]})
        result = expand_query("question?", llm)
        assert result.queries == ["question?"]
        assert result.degraded

    def test_wrong_arity_degrades(self):
        llm = ScriptedLLM({"expansion": [json.dumps(["only", "two"])]})
        result = expand_query("question?", llm)
        assert result.degraded

    def test_empty_question_rejected(self, mock_llm):
        with pytest.raises(ValueError):
            expand_query("   ", mock_llm)

    def test_include_original_flag(self, mock_llm):
        result = expand_query("Why?", mock_llm, include_original=False)
        assert len(result.queries) == 3
