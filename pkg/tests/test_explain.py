import json

import numpy as np
import pytest

from conftest import tiny_model
from vgcn_fuse.errors import MissingAttention
from vgcn_fuse.explain import (
    AttentionReport,
    attribution_matrix,
    cls_attention,
    dimension_words,
    explain,
)
from vgcn_fuse.graph import VocabGraph


@pytest.fixture
def graph():
    return VocabGraph.from_edges(6, 0.2, [(0, 1, 0.5), (1, 2, 0.4), (4, 5, 0.9)])


def test_zero_footprint_words_score_exactly_zero(graph):
    rng = np.random.default_rng(0)
    weights = rng.standard_normal((6, 3))
    z = attribution_matrix({0: 1.0}, graph, weights)
    # word 0 reaches 0 and 1 only
    assert np.all(z[[2, 3, 4, 5]] == 0.0)
    assert np.all(z[[0, 1]] != 0.0)


def test_dimension_words_ranks_within_support(graph):
    weights = np.array([[1.0, -1.0], [3.0, 0.0], [9.0, 9.0], [8.0, 8.0], [7.0, 7.0], [0.5, 0.5]])
    ranked = dimension_words({0: 1.0}, graph, weights, k=2)
    z = attribution_matrix({0: 1.0}, graph, weights)
    assert [i for i, _ in ranked[0]] == [1, 0]
    assert ranked[0][0][1] == z[1, 0]
    # only two words are reachable, so the 9s and 8s never appear
    assert all(i in (0, 1) for dim in ranked for i, _ in dim)


def test_dimension_words_ties_go_to_smaller_id():
    graph = VocabGraph.from_edges(3, 0.2, [])
    ranked = dimension_words({0: 1.0, 2: 1.0}, graph, np.ones((3, 1)), k=2)
    assert [i for i, _ in ranked[0]] == [0, 2]


def test_dimension_words_empty_document(graph):
    assert dimension_words({}, graph, np.ones((6, 2))) == [[], []]
    with pytest.raises(ValueError):
        dimension_words({0: 1.0}, graph, np.ones((6, 2)), k=0)


def test_cls_attention_split(toy_data):
    out = tiny_model("vgcn-bert", toy_data).forward(toy_data["batch"], toy_data["graph"])
    reports = cls_attention(out)
    head = reports[0][0][0]
    assert len(head["graph"]) == 2
    assert head["graph_mass"] == pytest.approx(sum(head["graph"]))
    total = head["cls"] + sum(head["graph"]) + sum(head["word"])
    assert total == pytest.approx(1.0, abs=1e-12)


def test_cls_attention_requires_encoder(toy_data):
    out = tiny_model("vgcn-only", toy_data).forward(toy_data["batch"], toy_data["graph"])
    with pytest.raises(MissingAttention):
        cls_attention(out)


def test_bert_only_has_no_graph_mass(toy_data):
    out = tiny_model("bert-only", toy_data).forward(toy_data["batch"], toy_data["graph"])
    head = cls_attention(out)[0][0][0]
    assert head["graph"] == [] and head["graph_mass"] == 0.0


@pytest.mark.parametrize("mode", ["vgcn-bert", "bert-only", "vgcn-only"])
def test_explain_reports(mode, toy_data):
    model = tiny_model(mode, toy_data)
    reports = explain(model, toy_data["batch"], toy_data["graph"], toy_data["vocab"].tokens, k=2, start_index=10)
    assert [r.index for r in reports[:2]] == [10, 11]
    first = reports[0]
    assert first.tokens[0] == {"token": "[CLS]", "kind": "cls"}
    assert first.gold == int(toy_data["batch"].labels[0])
    assert sum(first.probs) == pytest.approx(1.0)
    if mode == "bert-only":
        assert first.dimensions == []
    else:
        # graph-embedding dimensions for vgcn-bert, class columns for the tf vgcn-only head
        assert len(first.dimensions) == 2
        assert all(len(d["words"]) <= 2 for d in first.dimensions)
    if mode == "vgcn-only":
        assert first.attention is None
    line = first.dumps()
    assert AttentionReport.from_json(json.loads(line)) == first


def test_report_version_checked():
    with pytest.raises(ValueError):
        AttentionReport.from_json({"version": 99})
