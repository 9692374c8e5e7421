import numpy as np
import pytest

from conftest import tiny_config, tiny_model
from vgcn_fuse.errors import ConfigMismatch
from vgcn_fuse.model import MODES, Batch, Classifier, ModelConfig, param_names


@pytest.mark.parametrize("mode", MODES)
def test_forward_shapes(mode, toy_data):
    model = tiny_model(mode, toy_data)
    out = model.forward(toy_data["batch"], toy_data["graph"])
    assert out.logits.shape == (len(toy_data["batch"]), 2)
    if mode == "vgcn-only":
        assert out.attentions is None
    else:
        assert len(out.attentions) == 1
    probs = model.predict_proba(toy_data["batch"], toy_data["graph"])
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_vgcn_bert_stream_contains_graph_tokens(toy_data):
    out = tiny_model("vgcn-bert", toy_data).forward(toy_data["batch"], toy_data["graph"])
    assert out.stream.n_graph == 2
    assert out.graph_tokens.shape == (len(toy_data["batch"]), 2, 8)


def test_parameter_sets_per_mode(toy_data):
    v = len(toy_data["vocab"])
    names = {mode: param_names(tiny_config(mode, v)) for mode in MODES}
    assert "emb.graphpos" in names["vgcn-bert"] and "emb.graphpos" not in names["vanilla-concat"]
    assert not any(n.startswith("vgcn.") for n in names["bert-only"])
    assert names["vgcn-only"] == {"vgcn.W_vh", "vgcn.W_hc"}
    emb_only = param_names(tiny_config("vgcn-only", v, vgcn_input="embedding"))
    assert emb_only == {"emb.word", "vgcn.W_vh", "vgcn.W_hg", "cls.W", "cls.b"}


def test_same_seed_same_parameters(toy_data):
    a = tiny_model("vgcn-bert", toy_data, seed=4)
    b = tiny_model("vgcn-bert", toy_data, seed=4)
    c = tiny_model("vgcn-bert", toy_data, seed=5)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    assert not np.array_equal(a.params["cls.W"].data, c.params["cls.W"].data)


def test_forward_accepts_encoded_documents(toy_data):
    model = tiny_model("bert-only", toy_data)
    a = model.forward(toy_data["val"], toy_data["graph"]).logits.data
    b = model.forward(toy_data["batch"], toy_data["graph"]).logits.data
    np.testing.assert_array_equal(a, b)


def test_graph_required_and_sized(toy_data):
    model = tiny_model("vgcn-bert", toy_data)
    with pytest.raises(ConfigMismatch):
        model.forward(toy_data["batch"], None)
    tiny_model("bert-only", toy_data).forward(toy_data["batch"], None)


def test_config_validation_and_round_trip(toy_data):
    with pytest.raises(ConfigMismatch):
        ModelConfig("other", 10, 2)
    with pytest.raises(ConfigMismatch):
        ModelConfig("bert-only", 10, 1)
    config = tiny_config("vanilla-concat", 20)
    assert ModelConfig.from_json(config.to_json()) == config


def test_params_must_match_mode(toy_data):
    model = tiny_model("bert-only", toy_data)
    with pytest.raises(ConfigMismatch):
        Classifier(tiny_config("vgcn-bert", len(toy_data["vocab"]), toy_data["max_len"]), model.params)


def test_state_dict_round_trip(toy_data):
    model = tiny_model("vgcn-bert", toy_data)
    state = model.state_dict()
    model.params["cls.W"].data += 1.0
    model.load_state_dict(state)
    assert np.array_equal(model.params["cls.W"].data, state["cls.W"])
    bad = dict(state)
    bad["cls.W"] = np.zeros((3, 3))
    with pytest.raises(ConfigMismatch):
        model.load_state_dict(bad)


def test_batch_from_docs_builds_soft_labels(toy_data):
    batch = Batch.from_docs(toy_data["val"], len(toy_data["vocab"]), 2)
    np.testing.assert_array_equal(batch.soft_labels.argmax(axis=1), batch.labels)
    part = batch.select(slice(0, 3))
    assert len(part) == 3 and part.tf.shape[0] == 3


def test_vanilla_concat_has_no_cross_interaction(toy_data):
    # changing graph weights must not change the encoder's [CLS] attention maps
    model = tiny_model("vanilla-concat", toy_data)
    before = model.forward(toy_data["batch"], toy_data["graph"])
    model.params["vgcn.W_hg"].data *= 3.0
    after = model.forward(toy_data["batch"], toy_data["graph"])
    np.testing.assert_array_equal(before.attentions[0], after.attentions[0])
    assert not np.allclose(before.logits.data, after.logits.data)
