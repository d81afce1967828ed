import math

import numpy as np
import pytest

import protovit as pv


def test_prototypes_and_logits():
    emb = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 4.0], [0.0, 6.0]])
    protos, labels = pv.compute_prototypes(emb, [7, 7, 3, 3])
    assert labels == [3, 7]
    np.testing.assert_allclose(protos, [[0.0, 5.0], [1.0, 0.0]])

    lg = pv.logits(np.array([[1.0, 0.0]]), protos, labels)
    np.testing.assert_allclose(lg, [[-26.0, 0.0]])
    assert pv.predict(lg) == [1]
    assert pv.remap_labels([7], labels) == [1]


def test_uniform_logits_loss_is_log_n():
    lg = np.zeros((4, 5))
    assert pv.episodic_loss(lg, [0, 1, 2, 3]) == pytest.approx(math.log(5.0))


def test_accuracy_stats():
    s = pv.accuracy_stats([0.8, 1.0])
    assert s["mean"] == pytest.approx(0.9)
    assert s["ci95"] == pytest.approx(0.196)


def test_sample_episode_disjoint_and_sized():
    labels = [i % 10 for i in range(200)]
    ep = pv.sample_episode(labels, ways=5, shots=2, queries=3, seed=11)
    assert len(ep["support_indices"]) == 10
    assert len(ep["query_indices"]) == 15
    assert not set(ep["support_indices"]) & set(ep["query_indices"])


def test_model_forward_and_checkpoint(tmp_path):
    model = pv.Model(preset="micro", seed=3)
    assert model.num_parameters() > 0
    images = np.zeros((2, 3, 32, 32))
    emb = model.forward(images)
    assert emb.shape == (2, 64)
    np.testing.assert_allclose(emb[0], emb[1])  # identical inputs, same embedding

    path = str(tmp_path / "model.pvt")
    model.save(path)
    again = pv.Model.load(path).forward(images)
    np.testing.assert_allclose(emb, again)


def test_end_to_end_synthetic_round_trip(tmp_path):
    root = str(tmp_path / "data")
    n = pv.generate_synthetic(root, classes=5, per_class=6, image_size=32, seed=7)
    assert n == 30
    assert pv.manifest_hash(root) != 0

    x = pv.preprocess(root, "train", target_size=32, index=0)
    assert x.shape == (3, 32, 32)
    assert np.abs(x).max() <= 1.0

    run = str(tmp_path / "run")
    hist = pv.train(root, out_dir=run, preset="micro", episodes=3, ways=5, shots=1,
                    queries=1, target_size=32, eval_freq=2, val_episodes=2)
    assert len(hist) == 3
    assert all(math.isfinite(h["loss"]) for h in hist)

    rep = pv.evaluate(run + "/checkpoint.pvt", root, ways=5, shots=1, queries=1,
                      episodes=4, target_size=32)
    assert rep["episodes_completed"] == 4
    assert "Average Accuracy:" in rep["report"]


def test_gradcheck_subset_under_tolerance():
    errs = pv.gradcheck(["add", "softmax", "sq_euclidean"])
    assert set(errs) == {"add", "softmax", "sq_euclidean"}
    assert all(e <= pv.GRADCHECK_TOL for e in errs.values())
