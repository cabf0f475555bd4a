import math

import pytest

import asag


def test_tokenize_and_vocab():
    assert asag.tokenize("The cat.") == ["the", "cat", "."]
    vocab = asag.build_vocab([asag.AnswerPair("1", "a a b", "x", 1)])
    assert vocab.id("a") == 2
    assert vocab.id("b") == 3
    assert vocab.id("unseen") == 1
    assert len(vocab) == 5
    assert "x" in vocab


def test_auc_and_accuracy():
    assert asag.auc([0.9, 0.7, 0.4, 0.1], [1, 0, 1, 0]) == 0.75
    assert asag.accuracy([0.7, 0.2, 0.6], [1, 0, 0]) == pytest.approx(2 / 3)
    with pytest.raises(asag.DataError):
        asag.auc([0.1, 0.2], [1, 1])


def test_dataset_round_trip(tmp_path):
    pairs = [
        asag.AnswerPair("a", "tab\there", "new\nline", 1),
        asag.AnswerPair("b", "back\\slash", "café", 0),
    ]
    path = str(tmp_path / "d.tsv")
    asag.write_dataset(pairs, path)
    assert asag.read_dataset(path) == pairs


def test_generator_is_balanced_and_seeded():
    a = asag.generate_dataset(pairs=100, seed=3)
    b = asag.generate_dataset(pairs=100, seed=3)
    assert a == b
    assert sum(p.label for p in a) == 50
    with pytest.raises(asag.ConfigError):
        asag.generate_dataset(pairs=10, bogus=1)


def test_lr_baseline_scores_are_probabilities():
    pairs = asag.generate_dataset(pairs=200, seed=4)
    vocab = asag.build_vocab(pairs)
    model = asag.fit_lr_baseline(pairs, vocab)
    scores = model.scores(pairs, vocab)
    assert all(0.0 < s < 1.0 for s in scores)
    assert asag.auc(scores, [p.label for p in pairs]) > 0.5
    assert len(asag.lr_features(pairs[0], vocab)) == 5


def test_train_evaluate_grade(tmp_path):
    data = tmp_path / "data"
    sizes = asag.generate_splits(str(data), pairs=120, seed=2)
    assert sizes == (84, 12, 24)
    run = tmp_path / "run"
    logs = []
    result = asag.train(
        {
            "data_dir": str(data),
            "out_dir": str(run),
            "epochs": 2,
            "d_emb": 8,
            "d_model": 8,
            "head_count": 2,
            "d_ffn": 16,
            "pooling_dim": 8,
            "max_len": 12,
            "positional_encoding": False,
        },
        logs.append,
    )
    assert len(result["epochs"]) == 2
    assert "epoch 1" in logs[0]
    metrics = asag.evaluate(str(run / "final.ckpt"), str(data / "validation.tsv"))
    assert metrics["n"] == 12
    assert metrics["auc"] == pytest.approx(result["epochs"][-1]["val_auc"], abs=1e-12)
    p = asag.grade(str(run / "best.ckpt"), "c1s0 w2", "c1s1 w2")
    assert 0.0 <= p <= 1.0 and math.isfinite(p)


def test_gradcheck_passes():
    rows = asag.gradcheck()
    assert rows and all(passed for _, _, _, passed in rows)


def test_cli_entry_point():
    status, out, _ = asag.run_cli(["grade", "--checkpoint", "/nonexistent.ckpt", "--student", "a", "--reference", "b"])
    assert status == 2
    status, _, err = asag.run_cli(["train", "--no-such-flag"])
    assert status == 1
