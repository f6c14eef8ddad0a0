import random

import pytest

import rumil


def labeled(rows, seed):
    cues = [["bakwas", "ghatiya", "kharab"], ["theek", "normal", "chalega"], ["zabardast", "acha", "shandar"]]
    filler = ["phone", "camera", "battery", "yr", "hai"]
    rng = random.Random(seed)
    texts, labels = [], []
    for i in range(rows):
        c = i % 3
        words = [rng.choice(cues[c]) for _ in range(2)] + [rng.choice(filler) for _ in range(3)]
        rng.shuffle(words)
        texts.append(" ".join(words))
        labels.append(c)
    return texts, labels


def test_normalize_examples():
    assert rumil.normalize("Yr KESIIII aaaaala phone hai!!") == "yar kese aala phone hai"
    assert rumil.normalize_tokens("Kesi ho yr") == ["kese", "ho", "yar"]
    assert rumil.tokenize("yr...   KESE?") == ["yr", "kese"]
    assert rumil.collapse_stress("sooooo") == "soo"
    assert len(rumil.BUILTIN_RULES.splitlines()) >= 30


def test_custom_rules_and_bad_rule():
    assert rumil.normalize("kesi", rules="^kesi$\tkaisa\n") == "kaisa"
    with pytest.raises(rumil.RumilError):
        rumil.normalize("x", rules="^(x$\ty\n")


def test_vocabulary_round_trip(tmp_path):
    v = rumil.build_vocab([["acha", "phone"], ["acha"]], min_count=1)
    assert v.tokens[4:] == ["acha", "phone"]
    assert "acha" in v and "bakwas" not in v
    v.save(tmp_path / "v.tsv")
    assert rumil.Vocabulary.load(tmp_path / "v.tsv") == v


def test_embeddings_train_save_load(tmp_path):
    texts, _ = labeled(200, 1)
    docs = [rumil.normalize_tokens(t) for t in texts]
    for method in ["w2v", "fasttext", "glove"]:
        emb, losses = rumil.train_embeddings(docs, method=method, dim=8, epochs=2, min_count=1, buckets=2000)
        assert emb.method == method
        assert emb.window == (15 if method == "glove" else 10)
        assert emb.vectors().shape == (len(emb), 8)
        assert len(losses) == 2
        neighbours = emb.nearest("acha", k=3)
        assert len(neighbours) == 3 and all(tok != "acha" for tok, _ in neighbours)
        emb.save(tmp_path / f"{method}.txt")
        back = rumil.load_embeddings(tmp_path / f"{method}.txt", method)
        assert back.tokens == emb.tokens
        assert max(abs(a - b) for a, b in zip(back.vector("acha"), emb.vector("acha"))) < 1e-6


def test_shallow_baselines_fit_training_data():
    texts, labels = labeled(60, 2)
    for kind in ["nb", "lr", "svm"]:
        model = rumil.fit_shallow(texts, labels, kind=kind)
        assert model.kind == kind
        preds = model.predict(texts)
        assert rumil.evaluate(labels, preds)["accuracy"] > 0.9


def test_evaluate_hand_example():
    r = rumil.evaluate([0, 0, 1, 2], [0, 1, 1, 2])
    assert r["accuracy"] == 0.75
    assert abs(r["f1"] - (2 / 3 + 2 / 3 + 1) / 3) < 1e-12
    assert r["confusion"][0] == [1, 1, 0]
    with pytest.raises(rumil.RumilError):
        rumil.evaluate([], [])


def test_split_proportions():
    labels = [0] * 40 + [1] * 30 + [2] * 30
    train, val, test = rumil.stratified_split(labels, seed=3)
    assert (len(train), len(val), len(test)) == (60, 10, 30)
    assert sorted(train + val + test) == list(range(100))


def test_cli_pipeline_and_hybrid_model(tmp_path):
    texts, labels = labeled(60, 3)
    rows = "".join(f"{t}\t{rumil.LABELS[y]}\n" for t, y in zip(texts, labels))
    (tmp_path / "all.tsv").write_text(rows)
    (tmp_path / "raw.txt").write_text("".join(t + "\n" for t in texts))
    args = ["train", "--train", str(tmp_path / "all.tsv"), "--val", str(tmp_path / "all.tsv"),
            "-o", str(tmp_path / "m.ckpt"), "--min-count", "1", "--hidden", "4", "--bigru-hidden", "3",
            "--epochs", "3"]
    for method in ["w2v", "fasttext", "glove"]:
        out = tmp_path / f"{method}.txt"
        code, _, err = rumil.run_cli(["embed", "-i", str(tmp_path / "raw.txt"), "-o", str(out), "--method", method,
                                      "--dim", "5", "--epochs", "1", "--min-count", "1", "--buckets", "500"])
        assert code == 0, err
        args += [f"--{method}", str(out)]
    code, _, err = rumil.run_cli(args)
    assert code == 0, err
    model = rumil.HybridModel(tmp_path / "m.ckpt")
    assert model.bigru and model.static_mode == "mixed"
    assert sum(name.endswith(".W") and ".gru." in name for name in model.tensor_names()) == 9
    preds = model.predict(["acha phone", "acha phone", "!!!"])
    assert preds[0] == preds[1] and all(p in (0, 1, 2) for p in preds)
    probs = model.probabilities(["acha phone"])
    assert probs.shape == (1, 3) and abs(probs.sum() - 1.0) < 1e-12
    code, out, _ = rumil.run_cli(["predict", "-m", str(tmp_path / "m.ckpt")], "acha phone\n")
    assert code == 0 and out.strip() == rumil.LABELS[preds[0]]
    assert rumil.run_cli(["embed"])[0] == 1
