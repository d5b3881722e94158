import json

import jsonschema
import pytest

from sem_tsr.cli import main
from sem_tsr.structure import STRUCTURE_SCHEMA


@pytest.fixture
def trained(tmp_path, monkeypatch):
    monkeypatch.setenv("SEM_SEED", "7")
    data = tmp_path / "data"
    (tmp_path / "s.json").write_text(json.dumps({"rows": [2, 3], "cols": [2, 3], "max_size": [160, 160], "version": 1}))
    assert main(["synth", "--config", str(tmp_path / "s.json"), "--out", str(data), "-n", "3"]) == 0
    conf = {"model": {"backbone": {"widths": [8, 8, 8, 8], "channels": 16}, "text_dim": 16, "heads": 2,
                      "merger_hidden": 32, "attn_dim": 32, "history_channels": 4},
            "train": {"epochs": 1, "batch_size": 2, "version": 1}}
    (tmp_path / "t.json").write_text(json.dumps(conf))
    assert main(["train", "--data", str(data), "--config", str(tmp_path / "t.json"), "--out", str(tmp_path / "ck")]) == 0
    return tmp_path


def test_synth_train_predict_eval(trained):
    data, ck = trained / "data", trained / "ck"
    assert json.loads((ck / "rejects.json").read_text()) == []
    gt = json.loads((data / "000000.json").read_text())
    tokens = [t for c in gt["cells"] for t in c.get("tokens", ())]
    (trained / "tok.json").write_text(json.dumps(tokens))
    pred_dir = trained / "pred"
    for name in ("000000", "000001"):
        args = ["predict", "--ckpt", str(ck / "checkpoint.pt"), "--image", str(data / f"{name}.png"),
                "--out", str(pred_dir / f"{name}.json")]
        if name == "000000":
            args += ["--tokens", str(trained / "tok.json"), "--debug-dir", str(trained / "dbg")]
        assert main(args) == 0
    out = json.loads((pred_dir / "000000.json").read_text())
    jsonschema.validate(out, STRUCTURE_SCHEMA)
    assert out["html"].startswith("<table>")
    assert (trained / "dbg" / "merge.json").exists() and (trained / "dbg" / "profiles.json").exists()

    assert main(["eval", "--pred", str(pred_dir), "--gt", str(data), "--metric", "f1,teds,teds_struct",
                 "--out", str(trained / "m.json")]) == 0
    res = json.loads((trained / "m.json").read_text())
    assert res["aggregate"]["n"] == 2 and res["aggregate"]["missing"] == ["000002.json"]
    assert {"f1", "teds", "teds_struct"} <= set(res["per_file"]["000000"])


def test_eval_self_is_perfect(tmp_path, capsys):
    d = tmp_path / "gt"
    d.mkdir()
    (d / "a.html").write_text("<table><tr><td colspan=2>x</td></tr><tr><td>a</td><td>b</td></tr></table>")
    (d / "b.json").write_text(json.dumps({"html": "<table><tr><td>q</td></tr></table>"}))
    assert main(["metrics", "--pred", str(d), "--gt", str(d)]) == 0
    agg = json.loads(capsys.readouterr().out)["aggregate"]
    assert agg["f1"] == 1.0 and agg["teds"] == 1.0 and agg["n"] == 2


def test_eval_unknown_metric(tmp_path):
    assert main(["eval", "--pred", str(tmp_path), "--gt", str(tmp_path), "--metric", "map"]) == 2
