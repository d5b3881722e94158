"""Command line entry point ``sem`` with synth / train / predict / eval subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from pathlib import Path

import numpy as np
import torch

from .datasets import load_dataset, load_image, save_sample
from .metrics import f1, teds_structures
from .model import ModelConfig, SEMNet
from .structure import BBox, TableStructure, structure_from_html, structure_from_json, structure_to_json, to_html
from .supervision import InvalidAnnotation
from .synth import SynthConfig, synth_table
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("sem_tsr")


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_synth(args) -> int:
    cfg = SynthConfig.from_dict(_read_json(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.n):
        image, ann = synth_table(cfg, cfg.seed + i)
        save_sample(out, f"{i:06d}", image, ann)
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    log.info("wrote %d tables to %s", args.n, out)
    return 0


def cmd_train(args) -> int:
    conf = _read_json(args.config)
    # one file may carry both sections; a flat file is a TrainConfig
    tcfg = TrainConfig.from_dict(conf.get("train", conf))
    mcfg = ModelConfig.from_dict(conf.get("model", {}))
    if "SEM_SEED" in os.environ:
        tcfg.seed = int(os.environ["SEM_SEED"])
    seed_everything(tcfg.seed)
    rejects: list = []
    images, anns = load_dataset(args.data, rejects)
    model = SEMNet(mcfg)
    samples = []
    for img, ann in zip(images, anns):
        try:
            samples.append(model.prepare(img, ann))
        except (InvalidAnnotation, ValueError) as exc:
            rejects.append({"file": ann.image_id, "reason": str(exc)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rejects.json").write_text(json.dumps(rejects, indent=2))
    if not samples:
        log.error("no usable samples in %s", args.data)
        return 1
    history = train(samples, model, tcfg, out)
    save_checkpoint(out / "checkpoint.pt", model, tcfg, history)
    log.info("trained on %d samples in %.1fs (%d rejected)", len(samples), history.seconds, len(rejects))
    return 0


def _read_tokens(path) -> list[tuple[str, BBox]] | None:
    if not path:
        return None
    data = json.loads(Path(path).read_text())
    return [(t["text"], BBox.from_list(t["bbox"])) for t in data]


def cmd_predict(args) -> int:
    model = load_checkpoint(args.ckpt)
    pred = model.predict(load_image(args.image), _read_tokens(args.tokens))
    doc = structure_to_json(pred.structure)
    doc["html"] = to_html(pred.structure)
    doc["unassigned_tokens"] = pred.unassigned_tokens
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, indent=2))
    if args.debug_dir:
        from . import merger, splitter
        splitter.dump_debug(pred.separators, pred.profiles, args.debug_dir)
        merger.dump_debug(pred.merge, pred.lattice.shape, Path(args.debug_dir) / "merge.json")
    return 0


def load_structure(path: Path) -> TableStructure:
    if path.suffix == ".html":
        return structure_from_html(path.read_text())
    data = json.loads(path.read_text())
    if "html" in data and "cells" not in data:
        return structure_from_html(data["html"])
    return structure_from_json(data)


def _is_table_file(path: Path) -> bool:
    if path.suffix == ".html":
        return True
    try:
        data = json.loads(path.read_text())
    except ValueError:
        return False
    return isinstance(data, dict) and ("cells" in data or "html" in data)


def cmd_eval(args) -> int:
    metrics = {m.strip() for m in args.metric.split(",") if m.strip()}
    unknown = metrics - {"f1", "teds", "teds_struct"}
    if unknown:
        log.error("unknown metrics %s", sorted(unknown))
        return 2
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    per_file, missing = {}, []
    tp = n_pred = n_gt = 0
    teds_scores, teds_struct = [], []
    for gt_path in sorted(p for p in gt_dir.iterdir() if p.suffix in (".json", ".html")):
        if not _is_table_file(gt_path):
            continue
        cands = [pred_dir / (gt_path.stem + s) for s in (".json", ".html")]
        pred_path = next((c for c in cands if c.exists()), None)
        if pred_path is None:
            missing.append(gt_path.name)
            continue
        gt, pred = load_structure(gt_path), load_structure(pred_path)
        rec = {}
        if "f1" in metrics:
            s = f1(pred, gt)
            rec.update(precision=s.precision, recall=s.recall, f1=s.f1)
            tp, n_pred, n_gt = tp + s.tp, n_pred + s.n_pred, n_gt + s.n_gt
        if "teds" in metrics:
            rec["teds"] = teds_structures(pred, gt).score
            teds_scores.append(rec["teds"])
        if "teds_struct" in metrics:
            rec["teds_struct"] = teds_structures(pred, gt, structure_only=True).score
            teds_struct.append(rec["teds_struct"])
        per_file[gt_path.stem] = rec
    agg: dict = {"n": len(per_file), "missing": missing}
    if "f1" in metrics:
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gt if n_gt else 0.0
        agg.update(precision=p, recall=r, f1=2 * p * r / (p + r) if p + r else 0.0)
    if teds_scores:
        agg["teds"] = float(np.mean(teds_scores))
    if teds_struct:
        agg["teds_struct"] = float(np.mean(teds_struct))
    text = json.dumps({"aggregate": agg, "per_file": per_file}, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sem", description="split, embed and merge table structure recognition")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic annotated tables")
    s.add_argument("--config", help="SynthConfig JSON")
    s.add_argument("--out", required=True)
    s.add_argument("-n", type=int, default=100)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="TrainConfig JSON, or {\"model\": ..., \"train\": ...}")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="recognize the structure of one image")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--tokens", help="JSON list of {text, bbox}")
    r.add_argument("--out", required=True)
    r.add_argument("--debug-dir")
    r.set_defaults(func=cmd_predict)

    for name in ("eval", "metrics"):
        e = sub.add_parser(name, help="score predicted structures against ground truth")
        e.add_argument("--pred", required=True)
        e.add_argument("--gt", required=True)
        e.add_argument("--metric", default="f1,teds")
        e.add_argument("--out")
        e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if "SEM_SEED" in os.environ:
        seed_everything(int(os.environ["SEM_SEED"]))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
