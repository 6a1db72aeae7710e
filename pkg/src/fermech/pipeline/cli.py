"""``fermech`` command line: gen-synthetic, train, eval, merge, correct, report."""

import argparse
import copy
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from fermech.backbone import load_checkpoint, save_checkpoint
from fermech.correction import CorrectionConfig, group_by_similarity, vote_correct
from fermech.ensemble import SCHEMES, merge_sources, parse_weights, predict
from fermech.errors import ConfigError, DataError, FermechError
from fermech.pipeline import io
from fermech.pipeline.config import load_config, path_or_default, resolve
from fermech.pipeline.data import Dataset, class_means, gen_synthetic
from fermech.pipeline.metrics import (
    confusion_matrix,
    f1_table_csv_rows,
    format_f1_table,
    per_class_f1,
)
from fermech.pipeline.train import Models, infer, settings_from_config, train

log = logging.getLogger("fermech")

CHECKPOINT_NAME = "checkpoint.json"


def out_dir(cfg):
    d = resolve(cfg, cfg.run.out)
    os.makedirs(d, exist_ok=True)
    return d


def _load_labeled(feat_path, label_path):
    ids, x = io.read_features(feat_path)
    lids, y = io.read_labels(label_path)
    order = io.align(label_path, lids, ids)
    return Dataset(ids, x, y[order])


def run_gen_synthetic(cfg):
    d = cfg.data
    out = out_dir(cfg)
    means = class_means(d.dim, d.separation, d.sigma)
    cov = np.eye(d.dim) * d.sigma**2
    written = []
    for split, n, stream in (("train", d.n_train_per_class, 0), ("eval", d.n_eval_per_class, 1)):
        ds = gen_synthetic(means, cov, n, [cfg.run.seed, stream], prefix=split[0])
        fp = os.path.join(out, f"{split}_features.csv")
        lp = os.path.join(out, f"{split}_labels.csv")
        io.write_features(fp, ds.ids, ds.x)
        io.write_labels(lp, ds.ids, ds.y)
        written += [fp, lp]
    return written


ARCH_SECTIONS = ("backbone", "gus")


def _config_record(cfg, s):
    rec = {"input_shape": list(s.backbone.input_shape), "seed": s.seed}
    for name in ARCH_SECTIONS:
        rec[name] = {k: list(v) if isinstance(v, tuple) else v
                     for k, v in dataclasses.asdict(getattr(cfg, name)).items()}
    return rec


def run_train(cfg):
    out = out_dir(cfg)
    ds = _load_labeled(
        path_or_default(cfg, cfg.data.train_features, out, "train_features.csv"),
        path_or_default(cfg, cfg.data.train_labels, out, "train_labels.csv"),
    )
    s = settings_from_config(cfg, ds.x.shape[1:])
    log_path = os.path.join(out, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        def on_epoch(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

        models = train(ds, s, on_epoch)
    params = {f"mre.{k}": v for k, v in models.mre.items()}
    params.update({f"gus.{k}": v for k, v in models.gus.items()})
    ckpt = os.path.join(out, CHECKPOINT_NAME)
    save_checkpoint(ckpt, params, _config_record(cfg, s), step=len(models.history))
    return ckpt, models


def load_models(cfg, path):
    params, record, _ = load_checkpoint(path)
    cfg = copy.deepcopy(cfg)
    cfg.run.seed = record["seed"]
    for name in ARCH_SECTIONS:
        section = getattr(cfg, name)
        for k, v in record[name].items():
            setattr(section, k, tuple(v) if isinstance(v, list) else v)
    s = settings_from_config(cfg, record["input_shape"])
    mre = {k[4:]: v for k, v in params.items() if k.startswith("mre.")}
    gus = {k[4:]: v for k, v in params.items() if k.startswith("gus.")}
    return Models(mre, gus, s)


def _table_rows(y_true, named_preds):
    return [(name, per_class_f1(confusion_matrix(y_true, p))) for name, p in named_preds]


def _write_report(base, rows):
    text = format_f1_table(rows)
    with open(base + ".txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    header, body = f1_table_csv_rows(rows)
    with open(base + ".csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for r in body:
            fh.write(",".join(r) + "\n")
    return text


def run_eval(cfg):
    out = out_dir(cfg)
    models = load_models(cfg, os.path.join(out, CHECKPOINT_NAME))
    ids, x = io.read_features(path_or_default(cfg, cfg.data.eval_features, out, "eval_features.csv"))
    res = infer(models, x.reshape((len(ids),) + models.settings.backbone.input_shape))
    io.write_scores(os.path.join(out, "scores_gus.csv"), ids, res["gus"])
    io.write_scores(os.path.join(out, "scores_mre.csv"), ids, res["mre"])
    io.write_features(os.path.join(out, "embeddings.csv"), ids, res["embeddings"])
    label_path = path_or_default(cfg, cfg.data.eval_labels, out, "eval_labels.csv")
    if not os.path.exists(label_path):
        log.info("no eval labels at %s; skipping F1 report", label_path)
        return None
    lids, y = io.read_labels(label_path)
    y = y[io.align(label_path, lids, ids)]
    rows = _table_rows(y, [("GUS", predict(res["gus"])), ("MRE", predict(res["mre"]))])
    return _write_report(os.path.join(out, "eval_report"), rows)


def resolve_weights(cfg, weights=None, scheme=None):
    if weights:
        return parse_weights(weights)
    if scheme:
        if scheme.lower() not in SCHEMES:
            raise ConfigError(f"unknown scheme {scheme!r}; expected s1 or s2")
        return SCHEMES[scheme.lower()]
    if cfg.ensemble.weights:
        return parse_weights(cfg.ensemble.weights)
    if cfg.ensemble.scheme.lower() not in SCHEMES:
        raise ConfigError(f"config key ensemble.scheme: unknown scheme {cfg.ensemble.scheme!r}")
    return SCHEMES[cfg.ensemble.scheme.lower()]


def run_merge(cfg, weights=None, scheme=None):
    out = out_dir(cfg)
    w = resolve_weights(cfg, weights, scheme)
    m = cfg.merge
    paths = {
        "gus": path_or_default(cfg, m.gus_scores, out, "scores_gus.csv"),
        "mre": path_or_default(cfg, m.mre_scores, out, "scores_mre.csv"),
        "dmue": resolve(cfg, m.dmue_scores),
    }
    sources = {}
    ref_ids = None
    for name, path in paths.items():
        if not path:
            continue
        explicit = bool(getattr(m, f"{name}_scores"))
        if not os.path.exists(path):
            if explicit:
                raise DataError(f"{path}: score file not found")
            log.info("no %s scores at %s; source skipped", name, path)
            continue
        ids, s = io.read_scores(path)
        if ref_ids is None:
            ref_ids = ids
        sources[name] = s[io.align(path, ids, ref_ids)]
    if not sources:
        raise DataError("merge: no score files found")
    merged = merge_sources(sources, w.as_dict())
    pred = predict(merged)
    target = os.path.join(out, "merged_predictions.csv")
    io.write_labels(target, ref_ids, pred)
    return target, ref_ids, pred


def run_correct(cfg):
    out = out_dir(cfg)
    c = cfg.correction
    ccfg = CorrectionConfig(c.threshold, c.vote_fraction, c.min_subset, c.inclusive)
    pred_path = path_or_default(cfg, c.predictions, out, "merged_predictions.csv")
    feat_path = path_or_default(cfg, c.features, out, "embeddings.csv")
    ids, labels = io.read_predictions_any(pred_path)
    fids, feats = io.read_features(feat_path)
    feats = feats[io.align(feat_path, fids, ids)]
    partition = group_by_similarity(ids, feats, ccfg)
    preds = dict(zip(ids, labels.tolist()))
    corrected = vote_correct(partition, preds, ccfg)
    new = np.array([corrected[i] for i in ids], dtype=np.int64)
    changed = new != labels
    target = os.path.join(out, "corrected_predictions.csv")
    io.write_labels(target, ids, new, changed=changed)
    summary = {
        "changed": int(changed.sum()),
        "groups": len(partition.groups),
        "eligible_groups": sum(len(g) >= ccfg.min_subset for g in partition.groups),
    }
    with open(os.path.join(out, "correct_summary.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    return target, summary


DEFAULT_REPORT_ROWS = (
    ("MRE", "scores_mre.csv"),
    ("GUS", "scores_gus.csv"),
    ("Ensembled", "merged_predictions.csv"),
    ("Corrected", "corrected_predictions.csv"),
)


def _report_rows(cfg, out):
    if not cfg.report.rows:
        return [(n, os.path.join(out, f)) for n, f in DEFAULT_REPORT_ROWS
                if os.path.exists(os.path.join(out, f))]
    rows = []
    for item in cfg.report.rows:
        if ":" not in item:
            raise ConfigError(f"config key report.rows: expected name:path, got {item!r}")
        name, path = item.split(":", 1)
        rows.append((name.strip(), resolve(cfg, path.strip())))
    return rows


def run_report(cfg):
    out = out_dir(cfg)
    label_path = resolve(cfg, cfg.report.labels) or path_or_default(
        cfg, cfg.data.eval_labels, out, "eval_labels.csv"
    )
    lids, y = io.read_labels(label_path)
    named = []
    for name, path in _report_rows(cfg, out):
        ids, p = io.read_predictions_any(path)
        named.append((name, p[io.align(path, ids, lids)]))
    if not named:
        raise DataError(f"report: no prediction files found in {out}")
    rows = _table_rows(y, named)
    return _write_report(os.path.join(out, "report"), rows), rows


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="fermech", description=__doc__)
    p.add_argument("command", choices=["gen-synthetic", "train", "eval", "merge", "correct", "report"])
    p.add_argument("--config", help="flat section.key = value config file")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--out", help="output directory (overrides run.out)")
    p.add_argument("--weights", help="merge weights g,m,d")
    p.add_argument("--scheme", choices=["s1", "s2"], help="named merge weight scheme")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set mre.lambda=0.5")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = []
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            overrides.append(tuple(item.split("=", 1)))
        if args.seed is not None:
            overrides.append(("run.seed", str(args.seed)))
        cfg = load_config(args.config, overrides)
        if args.out:
            cfg.run.out = os.path.abspath(args.out)
        if args.command == "gen-synthetic":
            for path in run_gen_synthetic(cfg):
                print(f"wrote {path}")
        elif args.command == "train":
            ckpt, models = run_train(cfg)
            last = {r["phase"]: r for r in models.history}
            for phase, r in last.items():
                print(f"{phase}: epoch {r['epoch']} loss {r['total']:.4f} train F1 {r['train_f1']:.4f}")
            print(f"wrote {ckpt}")
        elif args.command == "eval":
            text = run_eval(cfg)
            if text:
                print(text, end="")
        elif args.command == "merge":
            target, ids, _ = run_merge(cfg, args.weights, args.scheme)
            print(f"merged {len(ids)} samples -> {target}")
        elif args.command == "correct":
            target, summary = run_correct(cfg)
            print(f"changed {summary['changed']} prediction(s) -> {target}")
        elif args.command == "report":
            text, _ = run_report(cfg)
            print(text, end="")
    except FermechError as exc:
        print(f"fermech: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
