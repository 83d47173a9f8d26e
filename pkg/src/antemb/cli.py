"""Command-line driver: training, evaluation, export, stats, reports."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .anchors import (
    AnchorPlan,
    Vocabulary,
    build_cooccurrence,
    build_domain_mask,
    init_anchor_matrix,
    load_relations,
    select_anchors,
)
from .model import AntModel, Regularizer, count_params, identity_transform, seed_transform
from .nbant import NbAntController, SvaObjective, adapt, online_train, sva_objective
from .optim import DecaySchedule
from .persist import export_embeddings, load_model, save_model
from .report import (
    render_nnz_histogram,
    render_run_figures,
    read_history,
    write_history,
    write_summary,
)
from .sparse import lookup_rows
from .tasks import evaluate, load_movielens, load_text_dataset, split
from .train import AnchoredTable, DenseTable, MfTask, TextClfTask, train_epoch


@dataclass
class RunConfig:
    """Training configuration; JSON files and CLI flags mirror these fields."""

    task: str = "recsys"
    anchors: int = 15  # 0 trains the full dense table instead
    anchor_init: str = "random"
    lambda1: float = 0.01
    lambda2: float = 1e-4
    nbant: bool = False
    delta_k: int = 1
    epochs: int = 50
    batch_size: int = 32
    lr: float = 0.01
    lr_decay: float = 0.5
    decay_step: int = 100000
    seed: int = 7
    mask_path: str | None = None
    threads: int = 1
    deterministic: bool = False
    # extensions beyond the core field set
    dim: int = 16
    split: str = "0.8,0.1,0.1"
    nbant_trend: str = "validation"  # or "train"
    online: bool = False
    online_batches: int = 20

    def validate(self) -> None:
        if self.task not in ("recsys", "textclf"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.nbant and not self.lambda1 > self.lambda2:
            raise ValueError("nbant requires lambda1 > lambda2")
        if self.anchors < 0:
            raise ValueError("anchors must be >= 0")
        if self.nbant and self.anchors == 0:
            raise ValueError("nbant needs an anchored model (anchors >= 1)")
        if self.nbant_trend not in ("validation", "train"):
            raise ValueError("nbant_trend must be 'validation' or 'train'")

    def fractions(self) -> tuple[float, float, float]:
        parts = [float(x) for x in str(self.split).split(",")]
        if len(parts) != 3:
            raise ValueError("split must be three comma-separated fractions")
        return parts[0], parts[1], parts[2]


def _config_from(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, val in loaded.items():
            setattr(cfg, key, val)
    for f in fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    cfg.validate()
    return cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--anchors", type=int, help="anchor count; 0 = dense baseline")
    p.add_argument(
        "--anchor-init",
        dest="anchor_init",
        choices=("random", "frequency", "tfidf", "kmeanspp"),
    )
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--nbant", action="store_const", const=True, default=None)
    p.add_argument("--delta-k", dest="delta_k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--decay-step", dest="decay_step", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mask-path", dest="mask_path")
    p.add_argument("--threads", type=int)
    p.add_argument(
        "--deterministic", action="store_const", const=True, default=None
    )
    p.add_argument("--dim", type=int)
    p.add_argument("--split", help="train,val,test fractions (default 0.8,0.1,0.1)")
    p.add_argument("--nbant-trend", dest="nbant_trend", choices=("validation", "train"))
    p.add_argument("--online", action="store_const", const=True, default=None)
    p.add_argument("--online-batches", dest="online_batches", type=int)


def _decay(cfg: RunConfig) -> DecaySchedule:
    return DecaySchedule(factor=cfg.lr_decay, every=cfg.decay_step)


def _dense_identity_model(emb: np.ndarray) -> AntModel:
    n = emb.shape[0]
    return AntModel(
        anchors=emb.copy(),
        transform=identity_transform(n, range(n)),
        reg=Regularizer(nonneg=True),
    )


def _epoch_line(epoch, train_loss, val_mse, nnz, k, sva) -> str:
    return (
        f"epoch={epoch} train_loss={train_loss:.6f} val_mse={val_mse:.6f} "
        f"nnz={nnz} K={k} sva_obj={sva:.6f}"
    )


def _anchored_table(cfg, n_objects, seed, mask=None, anchor_ids=None,
                    pretrained=None) -> AnchoredTable:
    plan = AnchorPlan(
        strategy=cfg.anchor_init,
        k=cfg.anchors,
        seed=seed,
        anchor_ids=anchor_ids,
    )
    anchors = init_anchor_matrix(plan, cfg.dim, pretrained=pretrained,
                                 anchor_ids=anchor_ids)
    rng = np.random.default_rng(seed + 1)
    transform = seed_transform(n_objects, cfg.anchors, rng, nonneg=True)
    model = AntModel(
        anchors=anchors,
        transform=transform,
        reg=Regularizer(
            lambda2=cfg.lambda2,
            nonneg=True,
            mask_complement=mask,
        ),
        anchor_ids=list(anchor_ids) if anchor_ids else None,
    )
    return AnchoredTable(model, lr=cfg.lr, decay=_decay(cfg))


def _dense_table(cfg, n_objects, seed) -> DenseTable:
    rng = np.random.default_rng(seed)
    emb = rng.normal(0.0, 1.0 / np.sqrt(cfg.dim), size=(n_objects, cfg.dim))
    return DenseTable(emb, lr=cfg.lr, decay=_decay(cfg))


def _recsys_sva_value(task, data, cfg, obj) -> float:
    pred_loss = task.divergence_sum(data)
    nnz_t = sum(
        t.stored_nnz() for t in task.tables() if isinstance(t, AnchoredTable)
    )
    k = task.tables()[0].k
    return sva_objective(pred_loss, nnz_t, k, obj)


def cmd_train_recsys(args) -> int:
    cfg = _config_from(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_movielens(args.data, format=args.format)
    train, val, test = split(data, cfg.fractions(), seed=cfg.seed)
    print(
        f"loaded {len(data)} ratings: {data.n_users} users, {data.n_items} items "
        f"(train={len(train)} val={len(val)} test={len(test)})",
        file=sys.stderr,
    )

    dense = cfg.anchors == 0
    if dense:
        user_t = _dense_table(cfg, data.n_users, cfg.seed + 11)
        item_t = _dense_table(cfg, data.n_items, cfg.seed + 12)
        controller = None
    else:
        user_t = _anchored_table(cfg, data.n_users, cfg.seed + 11)
        item_t = _anchored_table(cfg, data.n_items, cfg.seed + 12)
        controller = (
            NbAntController(k=cfg.anchors, delta_k=cfg.delta_k, seed=cfg.seed + 13)
            if cfg.nbant
            else None
        )
    task = MfTask(
        user_t, item_t, train.global_mean,
        threads=cfg.threads, deterministic=cfg.deterministic,
    )
    obj = SvaObjective(cfg.lambda1, max(cfg.lambda2, 1e-300))
    erng = np.random.default_rng(cfg.seed + 14)
    history = []

    if cfg.online and controller is not None:
        chunks = np.array_split(train.triples, cfg.online_batches)

        def train_pass(chunk):
            return train_epoch(task, chunk, cfg.batch_size, erng).train_loss

        def val_value(chunk):
            return _recsys_sva_value(task, chunk, cfg, obj)

        models = [user_t.model, item_t.model]
        result = online_train(models, controller, chunks, train_pass, val_value)
        user_t.sync_after_adapt()
        item_t.sync_after_adapt()
        for i, k in enumerate(result.k_trajectory, start=1):
            history.append(
                {"epoch": i, "train_loss": result.final_loss, "val_mse": None,
                 "nnz": user_t.stored_nnz() + item_t.stored_nnz(), "k": k,
                 "sva_obj": None}
            )
        print(f"online run: K trajectory {result.k_trajectory}")
    else:
        for epoch in range(1, cfg.epochs + 1):
            report = train_epoch(task, train.triples, cfg.batch_size, erng)
            val_mse = task.mse(val.triples) if len(val) else float("nan")
            if dense:
                sva = float("nan")
            else:
                source = val if (len(val) and cfg.nbant_trend == "validation") else train
                sva = _recsys_sva_value(task, source.triples, cfg, obj)
            k = report.k
            print(_epoch_line(epoch, report.train_loss, val_mse, report.nnz, k, sva))
            history.append(
                {"epoch": epoch, "train_loss": report.train_loss,
                 "val_mse": None if np.isnan(val_mse) else val_mse,
                 "nnz": report.nnz, "k": k,
                 "sva_obj": None if np.isnan(sva) else sva}
            )
            if controller is not None:
                action = adapt([user_t.model, item_t.model], controller, sva)
                if action.delta:
                    user_t.sync_after_adapt()
                    item_t.sync_after_adapt()

    test_mse = task.mse(test.triples) if len(test) else float("nan")
    if dense:
        total_params = user_t.param_count() + item_t.param_count()
    else:
        total_params = (
            count_params(user_t.model)["total"] + count_params(item_t.model)["total"]
        )
    print(f"test_mse={test_mse:.6f} params={total_params}")

    if dense:
        user_model = _dense_identity_model(user_t.emb)
        item_model = _dense_identity_model(item_t.emb)
    else:
        user_model, item_model = user_t.model, item_t.model
    save_model(user_model, out_dir / "user.antb")
    save_model(item_model, out_dir / "item.antb")
    meta = {
        "task": "recsys",
        "dim": cfg.dim,
        "dense": dense,
        "global_mean": train.global_mean,
        "n_users": data.n_users,
        "n_items": data.n_items,
        "user_raw_ids": data.raw_user_ids(),
        "item_raw_ids": data.raw_item_ids(),
        "test_mse": None if np.isnan(test_mse) else test_mse,
        "params": total_params,
        "k": task.tables()[0].k,
        "config": asdict(cfg),
    }
    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh)
    write_history(out_dir / "history.csv", history)
    if history:
        render_run_figures(history, out_dir)
    write_summary(
        out_dir / "summary.tsv",
        {"task": "recsys", "test_mse": test_mse, "params": total_params,
         "k": meta["k"], "epochs": len(history)},
    )
    return 0


def _textclf_anchor_ids(cfg, vocab, docs):
    if cfg.anchor_init == "random":
        return None
    features = None
    if cfg.anchor_init == "kmeanspp":
        co = build_cooccurrence(docs, vocab, window=10)
        features = co.features()
    plan = AnchorPlan(strategy=cfg.anchor_init, k=cfg.anchors, seed=cfg.seed + 21)
    ids = select_anchors(plan, vocab, features=features, docs=docs)
    return ids


def cmd_train_textclf(args) -> int:
    cfg = _config_from(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # vocabulary over the token side of every line
    raw_docs = []
    with open(args.data, "r", encoding="utf-8") as fh:
        for line in fh:
            if "\t" in line:
                raw_docs.append(line.rstrip("\n").split("\t", 1)[1].split())
    from .anchors import build_vocab

    vocab = build_vocab(raw_docs)
    ds = load_text_dataset(args.data, vocab)
    fr_train, fr_val, _ = cfg.fractions()
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(ds.examples))
    n_train = int(round(fr_train * len(order)))
    n_val = int(round(fr_val * len(order)))
    train_ex = [ds.examples[i] for i in order[:n_train]]
    val_ex = [ds.examples[i] for i in order[n_train : n_train + n_val]]
    test_ex = [ds.examples[i] for i in order[n_train + n_val :]]
    print(
        f"loaded {len(ds)} examples, |V|={len(vocab)}, {ds.n_classes} classes "
        f"(train={len(train_ex)} val={len(val_ex)} test={len(test_ex)})",
        file=sys.stderr,
    )

    dense = cfg.anchors == 0
    if dense:
        table = _dense_table(cfg, len(vocab), cfg.seed + 11)
        controller = None
        anchor_ids = None
    else:
        anchor_ids = _textclf_anchor_ids(cfg, vocab, raw_docs)
        mask = None
        if cfg.mask_path:
            relations = load_relations(cfg.mask_path, vocab)
            if not anchor_ids:
                raise ValueError(
                    "domain masks need object-based anchors (use --anchor-init frequency)"
                )
            mask = build_domain_mask(relations, len(vocab), cfg.anchors, anchor_ids)
        table = _anchored_table(
            cfg, len(vocab), cfg.seed + 11, mask=mask, anchor_ids=anchor_ids
        )
        controller = (
            NbAntController(k=cfg.anchors, delta_k=cfg.delta_k, seed=cfg.seed + 13)
            if cfg.nbant
            else None
        )
    task = TextClfTask(
        table, n_classes=ds.n_classes, dim=cfg.dim, lr=cfg.lr,
        rng=np.random.default_rng(cfg.seed + 15),
        threads=cfg.threads, deterministic=cfg.deterministic,
    )
    obj = SvaObjective(cfg.lambda1, max(cfg.lambda2, 1e-300))
    erng = np.random.default_rng(cfg.seed + 14)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        report = train_epoch(task, train_ex, cfg.batch_size, erng)
        val_acc = task.accuracy(val_ex) if val_ex else float("nan")
        if dense:
            sva = float("nan")
        else:
            source = val_ex if (val_ex and cfg.nbant_trend == "validation") else train_ex
            sva = sva_objective(
                task.divergence_sum(source), table.stored_nnz(), table.k, obj
            )
        print(_epoch_line(epoch, report.train_loss, val_acc, report.nnz, report.k, sva))
        history.append(
            {"epoch": epoch, "train_loss": report.train_loss,
             "val_mse": None if np.isnan(val_acc) else val_acc,
             "nnz": report.nnz, "k": report.k,
             "sva_obj": None if np.isnan(sva) else sva}
        )
        if controller is not None:
            action = adapt(table.model, controller, sva)
            if action.delta:
                table.sync_after_adapt()

    test_acc = task.accuracy(test_ex) if test_ex else float("nan")
    total_params = table.param_count()
    print(f"test_accuracy={test_acc:.4f} params={total_params}")

    model = _dense_identity_model(table.emb) if dense else table.model
    save_model(model, out_dir / "emb.antb")
    meta = {
        "task": "textclf",
        "dim": cfg.dim,
        "dense": dense,
        "n_classes": ds.n_classes,
        "label_names": ds.label_names,
        "vocab": vocab.tokens,
        "W": task.W.tolist(),
        "b": task.b.tolist(),
        "test_accuracy": None if np.isnan(test_acc) else test_acc,
        "params": total_params,
        "k": table.k,
        "config": asdict(cfg),
    }
    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh)
    write_history(out_dir / "history.csv", history)
    if history:
        render_run_figures(history, out_dir)
    write_summary(
        out_dir / "summary.tsv",
        {"task": "textclf", "test_accuracy": test_acc, "params": total_params,
         "k": meta["k"], "epochs": len(history)},
    )
    return 0


def _load_meta(run_dir: Path) -> dict:
    with open(run_dir / "meta.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    meta = _load_meta(run_dir)
    if meta["task"] == "recsys":
        user = load_model(run_dir / "user.antb")
        item = load_model(run_dir / "item.antb")
        ds = load_movielens(args.data, format=args.format)
        u_map = {raw: i for i, raw in enumerate(meta["user_raw_ids"])}
        i_map = {raw: i for i, raw in enumerate(meta["item_raw_ids"])}
        raw_users = ds.raw_user_ids()
        raw_items = ds.raw_item_ids()
        try:
            users = np.array(
                [u_map[raw_users[int(u)]] for u in ds.triples[:, 0]], dtype=np.int64
            )
            items = np.array(
                [i_map[raw_items[int(i)]] for i in ds.triples[:, 1]], dtype=np.int64
            )
        except KeyError as exc:
            raise SystemExit(f"id {exc.args[0]} was not in the training data") from None
        eu = lookup_rows(users, user.transform, user.anchors)
        ev = lookup_rows(items, item.transform, item.anchors)
        preds = meta["global_mean"] + np.einsum("ij,ij->i", eu, ev)
        mse = evaluate(preds, ds.triples[:, 2], "mse")
        print(f"mse={mse:.6f} examples={len(ds)}")
    else:
        emb_model = load_model(run_dir / "emb.antb")
        vocab = Vocabulary(
            tokens=meta["vocab"],
            ids={t: i for i, t in enumerate(meta["vocab"])},
            freq=np.ones(len(meta["vocab"]), dtype=np.int64),
        )
        ds = load_text_dataset(args.data, vocab)
        w = np.array(meta["W"])
        b = np.array(meta["b"])
        correct = 0
        for toks, label in ds.examples:
            rows = lookup_rows(np.array(toks), emb_model.transform, emb_model.anchors)
            probs = w @ rows.mean(axis=0) + b
            if int(np.argmax(probs)) == label:
                correct += 1
        acc = correct / len(ds.examples)
        print(f"accuracy={acc:.4f} examples={len(ds.examples)}")
    return 0


def cmd_export(args) -> int:
    model = load_model(args.model)
    vocab = None
    if args.vocab:
        with open(args.vocab, "r", encoding="utf-8") as fh:
            vocab = [line.strip() for line in fh if line.strip()]
    summary = export_embeddings(model, vocab, args.out, format=args.format)
    if args.format == "sparse_report":
        fig_path = Path(args.out).with_suffix(".png")
        render_nnz_histogram(model, fig_path)
        print(f"wrote {args.out} and {fig_path}")
    else:
        print(f"wrote {args.out}")
    print(
        "totals: K=%(k)d d=%(d)d nnz=%(transform_nnz)d total_params=%(total_params)d "
        "zero_rows=%(zero_rows)d" % summary
    )
    return 0


def cmd_stats(args) -> int:
    model = load_model(args.model)
    totals = count_params(model)
    size = Path(args.model).stat().st_size
    print(
        f"objects={model.n_objects} K={model.n_anchors} d={model.dim} "
        f"nnz={totals['transform_nnz']} total_params={totals['total']} "
        f"zero_rows={totals['zero_rows']} file_bytes={size}"
    )
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    history = read_history(run_dir / "history.csv")
    if not history:
        raise SystemExit("history.csv has no rows")
    files = render_run_figures(history, run_dir)
    summary = {
        "epochs": len(history),
        "final_train_loss": history[-1]["train_loss"],
        "final_nnz": history[-1]["nnz"],
        "final_k": history[-1]["k"],
    }
    if history[-1].get("val_mse") is not None:
        summary["final_val"] = history[-1]["val_mse"]
    write_summary(run_dir / "summary.tsv", summary)
    print("wrote " + " ".join(files + [str(run_dir / "summary.tsv")]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="antemb",
        description="Anchor-factored sparse embeddings: train, evaluate, export.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-recsys", help="train a rating predictor")
    p.add_argument("--data", required=True, help="ratings file")
    p.add_argument(
        "--format", default="csv_header", choices=("csv_header", "legacy_double_colon")
    )
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_recsys, task="recsys")

    p = sub.add_parser("train-textclf", help="train a text classifier")
    p.add_argument("--data", required=True, help="<label>\\t<tokens> lines")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_textclf, task="textclf")

    p = sub.add_parser("eval", help="evaluate a finished run on a data file")
    p.add_argument("--run-dir", dest="run_dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument(
        "--format", default="csv_header", choices=("csv_header", "legacy_double_colon")
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export embeddings or a sparsity report")
    p.add_argument("--model", required=True, help=".antb model file")
    p.add_argument("--format", required=True, choices=("text_vectors", "sparse_report"))
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", help="one token per line, aligned with object ids")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("stats", help="print parameter counts of a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="render figures and a summary for a run")
    p.add_argument("--run-dir", dest="run_dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
