"""Command-line entry point: gen-data, train, eval, gradcheck, heatmap.

Configuration precedence is defaults < --config key=value file < explicit
flags.  Every command writes a manifest of its fully resolved config;
feeding a manifest back through --config reproduces the run.
"""

import os

# Thread caps must be in the environment before numpy spins up its pools.
_threads = os.environ.get("SALAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from .evaluation import compute_metrics, export_heatmap, score_documents
from .exceptions import (
    PoisonedGradientError,
    SalabError,
    UndefinedMetricError,
)
from .models import (
    AttentionClassifier,
    HierarchicalTransformerClassifier,
    HierModelConfig,
    LocalModelConfig,
    extract_attention_maps,
)
from .simplex import MappingKind
from .training import train_model
from .validation import mapping_max_grad_error, model_grad_error

log = logging.getLogger("salab")

GEN_DEFAULTS = {
    "out": "data",
    "n_docs": 5000,
    "vocab_size": 200,
    "positive_rate": 0.132,
    "p_dir_pos": 0.9,
    "p_dir_neg": 0.05,
    "sent_min": 3,
    "sent_max": 6,
    "word_min": 4,
    "word_max": 10,
    "zipf": 1.1,
    "seed": 0,
}

TRAIN_DEFAULTS = {
    "data": "data",
    "out": "run",
    "model": "att",
    "mapping": "softmax",
    "epochs": 30,
    "lr": 1e-4,
    "batch": 16,
    "hidden": 128,
    "embed_dim": 100,
    "max_words": 50,
    "max_sents": 1000,
    "dropout": 0.2,
    "seed": 0,
    "seeds": 1,
    "min_freq": 5,
    "heads": 1,
    "layers": 1,
    "shared_qkv": False,
}

EVAL_DEFAULTS = {"data": "data", "model_dir": "run", "out": "", "split": "test", "bins": 10}

HEATMAP_DEFAULTS = {
    "data": "data",
    "model_dir": "run",
    "out": "heatmaps",
    "filter": "dnr,dni,cmo",
    "limit": 5,
}

GRADCHECK_DEFAULTS = {"seed": 0, "trials": 200, "tol": 1e-4}


# ---------------------------------------------------------------------------
# key=value plumbing

def read_kv(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_kv(path, cfg: dict) -> None:
    lines = [f"{k}={cfg[k]}" for k in sorted(cfg)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _coerce(value, template):
    if isinstance(template, bool):
        return value in (True, "true", "True", "1")
    return type(template)(value)


def resolve(defaults: dict, args: argparse.Namespace) -> dict:
    cfg = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = read_kv(args.config)
        for k, v in file_cfg.items():
            if k in cfg:
                cfg[k] = _coerce(v, defaults[k])
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = _coerce(v, defaults[k])
    return cfg


# ---------------------------------------------------------------------------
# model (re)construction

def model_config_from(cfg: dict, vocab_size: int):
    mapping = MappingKind.parse(cfg["mapping"])
    common = dict(
        vocab_size=vocab_size,
        embed_dim=cfg["embed_dim"],
        hidden=cfg["hidden"],
        mapping=mapping,
        dropout_rate=cfg["dropout"],
        max_words=cfg["max_words"],
        max_sents=cfg["max_sents"],
        shared_qkv=cfg["shared_qkv"],
    )
    if cfg["model"] == "att":
        return LocalModelConfig(**common)
    if cfg["model"] == "tr":
        return HierModelConfig(
            **common,
            word_layers=cfg["layers"],
            sent_layers=cfg["layers"],
            word_heads=cfg["heads"],
            sent_heads=cfg["heads"],
        )
    raise ValueError(f"unknown model family {cfg['model']!r}")


def build_model(cfg: dict, vocab_size: int, seed: int, dtype=np.float32):
    config = model_config_from(cfg, vocab_size)
    cls = AttentionClassifier if cfg["model"] == "att" else HierarchicalTransformerClassifier
    return cls(config, seed=seed, dtype=dtype)


def save_model_dir(out: Path, model, vocab, train_cfg: dict, seed: int) -> None:
    vocab.save(out / "vocab.txt")
    kv = {k: train_cfg[k] for k in (
        "model", "mapping", "embed_dim", "hidden", "dropout",
        "max_words", "max_sents", "heads", "layers", "shared_qkv",
    )}
    kv["vocab_size"] = len(vocab)
    kv["seed"] = seed
    write_kv(out / "config.kv", kv)


def load_model_dir(model_dir):
    model_dir = Path(model_dir)
    kv = read_kv(model_dir / "config.kv")
    cfg = dict(TRAIN_DEFAULTS)
    for k, v in kv.items():
        if k in cfg:
            cfg[k] = _coerce(v, cfg[k])
    vocab = datamod.Vocabulary.load(model_dir / "vocab.txt")
    model = build_model(cfg, len(vocab), seed=int(kv.get("seed", 0)))
    model.load(model_dir / "best.ckpt")
    return model, vocab, cfg


def _docs_path(data: str, split: str) -> Path:
    p = Path(data)
    return p if p.is_file() else p / f"{split}.jsonl"


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    cfg = resolve(GEN_DEFAULTS, args)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    corpus_cfg = datamod.SyntheticCorpusConfig(
        n_documents=cfg["n_docs"],
        vocab_size=cfg["vocab_size"],
        positive_rate=cfg["positive_rate"],
        p_directive_given_positive=cfg["p_dir_pos"],
        p_directive_given_negative=cfg["p_dir_neg"],
        min_sentences=cfg["sent_min"],
        max_sentences=cfg["sent_max"],
        min_words=cfg["word_min"],
        max_words=cfg["word_max"],
        zipf_exponent=cfg["zipf"],
        seed=cfg["seed"],
    )
    docs = datamod.generate_synthetic_corpus(corpus_cfg)
    split = datamod.split_dataset(docs, seed=cfg["seed"])
    datamod.write_jsonl(out / "train.jsonl", split.train)
    datamod.write_jsonl(out / "validation.jsonl", split.validation)
    datamod.write_jsonl(out / "test.jsonl", split.test)
    cfg["command"] = "gen-data"
    write_kv(out / "manifest.kv", cfg)
    print(
        f"wrote {len(split.train)}/{len(split.validation)}/{len(split.test)} "
        f"documents to {out}"
    )
    return 0


def _train_once(cfg: dict, seed: int, out: Path):
    data_dir = Path(cfg["data"])
    train_docs = datamod.read_jsonl(data_dir / "train.jsonl")
    val_docs = datamod.read_jsonl(data_dir / "validation.jsonl")
    test_docs = datamod.read_jsonl(data_dir / "test.jsonl")
    vocab = datamod.build_vocab(
        (sent for doc in train_docs for sent in doc.sentences),
        min_freq=cfg["min_freq"],
    )
    model = build_model(cfg, len(vocab), seed=seed)
    result = train_model(
        model, train_docs, val_docs, vocab,
        epochs=cfg["epochs"], lr=cfg["lr"], batch_size=cfg["batch"], seed=seed,
    )
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "last.ckpt")
    model.load_state_dict(result.best_state)
    model.save(out / "best.ckpt")
    save_model_dir(out, model, vocab, cfg, seed)
    with open(out / "epochs.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_loss,val_auc_roc,val_auc_pr,val_brier\n")
        for s in result.history:
            fh.write(
                f"{s.epoch},{s.train_loss:.6f},{s.val.auc_roc:.6f},"
                f"{s.val.auc_pr:.6f},{s.val.brier:.6f}\n"
            )
    test_report = compute_metrics(score_documents(model, test_docs, vocab, cfg["batch"]))
    (out / "metrics.kv").write_text(test_report.to_kv(), encoding="utf-8")
    (out / "metrics.json").write_text(test_report.to_json() + "\n", encoding="utf-8")
    print(
        f"seed {seed}: best epoch {result.best_epoch} "
        f"(val auc_roc {result.best_val_auc:.4f}), "
        f"test auc_roc {test_report.auc_roc:.4f}"
    )
    return test_report


def cmd_train(args) -> int:
    cfg = resolve(TRAIN_DEFAULTS, args)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    cfg["command"] = "train"
    write_kv(out / "manifest.kv", cfg)
    del cfg["command"]
    if cfg["seeds"] <= 1:
        _train_once(cfg, cfg["seed"], out)
        return 0
    reports = []
    for k in range(cfg["seeds"]):
        seed = cfg["seed"] + k
        reports.append(_train_once(cfg, seed, out / f"seed{seed}"))
    summary = {}
    for name in ("auc_roc", "auc_pr", "brier"):
        values = np.array([getattr(r, name) for r in reports])
        summary[f"{name}_mean"] = f"{values.mean():.6f}"
        summary[f"{name}_sd"] = f"{values.std(ddof=1):.6f}"
    summary["runs"] = str(len(reports))
    write_kv(out / "summary.kv", summary)
    print(
        f"{cfg['seeds']} runs: auc_roc {summary['auc_roc_mean']} "
        f"± {summary['auc_roc_sd']}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = resolve(EVAL_DEFAULTS, args)
    model, vocab, _ = load_model_dir(cfg["model_dir"])
    docs = datamod.read_jsonl(_docs_path(cfg["data"], cfg["split"]))
    report = compute_metrics(score_documents(model, docs, vocab), n_bins=cfg["bins"])
    out = Path(cfg["out"]) if cfg["out"] else Path(cfg["model_dir"]) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.kv").write_text(report.to_kv(), encoding="utf-8")
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    with open(out / "reliability.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bin_low,bin_high,count,mean_score,positive_fraction\n")
        for b in report.bins.bins:
            if b.empty:
                fh.write(f"{b.low:.2f},{b.high:.2f},0,,\n")
            else:
                fh.write(
                    f"{b.low:.2f},{b.high:.2f},{b.count},"
                    f"{b.mean_score:.6f},{b.positive_fraction:.6f}\n"
                )
    cfg["command"] = "eval"
    write_kv(out / "manifest.kv", cfg)
    print(report.to_kv().strip())
    return 0


def cmd_heatmap(args) -> int:
    cfg = resolve(HEATMAP_DEFAULTS, args)
    model, vocab, _ = load_model_dir(cfg["model_dir"])
    docs = datamod.read_jsonl(_docs_path(cfg["data"], "test"))
    tokens = {t for t in cfg["filter"].split(",") if t}
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for doc in docs:
        if written >= cfg["limit"]:
            break
        if not any(set(s) & tokens for s in doc.sentences):
            continue
        for rec in extract_attention_maps(model, doc, vocab, filter_tokens=tokens):
            path = out / f"{doc.id}_s{rec.sentence_index}.csv"
            export_heatmap(rec, path)
        written += 1
    cfg["command"] = "heatmap"
    write_kv(out / "manifest.kv", cfg)
    print(f"exported heatmaps for {written} documents to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = resolve(GRADCHECK_DEFAULTS, args)
    tol = cfg["tol"]
    failures = 0
    kinds = [
        MappingKind.softmax(),
        MappingKind.sparsemax(),
        MappingKind.entmax15(),
        MappingKind.entmax(1.3),
    ]
    for kind in kinds:
        err = mapping_max_grad_error(kind, trials=cfg["trials"], seed=cfg["seed"])
        ok = err <= tol
        failures += not ok
        print(f"mapping {kind}: max_rel_err={err:.2e} {'PASS' if ok else 'FAIL'}")

    corpus = datamod.generate_synthetic_corpus(
        datamod.SyntheticCorpusConfig(
            n_documents=4, vocab_size=12, min_sentences=2, max_sentences=3,
            min_words=3, max_words=5, seed=cfg["seed"],
        )
    )
    vocab = datamod.build_vocab((s for d in corpus for s in d.sentences), min_freq=1)
    for family in ("att", "tr"):
        for mapping in ("softmax", "entmax15", "sparsemax"):
            run = dict(
                TRAIN_DEFAULTS, model=family, mapping=mapping, hidden=8,
                embed_dim=6, max_words=5, max_sents=3, dropout=0.0,
            )
            err = None
            for attempt in range(4):
                model = build_model(
                    run, len(vocab), seed=cfg["seed"] + attempt, dtype=np.float64
                )
                batch = datamod.pad_and_batch(corpus, vocab, 5, 3, len(corpus))[0]
                err = model_grad_error(model, batch)
                if err <= tol:
                    break
            ok = err <= tol
            failures += not ok
            print(
                f"model {family}-{mapping}: max_rel_err={err:.2e} "
                f"{'PASS' if ok else 'FAIL'}"
            )
    return 1 if failures else 0


# ---------------------------------------------------------------------------

def _add_flags(parser, defaults):
    parser.add_argument("--config", help="key=value config file; flags override")
    for key, default in defaults.items():
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, default=None, help=f"default: {default}")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salab",
        description="sparse-attention text classification lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults, fn in (
        ("gen-data", GEN_DEFAULTS, cmd_gen_data),
        ("train", TRAIN_DEFAULTS, cmd_train),
        ("eval", EVAL_DEFAULTS, cmd_eval),
        ("heatmap", HEATMAP_DEFAULTS, cmd_heatmap),
        ("gradcheck", GRADCHECK_DEFAULTS, cmd_gradcheck),
    ):
        p = sub.add_parser(name)
        _add_flags(p, defaults)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = make_parser().parse_args(argv)
    try:
        code = args.fn(args)
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        code = 2
    except PoisonedGradientError as e:
        print(f"error: poisoned gradient: {e}", file=sys.stderr)
        code = 3
    except UndefinedMetricError as e:
        print(f"error: undefined metric: {e}", file=sys.stderr)
        code = 4
    except (SalabError, ValueError) as e:
        print(f"error: bad configuration or input: {e}", file=sys.stderr)
        code = 2
    if argv is None:
        sys.exit(code)
    return code
