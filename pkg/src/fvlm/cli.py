"""Batch command-line surface for the whole pipeline.

Subcommands: build-vocab, train, extract-fv, generate, eval-ppl, eval-bleu,
rescore, eval-wer.  Configuration precedence: command-line flag > FVLM_SEED
environment variable (seed only) > config file (`key = value` lines, `#`
comments) > built-in default.  The fully resolved configuration is logged at
startup.  Artifacts are written atomically (temp file + rename); validation
failures exit 1 with a single `error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

from .errors import ConfigError, FvlmError

# (key, type, default) for every config-file-settable knob.
CONFIG_KEYS = {
    "embed_dim": (int, 300),
    "hidden_dim": (int, 300),
    "num_layers": (int, 3),
    "mt_shared_layers": (int, 2),
    "mt_branch_layers": (int, 1),
    "lambda_mt": (float, 1.0),
    "fv_dim": (int, None),
    "lr": (float, 1.0),
    "clip": (float, 5.0),
    "epochs": (int, 10),
    "seed": (int, 42),
    "val_fraction": (float, 0.1),
    "decay_start": (int, 6),
    "max_size": (int, 10000),
    "min_count": (int, 1),
    "history_lengths": (str, "0,1,2,3,5"),
    "max_len": (int, None),
    "lm_scale": (float, 1.0),
    "float_width": (int, 8),
}


def _parse_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
            values[key] = value
    return values


def _resolve_config(args) -> dict:
    """flag > FVLM_SEED (seed only) > config file > default."""
    file_cfg = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, (cast, default) in CONFIG_KEYS.items():
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            resolved[key] = cli_val
        elif key == "seed" and os.environ.get("FVLM_SEED"):
            resolved[key] = int(os.environ["FVLM_SEED"])
        elif key in file_cfg:
            try:
                resolved[key] = cast(file_cfg[key])
            except ValueError as err:
                raise ConfigError(f"config key '{key}': {err}") from err
        else:
            resolved[key] = default
    return resolved


def _log_config(cfg: dict) -> None:
    print("config " + " ".join(f"{k}={cfg[k]}" for k in sorted(cfg)))


def _atomic_write_text(path, content: str) -> None:
    dirname = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".out-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _lm_config(cfg: dict):
    from .models import LmConfig, TrainConfig
    lm = LmConfig(
        embed_dim=cfg["embed_dim"], hidden_dim=cfg["hidden_dim"],
        num_layers=cfg["num_layers"], mt_shared_layers=cfg["mt_shared_layers"],
        mt_branch_layers=cfg["mt_branch_layers"], lambda_mt=cfg["lambda_mt"],
        fv_dim=cfg["fv_dim"],
        train=TrainConfig(learning_rate=cfg["lr"], clip_norm=cfg["clip"],
                          epochs=cfg["epochs"], seed=cfg["seed"],
                          val_fraction=cfg["val_fraction"],
                          decay_start=cfg["decay_start"]))
    lm.validate()
    return lm


def _epoch_logger(record: dict) -> None:
    print(f"epoch={record['epoch']} ce={record['ce']:.6f} "
          f"mse={record['mse']:.6f} ppl={record['ppl']:.6f}")
    sys.stdout.flush()


def cmd_build_vocab(args) -> int:
    from .corpus import build_vocab
    cfg = _resolve_config(args)
    _log_config(cfg)
    vocab = build_vocab(args.corpus, max_size=cfg["max_size"], min_count=cfg["min_count"])
    _atomic_write_text(args.out, "".join(w + "\n" for w in vocab.words))
    print(f"vocabulary size={vocab.size} written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    _log_config(cfg)
    from .corpus import Vocabulary, read_corpus
    from .models import (load_checkpoint, save_checkpoint, train_enhanced,
                         train_fv_predictor, train_lm, train_mt)
    if args.arch in ("fv-predictor", "mt") and not args.extractor:
        raise ConfigError(f"--arch {args.arch} requires --extractor "
                          "(train the reversed extractor stage first)")
    if args.arch == "enhanced" and not args.predictor:
        raise ConfigError("--arch enhanced requires --predictor "
                          "(train the fv-predictor stage first)")
    vocab = Vocabulary.load(args.vocab)
    sequences = read_corpus(args.corpus, vocab)
    lm_cfg = _lm_config(cfg)
    if args.arch == "baseline":
        model = train_lm(sequences, vocab, lm_cfg, "forward", on_epoch=_epoch_logger)
    elif args.arch == "reversed":
        model = train_lm(sequences, vocab, lm_cfg, "reversed", on_epoch=_epoch_logger)
    elif args.arch == "fv-predictor":
        extractor = load_checkpoint(args.extractor, vocab=vocab, expect_kind="reversed")
        if lm_cfg.fv_dim is None:
            lm_cfg.fv_dim = extractor.fv_dim
        model = train_fv_predictor(sequences, vocab, extractor, lm_cfg,
                                   on_epoch=_epoch_logger)
    elif args.arch == "enhanced":
        predictor = load_checkpoint(args.predictor, vocab=vocab, expect_kind="fv-predictor")
        if lm_cfg.fv_dim is None:
            lm_cfg.fv_dim = predictor.fv_dim
        model = train_enhanced(sequences, vocab, predictor, lm_cfg,
                               on_epoch=_epoch_logger)
    elif args.arch == "mt":
        extractor = load_checkpoint(args.extractor, vocab=vocab, expect_kind="reversed")
        if lm_cfg.fv_dim is None:
            lm_cfg.fv_dim = extractor.fv_dim
        model = train_mt(sequences, vocab, extractor, lm_cfg, on_epoch=_epoch_logger)
    else:
        raise ConfigError(f"unknown architecture '{args.arch}'")
    save_checkpoint(model, args.out, float_width=cfg["float_width"])
    print(f"checkpoint kind={model.kind} written to {args.out}")
    return 0


def cmd_extract_fv(args) -> int:
    cfg = _resolve_config(args)
    _log_config(cfg)
    from .corpus import Vocabulary, read_corpus
    from .models import extract_future_vectors, load_checkpoint
    vocab = Vocabulary.load(args.vocab)
    extractor = load_checkpoint(args.extractor, vocab=vocab, expect_kind="reversed")
    sequences = read_corpus(args.corpus, vocab)
    lines = []
    for i, seq in enumerate(sequences):
        for pos, z in enumerate(extract_future_vectors(extractor, seq)):
            values = " ".join(f"{v:.17g}" for v in z)
            lines.append(f"{i}\t{pos + 1}\t{values}\n")
    _atomic_write_text(args.out, "".join(lines))
    print(f"future vectors for {len(sequences)} sentences written to {args.out}")
    return 0


def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    _log_config(cfg)
    from .corpus import Vocabulary, decode, encode_history
    from .models import greedy_continue, load_checkpoint
    vocab = Vocabulary.load(args.vocab)
    model = load_checkpoint(args.model, vocab=vocab)
    history = encode_history(vocab, args.history)
    max_len = cfg["max_len"] if cfg["max_len"] is not None else 50
    continuation = greedy_continue(model, history, max_len)
    words = args.history.split() + decode(vocab, continuation)
    print(" ".join(words))
    return 0


def cmd_eval_ppl(args) -> int:
    cfg = _resolve_config(args)
    _log_config(cfg)
    from .corpus import Vocabulary, read_corpus
    from .evaluation import perplexity
    from .models import load_checkpoint
    vocab = Vocabulary.load(args.vocab)
    model = load_checkpoint(args.model, vocab=vocab)
    sequences = read_corpus(args.corpus, vocab)
    print(f"ppl={perplexity(model, sequences):.6f} sentences={len(sequences)}")
    return 0


def cmd_eval_bleu(args) -> int:
    cfg = _resolve_config(args)
    _log_config(cfg)
    from .corpus import Vocabulary, read_corpus
    from .evaluation import sequence_prediction_eval
    from .models import load_checkpoint
    vocab = Vocabulary.load(args.vocab)
    model = load_checkpoint(args.model, vocab=vocab)
    sequences = read_corpus(args.corpus, vocab)
    try:
        lengths = [int(x) for x in cfg["history_lengths"].split(",") if x.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"--history-lengths: {err}") from err
    report = sequence_prediction_eval(model, sequences, history_lengths=lengths,
                                      max_len=cfg["max_len"])
    print(report.table(model.kind))
    rows = report.csv_rows(model.kind)
    print("\n".join(rows))
    if args.csv:
        _atomic_write_text(args.csv, "".join(r + "\n" for r in rows))
    return 0


def _load_rescoring_inputs(args, vocab):
    from .models import load_checkpoint
    from .rescoring import load_nbest
    loaded = load_nbest(args.nbest)
    for lineno, message in loaded.malformed:
        print(f"malformed line {lineno}: {message}", file=sys.stderr)
    models = [load_checkpoint(p, vocab=vocab) for p in args.models.split(",")]
    return loaded.lists, models


def cmd_rescore(args) -> int:
    cfg = _resolve_config(args)
    _log_config(cfg)
    from .corpus import Vocabulary
    from .rescoring import RescoreConfig, rescore
    vocab = Vocabulary.load(args.vocab)
    lists, models = _load_rescoring_inputs(args, vocab)
    rc = RescoreConfig(lm_scale=cfg["lm_scale"], log_domain=not args.linear)
    result = rescore(lists, models, vocab, rc)
    sel_lines = [f"{u}\t{e.acoustic_score:.6f}\t{e.text}\n" for u, e, _ in result.selections]
    _atomic_write_text(args.out, "".join(sel_lines))
    if args.audit:
        audit_lines = []
        for row in result.table:
            for k, s in enumerate(row.lm_scores):
                audit_lines.append(
                    f"{row.utterance_id}\t{row.rank}\t{k}\t{s:.6f}\t"
                    f"{row.acoustic:.6f}\t{row.combined_lm:.6f}\t{row.total:.6f}\n")
        _atomic_write_text(args.audit, "".join(audit_lines))
    for utt, count in result.oov_counts.items():
        if count:
            print(f"oov utterance={utt} tokens={count}")
    print(f"selections for {len(result.selections)} utterances written to {args.out}")
    return 0


def cmd_eval_wer(args) -> int:
    cfg = _resolve_config(args)
    _log_config(cfg)
    from .corpus import Vocabulary
    from .rescoring import RescoreConfig, evaluate_rescoring, load_references
    vocab = Vocabulary.load(args.vocab)
    lists, models = _load_rescoring_inputs(args, vocab)
    references = load_references(args.refs)
    rc = RescoreConfig(lm_scale=cfg["lm_scale"], log_domain=not args.linear)
    report = evaluate_rescoring(lists, references, models, vocab, rc)
    for utt, count in report.oov_counts.items():
        if count:
            print(f"oov utterance={utt} tokens={count}")
    print(report.table())
    return 0


def _add_config_flags(p, keys) -> None:
    for key in keys:
        cast, _ = CONFIG_KEYS[key]
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=cast, default=None,
                       help=f"{key} (default {CONFIG_KEYS[key][1]})")


_TRAIN_KEYS = ("embed_dim", "hidden_dim", "num_layers", "mt_shared_layers",
               "mt_branch_layers", "lambda_mt", "fv_dim", "lr", "clip",
               "epochs", "seed", "val_fraction", "decay_start", "float_width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fvlm",
        description="Future-vector enhanced LSTM language models: "
                    "training, generation, BLEU/PPL evaluation, n-best rescoring.")
    parser.add_argument("--threads", dest="threads", type=int, default=None,
                        help="BLAS worker threads (default 1, for bit-reproducibility)")
    parser.add_argument("--config", default=None, help="config file of 'key = value' lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="count words and write a vocabulary file")
    p.add_argument("--corpus", required=True, help="training text, one sentence per line")
    p.add_argument("--out", required=True, help="output vocabulary file")
    _add_config_flags(p, ("max_size", "min_count"))
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train one architecture and write a checkpoint")
    p.add_argument("--arch", required=True,
                   choices=["baseline", "reversed", "fv-predictor", "enhanced", "mt"],
                   help="which network to train")
    p.add_argument("--corpus", required=True, help="training text")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--extractor", default=None,
                   help="reversed-LM checkpoint (required for fv-predictor and mt)")
    p.add_argument("--predictor", default=None,
                   help="fv-predictor checkpoint (required for enhanced)")
    _add_config_flags(p, _TRAIN_KEYS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract-fv", help="dump future vectors for a corpus")
    p.add_argument("--extractor", required=True, help="reversed-LM checkpoint")
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True,
                   help="output text file: sentence<TAB>position<TAB>values")
    p.set_defaults(func=cmd_extract_fv)

    p = sub.add_parser("generate", help="greedy continuation of a history")
    p.add_argument("--model", required=True, help="LM checkpoint")
    p.add_argument("--vocab", required=True)
    p.add_argument("--history", required=True, help="history words (without <s>)")
    _add_config_flags(p, ("max_len",))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval-ppl", help="corpus perplexity")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_eval_ppl)

    p = sub.add_parser("eval-bleu", help="sequence prediction scored by BLEU")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--csv", default=None, help="also write csv rows to this file")
    _add_config_flags(p, ("history_lengths", "max_len"))
    p.set_defaults(func=cmd_eval_bleu)

    p = sub.add_parser("rescore", help="select the best hypothesis per utterance")
    p.add_argument("--nbest", required=True, help="n-best file (id<TAB>score<TAB>text)")
    p.add_argument("--models", required=True, help="comma-separated LM checkpoints")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="selection file")
    p.add_argument("--audit", default=None, help="score audit file")
    p.add_argument("--linear", action="store_true",
                   help="interpolate probabilities instead of log-probabilities")
    _add_config_flags(p, ("lm_scale",))
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("eval-wer", help="rescoring WER against reference transcripts")
    p.add_argument("--nbest", required=True)
    p.add_argument("--refs", required=True, help="reference file (id<TAB>text)")
    p.add_argument("--models", required=True, help="comma-separated LM checkpoints")
    p.add_argument("--vocab", required=True)
    p.add_argument("--linear", action="store_true",
                   help="interpolate probabilities instead of log-probabilities")
    _add_config_flags(p, ("lm_scale",))
    p.set_defaults(func=cmd_eval_wer)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads if args.threads is not None else 1
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))
    try:
        return args.func(args)
    except FvlmError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
