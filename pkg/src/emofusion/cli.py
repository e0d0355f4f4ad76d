"""Command-line entry points: ``python -m emofusion <command> ...``."""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .bayes import DescriptorVocabulary, NaiveBayes, build_vocabulary, integrate_cnn_node
from .errors import ConfigError, DataError, EmofusionError
from .evalreport import MODES, confusion_matrix, descriptor_histogram, evaluate_modes, histogram_csv, render_report
from .faces import face_source_load
from .labels import CLASSES
from .pipeline import FusionModel, face_vote, predict, update_bundle
from .train import OptimizerConfig, loss_trace_csv, train_cnn

log = logging.getLogger("emofusion")


def _face_dataset(manifest):
    faces, labels = [], []
    for record in manifest:
        if record.label is None:
            continue
        batch = face_source_load(record)
        faces.extend(f.pixels for f in batch.faces)
        labels.extend([record.label] * batch.K)
    if not faces:
        raise DataError(f"split {manifest.split!r} has no labelled faces")
    return np.stack(faces), np.array(labels)


def _load_bundle(path, required=True):
    path = Path(path)
    if path.exists():
        return data_io.load_model(path)
    if required:
        raise DataError(f"model file {path} does not exist")
    return data_io.ModelBundle()


def _write(out, name, text):
    path = Path(out) / name
    path.write_text(text)
    return path


def cmd_build_vocab(args):
    vocab = build_vocabulary(data_io.load_dataset(args.root, args.split), args.min_count)
    path = _write(args.out, "vocab.txt", "".join(f"{d}\n" for d in vocab))
    print(f"{len(vocab)} descriptors -> {path}")


def cmd_train_cnn(args):
    manifest = data_io.load_dataset(args.root, args.split)
    faces, labels = _face_dataset(manifest)
    config = OptimizerConfig(
        learning_rate=args.lr, decay=args.decay, epsilon=args.epsilon,
        iterations=args.iterations, per_class=args.per_class, seed=args.seed,
        initial_accumulator=args.initial_accumulator, micro_batch=args.micro_batch,
    )
    result = train_cnn(faces, labels, config)
    bundle = update_bundle(_load_bundle(args.model, required=False), net=result.net,
                           optimizer=config.to_dict())
    # a retrained network invalidates any earlier calibration
    bundle.cnn_cpt = None
    data_io.save_model(bundle, args.model)
    _write(args.out, "loss.csv", loss_trace_csv(result.losses))
    print(f"trained on {len(labels)} faces for {result.iterations_run} iterations -> {args.model}")


def cmd_calibrate(args):
    bundle = _load_bundle(args.model)
    model = FusionModel.from_bundle(bundle)
    if model.net is None:
        raise ConfigError("calibration needs a trained CNN in the model file")
    manifest = data_io.load_dataset(args.root, args.split)
    true, pred = [], []
    for record in manifest:
        if record.label is None:
            continue
        k, cnn_class, _ = face_vote(record, model.net)
        if k:
            true.append(record.label)
            pred.append(cnn_class)
    confusion = confusion_matrix(true, pred)
    cpt = integrate_cnn_node(confusion, args.smoothing)
    data_io.save_model(update_bundle(bundle, cnn_cpt=cpt), args.model)
    lines = ["true," + ",".join(f"count_{c}" for c in CLASSES) + "," + ",".join(f"p_{c}" for c in CLASSES)]
    for name, counts, probs in zip(CLASSES, confusion, cpt):
        lines.append(",".join([name] + [str(int(v)) for v in counts] + [repr(float(v)) for v in probs]))
    _write(args.out, "calibration.csv", "\n".join(lines) + "\n")
    print(f"CNN evidence table from {len(true)} images of split {args.split!r} -> {args.model}")


def cmd_fit_bn(args):
    manifest = data_io.load_dataset(args.root, args.split)
    vocab = None
    if args.vocab:
        vocab = DescriptorVocabulary(tuple(data_io.read_descriptors(args.vocab)))
        vocab = DescriptorVocabulary(tuple(sorted(vocab.entries)))
    bayes = NaiveBayes.fit(manifest, vocab, args.smoothing, args.presence_only, args.min_count)
    bundle = _load_bundle(args.model, required=False)
    cnn_cpt = bundle.cnn_cpt
    bundle = update_bundle(bundle, bayes=bayes)
    bundle.cnn_cpt = cnn_cpt
    data_io.save_model(bundle, args.model)
    print(f"naive Bayes over {len(bayes.vocabulary)} descriptors -> {args.model}")


def cmd_eval(args):
    model = FusionModel.from_bundle(_load_bundle(args.model))
    manifest = data_io.load_dataset(args.root, args.split)
    modes = [m for m in MODES if _available(model, m)]
    if args.mode not in modes:
        raise ConfigError(f"mode {args.mode!r} is not available with this model file")
    reports = evaluate_modes(manifest, model, modes, average=args.average)
    text, table = render_report(reports)
    _write(args.out, "report.txt", text)
    _write(args.out, "report.csv", table)
    headline = next(r for r in reports if r.mode == args.mode)
    print(f"{args.mode} accuracy on {args.split}: {100 * headline.accuracy:.2f}%")


def _available(model, mode):
    if mode == "bn":
        return model.bayes is not None
    if mode == "cnn":
        return model.net is not None
    return model.net is not None and model.bayes is not None and model.cnn_cpt is not None


def cmd_predict(args):
    if not args.image:
        raise ConfigError("predict needs --image")
    model = FusionModel.from_bundle(_load_bundle(args.model))
    result = predict(data_io.record_from_image(args.image), model)
    probs = " ".join(f"{c}={p:.4f}" for c, p in zip(CLASSES, result.posterior))
    print(f"{CLASSES[result.label]} {probs} faces={result.face_count}")


def cmd_report_descriptors(args):
    manifest = data_io.load_dataset(args.root, args.split)
    bundle = _load_bundle(args.model, required=False)
    if bundle.vocabulary is not None:
        vocab = DescriptorVocabulary(tuple(bundle.vocabulary))
    else:
        vocab = build_vocabulary(manifest, args.min_count)
    path = _write(args.out, "descriptors.csv", histogram_csv(descriptor_histogram(manifest, vocab)))
    print(f"descriptor frequencies for {len(vocab)} descriptors -> {path}")


COMMANDS = {
    "build-vocab": (cmd_build_vocab, "collect the descriptor vocabulary of a split"),
    "train-cnn": (cmd_train_cnn, "train the face CNN with balanced RMSProp batches"),
    "calibrate": (cmd_calibrate, "fit the CNN evidence table from a held-out confusion matrix"),
    "fit-bn": (cmd_fit_bn, "fit the descriptor naive Bayes model"),
    "eval": (cmd_eval, "evaluate BN-only, CNN-only and fused accuracy"),
    "predict": (cmd_predict, "classify one image using its sidecar files"),
    "report-descriptors": (cmd_report_descriptors, "per-class descriptor frequencies as CSV"),
}

_SPLIT_DEFAULTS = {"calibrate": "val", "eval": "test"}


def build_parser():
    parser = argparse.ArgumentParser(prog="emofusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--root", default=".", help="dataset root directory")
        p.add_argument("--split", default=_SPLIT_DEFAULTS.get(name, "train"))
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key=value file; its values override flags")
        p.add_argument("--model", default="model.emf", help="model bundle path")
        p.add_argument("--out", default="out", help="directory for reports and run records")
        p.add_argument("--mode", choices=MODES, default="ensemble")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("build-vocab", "fit-bn", "report-descriptors"):
            p.add_argument("--min-count", type=int, default=1)
        if name == "train-cnn":
            p.add_argument("--iterations", type=int, default=1500)
            p.add_argument("--per-class", type=int, default=21)
            p.add_argument("--lr", type=float, default=1e-3)
            p.add_argument("--decay", type=float, default=0.9)
            p.add_argument("--epsilon", type=float, default=1e-10)
            p.add_argument("--initial-accumulator", type=float, default=OptimizerConfig.initial_accumulator)
            p.add_argument("--micro-batch", type=int, default=OptimizerConfig.micro_batch)
        if name in ("calibrate", "fit-bn"):
            p.add_argument("--smoothing", type=float, default=1.0)
        if name == "fit-bn":
            p.add_argument("--vocab", help="vocabulary file, one descriptor per line")
            p.add_argument("--presence-only", action="store_true")
        if name == "eval":
            p.add_argument("--average", action="store_true",
                           help="fuse by averaging distributions instead of the evidence node")
        if name == "predict":
            p.add_argument("--image")
    return parser


def _apply_config(parser, args):
    """Overlay values from ``--config`` onto the parsed flags."""
    if not args.config:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    for key, raw in data_io.read_config(args.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            value = action.type(raw) if action.type else raw
            if action.choices and value not in action.choices:
                raise ConfigError(f"config value {key}={raw} not in {list(action.choices)}")
        setattr(args, key, value)
    return args


def _resolved(args):
    return {k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None}


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _apply_config(parser, args)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        data_io.write_config(Path(args.out) / f"{args.command}.config", _resolved(args))
        args.func(args)
    except (EmofusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())
