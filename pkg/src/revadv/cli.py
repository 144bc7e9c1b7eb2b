"""Command-line front end.

Exit codes: 0 success, 2 capacity exceeded, 3 attack failed, 4 format or
I/O error, 5 usage error. Every output file is written atomically.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import attacks, classifier, pipeline
from .errors import AttackFailedError, CapacityError, DomainError, RevAdvError, ZeroGradientError
from .imageio import atomic_write, read_image, write_image

EXIT_OK, EXIT_CAPACITY, EXIT_ATTACK, EXIT_FORMAT, EXIT_USAGE = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _method(value):
    m = attacks.METHOD_ALIASES.get(value, value)
    if m not in attacks.METHODS:
        raise argparse.ArgumentTypeError(f"unknown method {value!r}")
    return m


def _nonneg(value):
    try:
        v = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None
    if not v >= 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"must be a finite non-negative number: {value!r}")
    return v


def _positive_int(value):
    try:
        v = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {value!r}")
    return v


def _csv(kind):
    def parse(value):
        items = [s.strip() for s in value.split(",") if s.strip()]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        return [kind(s) for s in items]

    return parse


def build_parser():
    p = _Parser(prog="revadv", description="Adversarial images that hide their own perturbation, on a small MLP.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train the reference classifier")
    t.add_argument("--data", default="synthetic", help="synthetic | idx:<images>,<labels>")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=_positive_int, default=classifier.TrainConfig.epochs)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic dataset")

    c = sub.add_parser("classify", help="print the predicted label of an image")
    c.add_argument("--model", required=True)
    c.add_argument("--in", dest="inp", required=True)

    for name, helptext in (("attack", "write an adversarial image"),
                           ("create", "write a reversible adversarial image")):
        a = sub.add_parser(name, help=helptext)
        a.add_argument("--model", required=True)
        a.add_argument("--in", dest="inp", required=True)
        a.add_argument("--method", type=_method, required=True)
        a.add_argument("--eps", type=_nonneg, default=0.0)
        a.add_argument("--label", type=int, help="true label (default: the clean prediction)")
        a.add_argument("--out", required=True)
        a.add_argument("--report")
        if name == "create":
            a.add_argument("--backend", choices=("hs", "ce"), default="hs")
            a.add_argument("--max-passes", type=_positive_int)
            a.add_argument("--planes", type=_positive_int)
            a.add_argument("--proceed-anyway", action="store_true",
                           help="embed even when the attack leaves the label unchanged")
            a.add_argument("--retry-smaller-eps", action="store_true",
                           help="IGSM only: halve eps while the payload does not fit")

    r = sub.add_parser("recover", help="extract the original and adversarial images")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--backend", choices=("hs", "ce"), default="hs")
    r.add_argument("--out-original", required=True)
    r.add_argument("--out-adv", required=True)
    r.add_argument("--report")

    e = sub.add_parser("eval", help="AE and RAE success rates over a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", default="synthetic", help="synthetic | idx:<images>,<labels>")
    e.add_argument("--data-seed", type=int, default=0)
    e.add_argument("--methods", type=_csv(_method), default=list(pipeline.DEFAULT_METHODS))
    e.add_argument("--eps-list", type=_csv(_nonneg), default=list(pipeline.DEFAULT_EPS_GRID))
    e.add_argument("--backend", choices=("hs", "ce"), default="hs")
    e.add_argument("--max-passes", type=_positive_int)
    e.add_argument("--planes", type=_positive_int)
    e.add_argument("--limit", type=_positive_int, help="evaluate at most this many images")
    e.add_argument("--initially-correct-only", action="store_true",
                   help="keep only images the model classifies correctly before attacking")
    e.add_argument("--workers", type=_positive_int, default=1)
    e.add_argument("--out", required=True)
    return p


def _require_files(*paths):
    for path in paths:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"no such file: {path}")


def _load_dataset(spec, data_seed, split):
    if spec == "synthetic":
        train, test = classifier.shapes_splits(seed=data_seed)
        return train, test
    if spec.startswith("idx:"):
        parts = spec[4:].split(",")
        if len(parts) != 2:
            raise UsageError("--data idx: expects <images>,<labels>")
        _require_files(*parts)
        ds = classifier.load_idx(parts[0], parts[1], split=split)
        return ds, None
    raise UsageError(f"--data must be 'synthetic' or 'idx:<images>,<labels>', got {spec!r}")


def _write_json(path, obj):
    atomic_write(path, (json.dumps(obj, indent=2) + "\n").encode())


def _say(msg):
    print(msg, file=sys.stderr)


def cmd_train(args):
    train, test = _load_dataset(args.data, args.data_seed, "train")
    cfg = classifier.TrainConfig(epochs=args.epochs, seed=args.seed)
    t0 = time.perf_counter()
    params = classifier.train(train, cfg, test=test)
    classifier.save_model(params, args.out)
    out = {"model": args.out, "seconds": round(time.perf_counter() - t0, 2), **params.metrics}
    print(json.dumps(out))
    return EXIT_OK


def cmd_classify(args):
    _require_files(args.model, args.inp)
    params = classifier.load_model(args.model)
    pred = classifier.predict(params, read_image(args.inp))
    names = classifier.SHAPE_CLASSES if len(pred.logits) == len(classifier.SHAPE_CLASSES) else None
    print(json.dumps({
        "label": pred.label,
        "name": names[pred.label] if names else None,
        "probabilities": [round(float(p), 6) for p in pred.probabilities],
    }))
    return EXIT_OK


def _attack_config(args):
    try:
        return attacks.AttackConfig(method=args.method, eps=args.eps)
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def cmd_attack(args):
    _require_files(args.model, args.inp)
    params = classifier.load_model(args.model)
    image = read_image(args.inp)
    cfg = _attack_config(args)
    label = classifier.predict(params, image).label if args.label is None else args.label
    res = attacks.run_attack(params, image, label, cfg)
    report = {
        "method": cfg.method, "eps": cfg.eps, "true_label": label,
        "adversarial_label": res.adv_label, "success": bool(res.success),
        "l2": res.l2, "iterations": res.iterations,
    }
    if args.report:
        _write_json(args.report, report)
    if not res.success:
        raise AttackFailedError(f"{cfg.method} left the label at {res.adv_label}", res)
    write_image(args.out, res.adversarial.reshape(image.shape))
    print(json.dumps(report))
    return EXIT_OK


def cmd_create(args):
    _require_files(args.model, args.inp)
    params = classifier.load_model(args.model)
    image = read_image(args.inp)
    cfg = _attack_config(args)
    rae, rep = pipeline.create_rae(
        params, image, cfg, args.backend, label=args.label,
        proceed_anyway=args.proceed_anyway, max_passes=args.max_passes,
        planes=args.planes, retry_smaller_eps=args.retry_smaller_eps,
    )
    write_image(args.out, rae.reshape(image.shape))
    if args.report:
        _write_json(args.report, rep.to_dict())
    print(json.dumps(rep.to_dict()))
    return EXIT_OK


def cmd_recover(args):
    _require_files(args.inp)
    rae = read_image(args.inp)
    original, adversarial, r, header = pipeline.recover(rae, args.backend)
    write_image(args.out_original, original.reshape(rae.shape))
    write_image(args.out_adv, adversarial.reshape(rae.shape))
    report = {
        "method": header.method, "eps": header.eps, "backend": header.backend,
        "dims": list(header.dims), "perturbation_bits": header.payload_bits,
        "perturbation_l2": float(np.linalg.norm(r.values.astype(np.float64))),
    }
    if args.report:
        _write_json(args.report, report)
    print(json.dumps(report))
    return EXIT_OK


def cmd_eval(args):
    _require_files(args.model)
    params = classifier.load_model(args.model)
    train, test = _load_dataset(args.data, args.data_seed, "test")
    dataset = test if test is not None else train
    report = pipeline.evaluate(
        params, dataset, methods=args.methods, eps_list=args.eps_list, backend=args.backend,
        workers=args.workers, max_passes=args.max_passes, planes=args.planes,
        limit=args.limit, initially_correct_only=args.initially_correct_only,
    )
    atomic_write(args.out, pipeline.report_to_json(report).encode())
    _say(f"evaluated {report['images']} images, {len(report['cells'])} cells -> {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "classify": cmd_classify, "attack": cmd_attack,
    "create": cmd_create, "recover": cmd_recover, "eval": cmd_eval,
}


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return EXIT_USAGE
    except CapacityError as exc:
        _say(f"capacity exceeded: {exc}")
        return EXIT_CAPACITY
    except (AttackFailedError, ZeroGradientError) as exc:
        _say(f"attack failed: {exc}")
        return EXIT_ATTACK
    except RevAdvError as exc:
        _say(f"error: {exc}")
        return exc.exit_code
    except OSError as exc:
        _say(f"error: {exc}")
        return EXIT_FORMAT


def main():
    sys.exit(run())
