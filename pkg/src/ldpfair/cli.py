"""Command-line entry point.

Every command writes a JSON run manifest listing its outputs with SHA-256
hashes.  Exit codes: 0 success, 2 invalid input or configuration, 3 failed
computation.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, correction, data, experiments, fair, noise, privacy, protocol, synth
from .models import TrainConfig, TrainingDiverged, default_loss, loss_kind

EXIT_OK, EXIT_VALIDATION, EXIT_COMPUTATION = 0, 2, 3


class ValidationError(ValueError):
    pass


# --------------------------------------------------------------------------
# manifest helpers

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    return str(v)


def write_manifest(args, outputs: list[str], started: float, extra: dict | None = None) -> str:
    path = args.manifest or (outputs[0] + ".manifest.json" if outputs else "ldpfair.manifest.json")
    config = {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}
    seeds = {k: v for k, v in config.items() if "seed" in k}
    doc = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": _jsonable(config),
        "seeds": _jsonable(seeds),
        "outputs": {p: file_sha256(p) for p in outputs},
        "wall_clock_seconds": round(time.time() - started, 3),
        "library_version": __version__,
    }
    if extra:
        doc["results"] = _jsonable(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_floats(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ValidationError(f"--{name} expects comma-separated numbers") from exc


def _train_config(args) -> TrainConfig:
    return TrainConfig(seed=args.seed, epochs=args.epochs, restarts=args.restarts,
                       optimizer=args.optimizer, learning_rate=args.learning_rate)


def _load(args, sensitive=None, privatized=None, task=None):
    ds, enc = data.load_csv(args.input, outcome=args.outcome, sensitive=sensitive,
                            privatized=privatized, task=task or args.task)
    return ds, enc


def _feature_dataset(path, outcome, task, features=None, exclude=("d", "s")):
    """Dataset for scoring or sending: sensitive columns are dropped, a missing outcome is zero."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if outcome not in frame.columns:
        frame[outcome] = 0.0
    if features:
        feats = features.split(",")
    else:
        feats = [c for c in frame.columns if c != outcome and c not in exclude]
    ds, _ = data.from_frame(frame, outcome, task=task, features=feats)
    return ds


def _has_column(path, name) -> bool:
    return name in pd.read_csv(path, nrows=0).columns


# --------------------------------------------------------------------------
# commands

def cmd_synth(args):
    if args.design == "claims":
        ds = synth.dgp_sample(synth.SynthConfig(n=args.n, seed=args.seed, sigma=args.sigma))
    elif args.design == "classification":
        ds = synth.classification_sample(args.n, args.seed)
    else:
        x, d = synth.anchor_sample(args.n, args.anchor_pi, args.seed)
        ds = data.Dataset(x=x, y=np.zeros(args.n), d=d, feature_names=("x",))
    data.write_csv(ds, args.out)
    return [args.out], {"rows": len(ds)}


def cmd_privatize(args):
    if (args.pi is None) == (args.epsilon is None):
        raise ValidationError("give exactly one of --pi or --epsilon")
    frame = pd.read_csv(args.input, float_precision="round_trip")
    if args.sensitive not in frame.columns:
        raise ValidationError(f"column {args.sensitive!r} not found")
    raw = frame[args.sensitive]
    levels = data._level_sort(raw.astype(str).unique())
    k = args.cardinality or max(len(levels), 2)
    params = (privacy.mechanism_for(args.pi, k) if args.pi is not None
              else privacy.rr_params(args.epsilon, k))
    codes = raw.astype(str).map({v: i for i, v in enumerate(levels)}).to_numpy()
    s = privacy.privatize_array(codes, params, args.seed)
    padded = levels + [str(i) for i in range(len(levels), k)]
    frame[args.output_column] = [padded[i] for i in s]
    if not args.keep_truth:
        frame = frame.drop(columns=[args.sensitive])
    frame.to_csv(args.out, index=False, float_format="%.17g")
    return [args.out], {"epsilon": params.epsilon, "pi": params.pi, "pi_bar": params.pi_bar,
                        "seed": args.seed, "levels": padded}


def cmd_correction(args):
    counts = np.array([int(v) for v in args.counts.split(",")])
    mats, table = correction.corrected_risk_weights(counts, args.pi)
    k = len(counts)
    rows = []
    for name, m in (("pi_inv", mats.pi_inv), ("t_inv", mats.t_inv), ("weights", table)):
        for i in range(k):
            rows.append({"quantity": name, "row": i, **{f"c{j}": m[i, j] for j in range(k)}})
    rows.append({"quantity": "p_d", "row": 0, **{f"c{j}": mats.p_d[j] for j in range(k)}})
    frame = pd.DataFrame(rows)
    text = frame.to_csv(index=False, float_format="%.17g")
    sys.stdout.write(text)
    outputs = []
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        outputs.append(args.out)
    if mats.clamped:
        print("warning: recovered marginal was clamped to the floor", file=sys.stderr)
    return outputs, {"c1": mats.c1, "clamped": mats.clamped}


def _representation(args, ds, cfg):
    if args.representation == "transformed":
        return fair.train_transformation(ds.replace(d=None, s=None), cfg=cfg)
    if args.representation != "raw":
        raise ValidationError("--representation must be raw or transformed")
    return None


def cmd_estimate_noise(args):
    has_d = _has_column(args.input, args.sensitive)
    ds, _ = _load(args, sensitive=args.sensitive if has_d else None, privatized=args.privatized)
    cfg = _train_config(args)
    net = None if args.use_raw_x else _representation(args, ds, cfg)
    xs = ds.x if net is None else net.representation(ds.x)
    est = noise.c1_procedure(xs, ds.s, args.n1, ds.sensitive_cardinality, args.j_star,
                             seed=args.seed)
    rows, kept = [], iter(zip(est.eta_max_per_group, est.c1_per_group))
    for g in range(args.n1):
        if g in est.excluded_groups:
            rows.append({"group": g, "pi_hat": np.nan, "c1": np.nan, "excluded": True})
        else:
            p, c = next(kept)
            rows.append({"group": g, "pi_hat": p, "c1": c, "excluded": False})
    rows.append({"group": "all", "pi_hat": est.pi_hat, "c1": est.c1_hat, "excluded": False})
    text = pd.DataFrame(rows).to_csv(index=False, float_format="%.17g")
    sys.stdout.write(text)
    outputs = []
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        outputs.append(args.out)
    return outputs, {"pi_hat": est.pi_hat, "c1_hat": est.c1_hat, "j_star": est.level_used,
                     "m": est.m}


def cmd_train(args):
    kind = loss_kind(args.loss) if args.loss else default_loss(args.task)
    if kind == "binary_cross_entropy" and args.task != "classification":
        args.task = "classification"
    has_d = _has_column(args.input, args.sensitive)
    has_s = _has_column(args.input, args.privatized)
    if args.algorithm == "mptp" and not has_d:
        raise ValidationError(f"mptp needs the true sensitive column {args.sensitive!r}")
    if args.algorithm == "mptp-ldp":
        if not has_s:
            raise ValidationError(f"mptp-ldp needs the privatized column {args.privatized!r}")
        if args.pi is None and not args.estimate_noise:
            raise ValidationError("mptp-ldp needs --pi or --estimate-noise")
    ds, enc = _load(args, sensitive=args.sensitive if has_d else None,
                    privatized=args.privatized if has_s else None)
    cfg = _train_config(args)
    train, test = data.split(ds, data.SplitConfig(args.test_fraction, args.seed))
    net = _representation(args, train, cfg)
    p_star = _parse_floats(args.p_star, "p-star") if args.p_star else None
    os.makedirs(args.out_dir, exist_ok=True)
    models_path = os.path.join(args.out_dir, "models.txt")
    premiums_path = os.path.join(args.out_dir, "premiums.csv")
    metrics = {"n_train": len(train), "n_test": len(test), "loss": kind}

    if args.algorithm == "unaware":
        model = fair.unawareness_model(train, args.hypothesis, kind, cfg, transformation=net)
        from .models import dumps_model

        with open(models_path, "w") as fh:
            if net is not None:
                fh.write("transformation\n" + dumps_model(net))
            fh.write(dumps_model(model))
        pred = fair.predict_unaware(model, test.x)
        pd.DataFrame({"record_id": np.arange(len(test)), "unawareness": pred}).to_csv(
            premiums_path, index=False, float_format="%.17g")
        metrics["test_loss"] = fair.evaluate(model, test, kind)
    else:
        if args.algorithm == "mptp":
            gms, _ = fair.mptp(train, args.hypothesis, kind, cfg, p_star, net)
        else:
            gms, _ = fair.mptp_ldp(train, None if args.estimate_noise else args.pi,
                                   args.hypothesis, kind, cfg, p_star, net, n1=args.n1,
                                   j_star=args.j_star)
            metrics["pi_used"] = gms.pi
        with open(models_path, "w") as fh:
            fh.write(fair.dumps_model_set(gms))
        ref = gms.p_hat if p_star is None else p_star
        fair.premium_report(gms, ref, test).to_csv(premiums_path)
        if test.d is not None:
            metrics["test_loss"] = fair.evaluate(gms, test, kind)
        metrics["test_dfp_loss"] = fair.evaluate(gms, test, kind, target="dfp", p_star=ref)
    with open(os.path.join(args.out_dir, "encoding.json"), "w") as fh:
        json.dump(enc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for key, value in metrics.items():
        print(f"{key}: {value}")
    return [models_path, premiums_path, os.path.join(args.out_dir, "encoding.json")], metrics


def cmd_price(args):
    with open(args.models) as fh:
        gms = fair.loads_model_set(fh.read())
    ds = _feature_dataset(args.input, args.outcome, gms.task, args.features,
                          args.exclude.split(","))
    p_star = _parse_floats(args.p_star, "p-star") if args.p_star else gms.p_hat
    if p_star is None:
        raise ValidationError("the model set has no stored marginal; pass --p-star")
    fair.premium_report(gms, p_star, ds).to_csv(args.out)
    return [args.out], {"rows": len(ds)}


def _parse_override(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep:
        raise ValidationError(f"--set expects key=value, got {text!r}")
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value
    return key.strip(), parsed


def cmd_experiment(args):
    overrides = dict(_parse_override(t) for t in args.set or [])
    plan = experiments.load_plan(args.plan, overrides)
    if args.fast:
        plan = experiments.fast_profile(plan)
    external = experiments.plan_for_csv(plan) if plan.dataset == "csv" else None
    results, traces = experiments.run_plan(plan, external)
    results.to_csv(args.out, index=False, float_format="%.17g")
    outputs = [args.out]
    traces_path = args.traces or os.path.splitext(args.out)[0] + "_traces.csv"
    traces.to_csv(traces_path, index=False, float_format="%.17g")
    outputs.append(traces_path)
    failed = int((results.status == "error").sum())
    print(experiments.summarize(results).to_string(index=False))
    if failed:
        print(f"{failed} cells failed; see the error column", file=sys.stderr)
    return outputs, {"plan": plan.to_dict(), "failed_cells": failed}


def cmd_insurer(args):
    if args.action == "prepare":
        if not args.input:
            raise ValidationError("insurer prepare needs --in")
        ds = _feature_dataset(args.input, args.outcome, args.task, args.features,
                              args.exclude.split(","))
        payload, _ = protocol.insurer_prepare(ds, args.mode, cfg=_train_config(args),
                                              include_x_star=args.x_star)
        blob = protocol.dumps_payload(payload)
        with open(args.out, "wb") as fh:
            fh.write(blob)
        outputs = [args.out]
        if args.session:
            protocol.write_session(args.session, {
                "payload_sha256": protocol.sha256(blob), "rows": len(payload),
                "insurer_mode": args.mode, "insurer_seed": args.seed,
            })
            outputs.append(args.session)
        return outputs, {"rows": len(payload), "columns": list(payload.columns)}
    if not args.result:
        raise ValidationError("insurer receive needs --result")
    with open(args.result, "rb") as fh:
        result = protocol.loads_result(fh.read())
    protocol.insurer_receive(result).to_csv(args.out, index=False, float_format="%.17g")
    return [args.out], {"noise_mode": result.noise_mode, "pi_used": result.pi_used}


def cmd_ttp(args):
    with open(args.payload, "rb") as fh:
        payload = protocol.loads_payload(fh.read())
    levels = pd.read_csv(args.levels)
    if args.column not in levels.columns:
        raise ValidationError(f"column {args.column!r} not found in {args.levels}")
    raw = levels[args.column].astype(str)
    names = data._level_sort(raw.unique())
    k = args.cardinality or max(len(names), 2)
    codes = raw.map({v: i for i, v in enumerate(names)}).to_numpy()
    if args.true_levels:
        mech = privacy.mechanism_for(1.0, k)
    elif args.pi is not None:
        mech = privacy.mechanism_for(args.pi, k)
    elif args.epsilon is not None:
        mech = privacy.rr_params(args.epsilon, k)
    else:
        mech = None
    store = protocol.SensitiveStore(codes, k, mech, true_levels=args.true_levels)
    options = protocol.ServeOptions(estimate_noise=args.estimate_noise, n1=args.n1,
                                    j_star=args.j_star, hypothesis=args.hypothesis,
                                    cfg=_train_config(args),
                                    export_parameters=args.export_parameters)
    result = protocol.ttp_serve(payload, store, options)
    blob = protocol.dumps_result(result)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    outputs = [args.out]
    if args.session:
        protocol.write_session(args.session, {
            "result_sha256": protocol.sha256(blob), "noise_mode": result.noise_mode,
            "ttp_seed": args.seed, "ttp_status": result.status,
        })
        outputs.append(args.session)
    if result.status != "ok":
        print(f"ttp: {result.message}", file=sys.stderr)
    return outputs, {"status": result.status, "noise_mode": result.noise_mode,
                     "pi_used": result.pi_used}


# --------------------------------------------------------------------------
# parser

def _add_training(p, hypothesis="net"):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5000)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--optimizer", choices=("lbfgs", "gd"), default="lbfgs")
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--hypothesis", choices=("linear", "net"), default=hypothesis)


def _add_input(p):
    p.add_argument("--in", dest="input", required=True, help="input CSV")
    p.add_argument("--outcome", default="y")
    p.add_argument("--task", choices=data.TASKS, default="regression")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="ldpfair", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ldpfair {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(func=func)
        p.add_argument("--config", help="flat TOML file of option defaults")
        p.add_argument("--manifest", help="run manifest path (default: <first output>.manifest.json)")
        subs[name] = p
        return p

    p = add("synth", cmd_synth, help="simulate a dataset")
    p.add_argument("--design", choices=("claims", "classification", "anchor"), default="claims")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=40.0)
    p.add_argument("--anchor-pi", type=float, default=0.9)
    p.add_argument("--out", required=True)

    p = add("privatize", cmd_privatize, help="apply randomized response to a column")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pi", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sensitive", default="d")
    p.add_argument("--output-column", default="s")
    p.add_argument("--cardinality", type=int)
    p.add_argument("--keep-truth", action="store_true", help="keep the true column for evaluation")

    p = add("correction", cmd_correction, help="print correction matrices and weights")
    p.add_argument("--pi", type=float, required=True)
    p.add_argument("--counts", required=True)
    p.add_argument("--out")

    p = add("estimate-noise", cmd_estimate_noise, help="anchor-point estimate of pi")
    _add_input(p)
    p.add_argument("--privatized", default="s")
    p.add_argument("--sensitive", default="d", help="true column to ignore if present")
    p.add_argument("--n1", type=int, default=4)
    p.add_argument("--j-star", type=int)
    p.add_argument("--use-raw-x", action="store_true")
    p.add_argument("--representation", default="raw")
    p.add_argument("--out")
    _add_training(p)

    p = add("train", cmd_train, help="train group models or the unawareness model")
    p.add_argument("algorithm", choices=("mptp", "mptp-ldp", "unaware"))
    _add_input(p)
    p.add_argument("--sensitive", default="d")
    p.add_argument("--privatized", default="s")
    p.add_argument("--pi", type=float)
    p.add_argument("--estimate-noise", action="store_true")
    p.add_argument("--n1", type=int, default=4)
    p.add_argument("--j-star", type=int)
    p.add_argument("--representation", default="raw")
    p.add_argument("--loss", choices=("mse", "bce", "squared_error", "binary_cross_entropy"))
    p.add_argument("--p-star")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--out-dir", required=True)
    _add_training(p)

    p = add("price", cmd_price, help="premiums from a saved model set")
    p.add_argument("--models", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--outcome", default="y")
    p.add_argument("--features", help="comma-separated feature columns")
    p.add_argument("--exclude", default="d,s", help="columns never used as features")
    p.add_argument("--p-star")
    p.add_argument("--out", required=True)

    p = add("experiment", cmd_experiment, help="run an experiment plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--traces")
    p.add_argument("--fast", action="store_true", help="1000 records, five seeds")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a plan key")

    p = add("insurer", cmd_insurer, help="insurer role")
    p.add_argument("action", choices=("prepare", "receive"))
    p.add_argument("--in", dest="input")
    p.add_argument("--outcome", default="y")
    p.add_argument("--task", choices=data.TASKS, default="regression")
    p.add_argument("--features")
    p.add_argument("--exclude", default="d,s", help="columns never sent")
    p.add_argument("--mode", choices=("raw", "transformed"), default="raw")
    p.add_argument("--x-star", action="store_true", help="attach raw features for noise estimation")
    p.add_argument("--result")
    p.add_argument("--session")
    p.add_argument("--out", required=True)
    _add_training(p)

    p = add("ttp", cmd_ttp, help="trusted third party role")
    p.add_argument("action", choices=("serve",))
    p.add_argument("--payload", required=True)
    p.add_argument("--levels", required=True, help="CSV holding the index-aligned levels")
    p.add_argument("--column", default="s")
    p.add_argument("--cardinality", type=int)
    p.add_argument("--pi", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--true-levels", action="store_true")
    p.add_argument("--estimate-noise", action="store_true")
    p.add_argument("--n1", type=int, default=4)
    p.add_argument("--j-star", type=int)
    p.add_argument("--export-parameters", action="store_true")
    p.add_argument("--session")
    p.add_argument("--out", required=True)
    _add_training(p, hypothesis="linear")
    return parser, subs


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser, subs, argv):
    """Parse ``argv``; a ``--config`` file supplies defaults that flags override."""
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    command = next((a for a in argv if a in subs), None)
    if path and command:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
        sp = subs[command]
        dests = {a.dest for a in sp._actions}
        unknown = sorted(k for k in cfg if k.replace("-", "_") not in dests)
        if unknown:
            raise ValidationError(f"unknown config keys for {command}: {unknown}")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        sp.set_defaults(**cfg)
        for action in sp._actions:
            if action.dest in cfg:
                action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser, subs = build_parser()
    started = time.time()
    try:
        args = _apply_config(parser, subs, argv)
        outputs, extra = args.func(args)
        path = write_manifest(args, outputs, started, extra)
        print(f"manifest: {path}", file=sys.stderr)
        return EXIT_OK
    except (TrainingDiverged, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTATION
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
