"""Pipeline driver: generate -> chart -> triangulate -> wiener-fit -> evaluate -> report.

Exit codes: 0 success, 2 usage error, 3 malformed config or input file,
4 missing file or unsatisfiable constraint.  Failures print a single
machine-parsable line ``CCPRED-ERROR code=<n> msg=...`` on stderr.  Every run
writes the resolved configuration (and seeds) next to its output and holds a
lock file so two runs never share an output directory.
"""

import argparse
import contextlib
import dataclasses
import importlib.resources
import json
import os
import sys

import numpy as np

from . import charting, chart_metrics, dataset, dissimilarity, evaluation, features, geometry, wiener

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4

LOCK_NAME = ".ccpred.lock"


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


@contextlib.contextmanager
def _output_lock(out_path):
    outdir = os.path.dirname(os.path.abspath(out_path)) or "."
    if not os.path.isdir(outdir):
        raise CliError(EXIT_MISSING, f"output directory does not exist: {outdir}")
    lock = os.path.join(outdir, LOCK_NAME)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(EXIT_MISSING, f"output directory is locked by {lock}") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(OSError):
            os.remove(lock)


def _write_runlog(out_path, payload):
    path = out_path + ".runlog.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _load_json(path):
    if not os.path.exists(path):
        raise CliError(EXIT_MISSING, f"missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"malformed JSON in {path}: {exc}") from exc


def _read_dataset(path):
    if not os.path.exists(path):
        raise CliError(EXIT_MISSING, f"missing file: {path}")
    try:
        return dataset.read_dataset(path)
    except dataset.CsidError as exc:
        raise CliError(EXIT_CONFIG, f"bad CSID file {path}: {exc}") from exc


def demo_config_path(name):
    ref = importlib.resources.files("ccpred").joinpath(f"data/demo_{name}.json")
    if not ref.is_file():
        raise CliError(EXIT_MISSING, f"no bundled demo config named {name!r}")
    return str(ref)


_SCENARIO_OVERRIDES = (
    ("num_arrays", int),
    ("num_subcarriers", int),
    ("bandwidth", float),
    ("carrier_frequency", float),
    ("sample_interval", float),
    ("noise_std", float),
    ("seed", int),
    ("num_snapshots", int),
    ("speed", float),  # trajectory speed
)


def _apply_set_overrides(cfg_dict, assignments):
    for item in assignments:
        if "=" not in item:
            raise CliError(EXIT_CONFIG, f"--set expects key=json_value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"--set {key}: bad JSON value {raw!r}: {exc}") from exc
        node = cfg_dict
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node:
                raise CliError(EXIT_CONFIG, f"--set {key}: unknown section {part!r}")
            node = node[part]
        node[parts[-1]] = value
    return cfg_dict


def _cmd_generate(args):
    path = demo_config_path(args.demo) if args.demo else args.config
    if path is None:
        raise CliError(EXIT_CONFIG, "generate needs --config or --demo")
    cfg_dict = _load_json(path)
    _apply_set_overrides(cfg_dict, args.set or [])
    for key, cast in _SCENARIO_OVERRIDES:
        val = getattr(args, key, None)
        if val is None:
            continue
        if key == "speed":
            cfg_dict["trajectory"]["speed"] = cast(val)
        else:
            cfg_dict[key] = cast(val)
    try:
        cfg = dataset.ScenarioConfig.from_dict(cfg_dict)
        cfg.validate()
    except dataset.ScenarioError as exc:
        raise CliError(EXIT_CONFIG, f"invalid scenario config: {exc}") from exc
    with _output_lock(args.out):
        ds = dataset.generate_scenario(cfg)
        dataset.write_dataset(ds, args.out)
        _write_runlog(args.out, {"command": "generate", "config": cfg.to_dict(), "snapshots": len(ds)})
    print(f"wrote {args.out}: L={len(ds)} B={ds.num_arrays} M={ds.num_antennas} N={ds.num_subcarriers}")
    return EXIT_OK


def _train_cfg_from_args(args):
    hidden = tuple(int(h) for h in args.hidden.split(",")) if args.hidden else charting.DEFAULT_HIDDEN
    return charting.TrainConfig(
        beta=args.beta,
        epochs=args.epochs,
        batch_pairs=args.batch_pairs,
        learning_rate=args.learning_rate,
        seed=args.seed,
        pairs_per_epoch=args.pairs_per_epoch,
        hidden=hidden,
    )


def _cmd_chart(args):
    ds = _read_dataset(args.train)
    feats = features.csi_feature(ds.H, args.t_taps)
    adps = features.angle_delay_profile(ds.H)
    try:
        D, alpha = dissimilarity.build_dissimilarity(
            adps, ds.t, k=args.knn, t_max=args.t_max, sample_interval=ds.sample_interval
        )
    except dissimilarity.DisconnectedGraphError as exc:
        raise CliError(EXIT_MISSING, f"dissimilarity graph disconnected: {exc}") from exc
    cfg = _train_cfg_from_args(args)
    model, history = charting.train(feats, D, cfg)
    with _output_lock(args.out_model):
        charting.save_model(model, args.out_model)
        if args.out_chart:
            z = charting.forward(model, feats)
            charting.write_chart_csv(args.out_chart, z)
        _write_runlog(
            args.out_model,
            {
                "command": "chart",
                "train": args.train,
                "t_taps": args.t_taps,
                "knn": args.knn,
                "t_max": args.t_max,
                "alpha": alpha,
                "train_cfg": dataclasses.asdict(cfg),
                "loss_history": history,
            },
        )
    print(f"wrote {args.out_model} (loss {history[-1]:.5g} after {len(history)} epochs)" if history else f"wrote {args.out_model}")
    return EXIT_OK


def _load_model(path):
    if not os.path.exists(path):
        raise CliError(EXIT_MISSING, f"missing file: {path}")
    try:
        return charting.load_model(path)
    except charting.ChartingError as exc:
        raise CliError(EXIT_CONFIG, f"bad FCF model file {path}: {exc}") from exc


def _cmd_metrics(args):
    ds = _read_dataset(args.dataset)
    model = _load_model(args.model)
    if np.any(np.isnan(ds.x)):
        raise CliError(EXIT_MISSING, f"dataset {args.dataset} lacks ground-truth positions")
    feats = features.csi_feature(ds.H, model_taps(model, ds))
    z = charting.forward(model, feats)
    k = args.k if args.k is not None else chart_metrics.default_k(len(ds))
    report = chart_metrics.evaluate_chart(ds.x, z, k)
    with _output_lock(args.out):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(chart_metrics.MetricReport.csv_header() + "\n")
            fh.write(report.to_csv_row() + "\n")
        if args.json:
            with open(args.json, "w", encoding="utf-8") as fh:
                fh.write(report.to_json() + "\n")
        _write_runlog(args.out, {"command": "metrics", "dataset": args.dataset, "k": k})
    print(f"ct={report.ct:.4f} tw={report.tw:.4f} ks={report.ks:.4f} mae={report.mae:.4f}")
    return EXIT_OK


def model_taps(model, ds):
    """Infer t_taps from the model input size and the dataset geometry."""
    per_tap = ds.num_arrays * ds.num_antennas * ds.num_antennas
    taps, rem = divmod(model.input_dim, per_tap)
    if rem or taps < 1:
        raise CliError(
            EXIT_CONFIG,
            f"model input_dim {model.input_dim} incompatible with dataset dims "
            f"(B*M*M={per_tap})",
        )
    return taps


def _cmd_wiener_fit(args):
    ds = _read_dataset(args.train)
    try:
        sub = evaluation.subcarrier_subset(ds.num_subcarriers, args.n_sub_eval)
        corr = wiener.estimate_correlations(ds, sub, args.max_lag)
    except (ValueError, wiener.WienerError) as exc:
        raise CliError(EXIT_MISSING, f"cannot fit Wiener correlations: {exc}") from exc
    with _output_lock(args.out):
        wiener.save_correlations(corr, args.out)
        _write_runlog(
            args.out,
            {
                "command": "wiener-fit",
                "train": args.train,
                "max_lag": args.max_lag,
                "n_sub_eval": args.n_sub_eval,
                "subcarriers": sub.tolist(),
            },
        )
    print(f"wrote {args.out}: max_lag={args.max_lag} entries={corr.r.shape}")
    return EXIT_OK


def _parse_horizons(spec):
    try:
        if ":" in spec:
            lo, hi = spec.split(":")
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(v) for v in spec.split(","))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"bad horizons spec {spec!r}: {exc}") from exc


def _cmd_evaluate(args):
    train = _read_dataset(args.train)
    pred = _read_dataset(args.pred)
    model = _load_model(args.model) if args.model else None
    corr = None
    if args.wiener:
        if not os.path.exists(args.wiener):
            raise CliError(EXIT_MISSING, f"missing file: {args.wiener}")
        try:
            corr = wiener.load_correlations(args.wiener)
        except wiener.WienerError as exc:
            raise CliError(EXIT_CONFIG, f"bad WNR1 file {args.wiener}: {exc}") from exc
    cfg = evaluation.ExperimentConfig(
        memory=args.memory,
        horizons=_parse_horizons(args.horizons),
        n_sub_eval=args.n_sub_eval,
        t_taps=args.t_taps if model is None else model_taps(model, train),
        knn=args.knn,
        mu=args.mu,
        route_outside_to_nn=args.route_outside_nn,
        dump_samples=bool(args.dump),
        train_cfg=_train_cfg_from_args(args),
    )
    try:
        cfg.validate()
        report = evaluation.run_experiment(train, pred, cfg, model=model, corr=corr)
    except (ValueError, evaluation.EvalError, wiener.WienerError) as exc:
        raise CliError(EXIT_MISSING, f"evaluate failed: {exc}") from exc
    with _output_lock(args.out):
        report.write_csv(args.out)
        if args.json:
            report.write_json(args.json)
        if args.dump:
            report.write_samples_csv(args.dump)
        _write_runlog(
            args.out,
            {
                "command": "evaluate",
                "train": args.train,
                "pred": args.pred,
                "model": args.model,
                "wiener": args.wiener,
                "n0": report.n0,
                "meta": report.meta,
                "seed": args.seed,
            },
        )
    print(f"wrote {args.out}: {len(report.rows)} rows, N0={report.n0:.4g}")
    return EXIT_OK


def _cmd_report(args):
    rows = None
    if not os.path.exists(args.results):
        raise CliError(EXIT_MISSING, f"missing file: {args.results}")
    try:
        rows = evaluation.HorizonReport.read_csv(args.results)
    except (ValueError, evaluation.EvalError) as exc:
        raise CliError(EXIT_CONFIG, f"bad results file: {exc}") from exc
    methods = sorted({r["method"] for r in rows})
    horizons = sorted({r["p"] for r in rows})
    table = {(r["method"], r["p"]): r for r in rows}
    lines = ["p  " + "  ".join(f"{m:>10}" for m in methods)]
    for p in horizons:
        cells = []
        for m in methods:
            r = table.get((m, p))
            cells.append(f"{r['mean_sr']:>10.4f}" if r else " " * 10)
        lines.append(f"{p:<3}" + "  ".join(cells))
    crossovers = {}
    if "outdated" in methods:
        for m in methods:
            if m == "outdated":
                continue
            better = [p for p in horizons if table[(m, p)]["mean_sr"] >= table[("outdated", p)]["mean_sr"]]
            star = None
            for p in horizons:
                tail = [q for q in horizons if q >= p]
                if all(q in better for q in tail):
                    star = p
                    break
            crossovers[m] = star
    text = "\n".join(lines) + "\n"
    print(text, end="")
    payload = {"crossover_vs_outdated": crossovers, "methods": methods, "horizons": horizons}
    with _output_lock(args.out):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        if args.json:
            with open(args.json, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True, indent=1)
                fh.write("\n")
    return EXIT_OK


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=charting.TrainConfig.epochs)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--batch-pairs", dest="batch_pairs", type=int, default=charting.TrainConfig.batch_pairs)
    p.add_argument("--pairs-per-epoch", dest="pairs_per_epoch", type=int, default=charting.TrainConfig.pairs_per_epoch)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=charting.TrainConfig.learning_rate)
    p.add_argument("--hidden", type=str, default=None, help="comma-separated hidden sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--knn", type=int, default=dissimilarity.DEFAULT_KNN)
    p.add_argument("--t-taps", dest="t_taps", type=int, default=features.DEFAULT_T_TAPS)
    p.add_argument("--t-max", dest="t_max", type=float, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="ccpred", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic CSID dataset")
    g.add_argument("--config", type=str, default=None)
    g.add_argument("--demo", type=str, default=None, help="bundled demo config name (train|pred)")
    g.add_argument("--out", type=str, required=True)
    g.add_argument("--set", action="append", help="override config key: key=json_value")
    for key, cast in _SCENARIO_OVERRIDES:
        g.add_argument(f"--{key.replace('_', '-')}", type=cast, default=None, dest=key)
    g.set_defaults(func=_cmd_generate)

    c = sub.add_parser("chart", help="train the forward charting function")
    c.add_argument("--train", required=True)
    c.add_argument("--out-model", dest="out_model", required=True)
    c.add_argument("--out-chart", dest="out_chart", default=None)
    _add_train_flags(c)
    c.set_defaults(func=_cmd_chart)

    m = sub.add_parser("metrics", help="chart quality metrics against ground truth")
    m.add_argument("--dataset", required=True)
    m.add_argument("--model", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--json", default=None)
    m.add_argument("--k", type=int, default=None)
    m.set_defaults(func=_cmd_metrics)

    w = sub.add_parser("wiener-fit", help="estimate Wiener correlation model")
    w.add_argument("--train", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--max-lag", dest="max_lag", type=int, default=49)
    w.add_argument("--n-sub-eval", dest="n_sub_eval", type=int, default=32)
    w.set_defaults(func=_cmd_wiener_fit)

    e = sub.add_parser("evaluate", help="horizon sweep of all prediction methods")
    e.add_argument("--train", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--model", default=None, help="FCF1 model (trained on the fly if omitted)")
    e.add_argument("--wiener", default=None, help="WNR1 correlations (estimated if omitted)")
    e.add_argument("--out", required=True)
    e.add_argument("--json", default=None)
    e.add_argument("--dump", default=None, help="per-sample dump CSV path")
    e.add_argument("--memory", "-K", type=int, default=25)
    e.add_argument("--horizons", type=str, default="0:25", help="lo:hi inclusive, or comma list")
    e.add_argument("--n-sub-eval", dest="n_sub_eval", type=int, default=32)
    e.add_argument("--mu", type=float, default=100.0)
    e.add_argument("--route-outside-nn", dest="route_outside_nn", action="store_true")
    _add_train_flags(e)
    e.set_defaults(func=_cmd_evaluate)

    r = sub.add_parser("report", help="summarize a results.csv")
    r.add_argument("--results", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--json", default=None)
    r.set_defaults(func=_cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"CCPRED-ERROR code={exc.code} msg={exc}", file=sys.stderr)
        return exc.code
    except dataset.ScenarioError as exc:
        print(f"CCPRED-ERROR code={EXIT_CONFIG} msg={exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
