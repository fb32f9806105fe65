"""Command-line front end.

Verbs: generate, train, transform, probe, evaluate, sweep, report.  Every
run writes its primary artifacts plus a manifest.json recording the command,
the resolved configuration, sha256 digests of the inputs actually read, the
seed, and wall time.  With identical flags, inputs, and seed the primary
outputs are byte-identical (the manifest's wall-time field is the one
intentionally unstable value).

Training configs are flat ``key = value`` text files whose keys mirror the
PassConfig schema (lambda, K, T_fc, T_deb, T_atrain, T_plat, T_ep, N_ep,
A_star, alpha1..alpha3, batch_size, seed, out_dim, schedule, ...).  Two
profiles ship built in:

    desk                  small counters and dims for laptop-scale runs
    paper-arcface-pass-g  the published large-scale schedule

Errors exit nonzero after printing a single line ``error[<code>]: <message>``.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, dataio, fairmetrics, passcore
from .errors import ConfigError, FairdescError

PROFILES: dict[str, dict] = {
    # Laptop-scale profile; counters and dims shrunk, adversarial weight and
    # ensemble size kept at the reference values.
    "desk": {
        "lambda": 10.0,
        "K": 3,
        "T_fc": 400,
        "T_deb": 30,
        "T_atrain": 600,
        "T_plat": 150,
        "T_ep": 10,
        "N_ep": 40,
        "A_star": 0.95,
        "alpha1": 1e-2,
        "alpha2": 5e-3,
        "alpha3": 2e-3,
        "batch_size": 64,
        "out_dim": 64,
        "schedule": "oat",
        "check_every": 5,
    },
    # Large-scale reference schedule for 512-d inputs.
    "paper-arcface-pass-g": {
        "lambda": 10.0,
        "K": 3,
        "T_fc": 10000,
        "T_deb": 1200,
        "T_atrain": 30000,
        "T_plat": 2000,
        "T_ep": 40,
        "N_ep": 200,
        "A_star": 0.95,
        "alpha1": 1e-2,
        "alpha2": 1e-3,
        "alpha3": 1e-4,
        "batch_size": 400,
        "out_dim": 256,
        "schedule": "oat",
        "check_every": 50,
    },
}

DEFAULT_FPRS = (1e-2,)


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    values: dict = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = _parse_value(raw)
    return values


def resolve_config(args: argparse.Namespace) -> passcore.PassConfig:
    """Defaults < profile < config file < explicit --set/--schedule/--seed."""
    values: dict = {}
    if getattr(args, "profile", None):
        if args.profile not in PROFILES:
            raise ConfigError(
                f"unknown profile {args.profile!r}; available: {sorted(PROFILES)}"
            )
        values.update(PROFILES[args.profile])
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = _parse_value(raw)
    if getattr(args, "schedule", None):
        values["schedule"] = args.schedule
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    return passcore.PassConfig.from_dict(values)


# ---------------------------------------------------------------------------
# Manifest plumbing
# ---------------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir: Path,
    command: str,
    seed: int | None,
    config_snapshot: dict | None,
    inputs: dict[str, str],
    outputs: dict[str, str],
    wall_time: float,
    extra: dict | None = None,
) -> Path:
    manifest = {
        "command": command,
        "seed": seed,
        "config": config_snapshot,
        "inputs": {name: sha256_file(path) for name, path in inputs.items()},
        "input_paths": {name: str(path) for name, path in inputs.items()},
        "outputs": outputs,
        "wall_time_s": wall_time,
        "versions": {
            "fairdesc": __version__,
            "descriptor_format": dataio.DESCRIPTOR_VERSION,
            "model_format": passcore.MODEL_VERSION,
        },
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _resolve_out(raw: str, default_name: str) -> tuple[Path, Path]:
    """Interpret --out as a file when it ends in .bin, else as a run dir.

    Returns (run_dir, artifact_path).
    """
    out = Path(raw)
    if out.suffix == ".bin":
        out.parent.mkdir(parents=True, exist_ok=True)
        return out.parent, out
    out.mkdir(parents=True, exist_ok=True)
    return out, out / default_name


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _parse_attr_flag(raw: str) -> dataio.AttributeSpec:
    parts = raw.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--attr expects name:categories:leak, got {raw!r}")
    name, ncat, leak = parts
    try:
        return dataio.AttributeSpec(name, int(ncat), float(leak))
    except ValueError as exc:
        raise ConfigError(f"malformed --attr {raw!r}: {exc}") from exc


def cmd_generate(args: argparse.Namespace) -> int:
    t0 = time.time()
    spec = dataio.SynthSpec(
        n_identities=args.identities,
        samples_per_identity=args.per_id,
        dim=args.dim,
        attributes=[_parse_attr_flag(a) for a in args.attr],
        cluster_spread=args.spread,
        seed=args.seed,
    )
    ds = dataio.generate_synthetic(spec)
    run_dir, out_path = _resolve_out(args.out, "descriptors.bin")
    dataio.write_descriptors(ds, str(out_path))
    print(f"wrote {ds.n_rows} x {ds.dim} descriptors to {out_path}")
    for name, col in ds.attributes.items():
        print(f"  attribute {name}: {col.n_categories} categories")
    extra = {}
    if args.probe_check:
        train, _, test = dataio.split(
            ds, dataio.SplitSpec((0.70, 0.05, 0.25), "identity", seed=args.seed)
        )
        probe_cfg = fairmetrics.ProbeConfig(
            iterations=args.probe_iterations, seed=args.seed
        )
        accs = {}
        for name in ds.attributes:
            report = fairmetrics.leakage_probe(train, test, name, probe_cfg)
            accs[name] = report.accuracy
            print(f"  probe accuracy on {name}: {report.accuracy:.4f}")
        extra["probe_check"] = accs
    write_manifest(
        run_dir,
        "generate",
        args.seed,
        None,
        {},
        {"descriptors": out_path.name},
        time.time() - t0,
        extra,
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    t0 = time.time()
    config = resolve_config(args)
    data = dataio.read_descriptors(args.data)
    if args.mode == "pass":
        attribute = args.attribute
        model, log = passcore.train_pass(data, config, attribute)
    else:
        names = args.attributes.split(",") if args.attributes else []
        if names and len(names) != 2:
            raise ConfigError("--attributes expects exactly two comma-separated names")
        a, b = (names + [None, None])[:2]
        model, log = passcore.train_multipass(data, config, a, b)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "checkpoint.bin"
    trainlog = out_dir / "trainlog.csv"
    passcore.save_model(model, str(checkpoint))
    log.to_csv(str(trainlog))
    write_manifest(
        out_dir,
        "train",
        config.seed,
        config.to_dict(),
        {"data": args.data},
        {"checkpoint": checkpoint.name, "trainlog": trainlog.name},
        time.time() - t0,
        {"mode": args.mode},
    )
    print(f"trained {args.mode} model -> {checkpoint}")
    return 0


def cmd_transform(args: argparse.Namespace) -> int:
    t0 = time.time()
    model = passcore.load_model(args.checkpoint)
    data = dataio.read_descriptors(args.data)
    transformed = passcore.transform(model.generator, data.features)
    out_set = data.with_features(transformed.astype(np.float32))
    run_dir, out_path = _resolve_out(args.out, "transformed.bin")
    dataio.write_descriptors(out_set, str(out_path))
    write_manifest(
        run_dir,
        "transform",
        args.seed,
        None,
        {"checkpoint": args.checkpoint, "data": args.data},
        {"descriptors": out_path.name},
        time.time() - t0,
    )
    print(f"wrote {out_set.n_rows} x {out_set.dim} transformed descriptors to {out_path}")
    return 0


def _probe_config_from_args(args: argparse.Namespace) -> fairmetrics.ProbeConfig:
    return fairmetrics.ProbeConfig(
        iterations=args.probe_iterations,
        learning_rate=args.probe_rate,
        batch_size=args.probe_batch,
        seed=args.seed,
    )


def cmd_probe(args: argparse.Namespace) -> int:
    t0 = time.time()
    data = dataio.read_descriptors(args.data)
    if args.attr not in data.attributes:
        raise ConfigError(
            f"no attribute {args.attr!r} in {args.data}; "
            f"available: {sorted(data.attributes)}"
        )
    frac = args.train_fraction
    if not 0.0 < frac < 1.0:
        raise ConfigError(f"--train-fraction {frac} outside (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0x9507]))
    train_idx, test_idx = dataio._grouped_split_indices(
        data.identity_labels, (frac, 1.0 - frac), rng, by_group=True
    )
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise ConfigError(
            f"--train-fraction {frac} leaves an empty probe split on "
            f"{data.n_identities} identities"
        )
    train, test = data.take(train_idx), data.take(test_idx)
    report = fairmetrics.leakage_probe(train, test, args.attr, _probe_config_from_args(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "probe_report.json"
    report_path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    write_manifest(
        out_dir,
        "probe",
        args.seed,
        None,
        {"data": args.data},
        {"probe_report": report_path.name},
        time.time() - t0,
        {"attribute": args.attr},
    )
    print(f"probe accuracy on {args.attr}: {report.accuracy:.4f} -> {report_path}")
    return 0


def _parse_fprs(raw: str) -> list[float]:
    try:
        fprs = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"malformed --fprs {raw!r}: {exc}") from exc
    if not fprs:
        raise ConfigError("--fprs must name at least one operating point")
    return fprs


def cmd_evaluate(args: argparse.Namespace) -> int:
    t0 = time.time()
    data = dataio.read_descriptors(args.data)
    inputs = {"data": args.data}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: dict[str, str] = {}
    if args.pairs:
        pairs = fairmetrics.read_pairs_csv(args.pairs)
        inputs["pairs"] = args.pairs
    else:
        pairs = fairmetrics.make_pairs(
            data,
            args.genuine,
            args.impostor,
            seed=args.seed,
            group_attribute=args.group_attr,
        )
        pairs_path = out_dir / "pairs.csv"
        fairmetrics.write_pairs_csv(pairs, str(pairs_path))
        outputs["pairs"] = pairs_path.name
    baseline = None
    if args.baseline:
        baseline, _ = fairmetrics.report_from_json(Path(args.baseline).read_text())
        inputs["baseline"] = args.baseline
    bias_groups = None
    if args.bias_groups:
        parts = args.bias_groups.split(",")
        if len(parts) != 2:
            raise ConfigError("--bias-groups expects two comma-separated group tags")
        bias_groups = (parts[0], parts[1])
    fprs = _parse_fprs(args.fprs)
    report, bpc_report = fairmetrics.evaluate(data, pairs, fprs, baseline, bias_groups)
    report_path = out_dir / "report.json"
    report_path.write_text(fairmetrics.report_to_json(report, bpc_report))
    csv_path = out_dir / "report.csv"
    fairmetrics.write_report_csv(str(csv_path), report, bpc_report)
    outputs.update({"report": report_path.name, "report_csv": csv_path.name})
    write_manifest(
        out_dir, "evaluate", args.seed, None, inputs, outputs, time.time() - t0
    )
    for e in report.entries:
        line = f"fpr={e.fpr:g} tpr={e.tpr_overall:.4f}"
        if e.bias is not None:
            line += f" bias={e.bias:.4f}"
        if bpc_report is not None:
            value = bpc_report.entry(e.fpr).bpc
            line += " bpc=undefined" if value is None else f" bpc={value:.4f}"
        print(line)
    print(f"wrote {report_path}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    t0 = time.time()
    report, bpc_report = fairmetrics.report_from_json(Path(args.infile).read_text())
    rows = fairmetrics.report_to_csv_rows(report, bpc_report)
    for row in rows:
        print(",".join(row))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "report.csv"
        fairmetrics.write_report_csv(str(csv_path), report, bpc_report)
        write_manifest(
            out_dir,
            "report",
            None,
            None,
            {"report": args.infile},
            {"report_csv": csv_path.name},
            time.time() - t0,
        )
    return 0


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

SWEEP_PARAMS = ("K", "lambda", "leak_strength", "schedule")


def _effective_jobs(requested: int) -> int:
    """PASS_THREADS caps sweep concurrency; never below one job."""
    jobs = max(1, requested)
    cap = os.environ.get("PASS_THREADS")
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"PASS_THREADS={cap!r} is not an integer") from exc
    return jobs


def _sweep_subrun(task: dict) -> dict:
    """One isolated (value, seed) pipeline; returns an aggregate row."""
    param = task["param"]
    value = task["value"]
    seed = task["seed"]
    out_dir = Path(task["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    config_values = dict(task["config_values"])
    config_values["seed"] = seed
    if param == "K":
        config_values["K"] = int(value)
    elif param == "lambda":
        config_values["lambda"] = float(value)
    elif param == "schedule":
        config_values["schedule"] = str(value)
    config = passcore.PassConfig.from_dict(config_values)

    inputs = {}
    if param == "leak_strength":
        gen = task["generate"]
        spec = dataio.SynthSpec(
            n_identities=gen["identities"],
            samples_per_identity=gen["per_id"],
            dim=gen["dim"],
            attributes=[
                dataio.AttributeSpec(gen["attribute"], gen["categories"], float(value))
            ],
            cluster_spread=gen["spread"],
            seed=seed,
        )
        data = dataio.generate_synthetic(spec)
    else:
        data = dataio.read_descriptors(task["data"])
        inputs["data"] = task["data"]
    attribute = task["attribute"] or next(iter(data.attributes))

    train, _, test = dataio.split(
        data, dataio.SplitSpec((0.70, 0.05, 0.25), "identity", seed=seed)
    )
    model, log = passcore.train_pass(train, config, attribute)
    checkpoint = out_dir / "checkpoint.bin"
    passcore.save_model(model, str(checkpoint))
    log.to_csv(str(out_dir / "trainlog.csv"))

    probe_cfg = fairmetrics.ProbeConfig(iterations=task["probe_iterations"], seed=seed)
    tr_train = train.with_features(
        passcore.transform(model.generator, train.features).astype(np.float32)
    )
    tr_test = test.with_features(
        passcore.transform(model.generator, test.features).astype(np.float32)
    )
    probe = fairmetrics.leakage_probe(tr_train, tr_test, attribute, probe_cfg)
    (out_dir / "probe_report.json").write_text(
        json.dumps(probe.to_dict(), sort_keys=True, indent=2) + "\n"
    )

    pairs = fairmetrics.make_pairs(
        test, task["genuine"], task["impostor"], seed=seed, group_attribute=attribute
    )
    fprs = task["fprs"]
    base_report, _ = fairmetrics.evaluate(test, pairs, fprs)
    report, bpc_report = fairmetrics.evaluate(tr_test, pairs, fprs, baseline=base_report)
    (out_dir / "report.json").write_text(
        fairmetrics.report_to_json(report, bpc_report, probe)
    )
    write_manifest(
        out_dir,
        "sweep-subrun",
        seed,
        config.to_dict(),
        inputs,
        {
            "checkpoint": "checkpoint.bin",
            "trainlog": "trainlog.csv",
            "probe_report": "probe_report.json",
            "report": "report.json",
        },
        time.time() - t0,
        {"param": param, "value": value},
    )
    rows = []
    for e in report.entries:
        b = bpc_report.entry(e.fpr)
        rows.append(
            {
                "param": param,
                "value": value,
                "seed": seed,
                "fpr": e.fpr,
                "probe_accuracy": probe.accuracy,
                "tpr": e.tpr_overall,
                "bias": e.bias,
                "bpc": b.bpc,
                "status": "ok",
                "run_dir": out_dir.name,
            }
        )
    return {"rows": rows}


def cmd_sweep(args: argparse.Namespace) -> int:
    t0 = time.time()
    if args.param not in SWEEP_PARAMS:
        raise ConfigError(f"--param must be one of {SWEEP_PARAMS}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values must name at least one value")
    seeds = [int(v) for v in args.seeds.split(",") if v.strip()]
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    if args.param == "schedule":
        for v in values:
            if v not in passcore.SCHEDULES:
                raise ConfigError(f"schedule value {v!r} not in {passcore.SCHEDULES}")
    if args.param == "leak_strength":
        if not args.gen_attr:
            raise ConfigError("leak_strength sweeps need --gen-attr name:categories")
        name, ncat = (args.gen_attr.split(":") + [""])[:2]
        generate = {
            "identities": args.gen_identities,
            "per_id": args.gen_per_id,
            "dim": args.gen_dim,
            "spread": args.gen_spread,
            "attribute": name,
            "categories": int(ncat),
        }
        data_path = None
    else:
        if not args.data:
            raise ConfigError(f"--data is required for {args.param} sweeps")
        generate = None
        data_path = args.data

    config_values = resolve_config(args).to_dict()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fprs = _parse_fprs(args.fprs)
    tasks = []
    for value in values:
        for seed in seeds:
            tasks.append(
                {
                    "param": args.param,
                    "value": value,
                    "seed": seed,
                    "out_dir": str(out_dir / f"run_{args.param}={value}_seed{seed}"),
                    "config_values": config_values,
                    "data": data_path,
                    "generate": generate,
                    "attribute": args.attribute,
                    "probe_iterations": args.probe_iterations,
                    "genuine": args.genuine,
                    "impostor": args.impostor,
                    "fprs": fprs,
                }
            )

    jobs = _effective_jobs(args.jobs)
    results: list[dict | None] = [None] * len(tasks)
    failures: list[str] = []
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_sweep_subrun, t): i for i, t in enumerate(tasks)}
            for future in concurrent.futures.as_completed(futures):
                i = futures[future]
                try:
                    results[i] = future.result()
                except Exception as exc:  # sub-run failures recorded, sweep continues
                    failures.append(f"{tasks[i]['out_dir']}: {exc}")
    else:
        for i, task in enumerate(tasks):
            try:
                results[i] = _sweep_subrun(task)
            except Exception as exc:
                failures.append(f"{task['out_dir']}: {exc}")

    agg_path = out_dir / "aggregate.csv"
    header = [
        "param", "value", "seed", "fpr", "probe_accuracy", "tpr", "bias", "bpc",
        "status", "run_dir",
    ]
    lines = [",".join(header)]
    for i, result in enumerate(results):
        if result is None:
            task = tasks[i]
            lines.append(
                f"{task['param']},{task['value']},{task['seed']},,,,,,error,"
                f"{Path(task['out_dir']).name}"
            )
            continue
        for row in result["rows"]:
            bpc_txt = "" if row["bpc"] is None else repr(row["bpc"])
            bias_txt = "" if row["bias"] is None else repr(row["bias"])
            lines.append(
                f"{row['param']},{row['value']},{row['seed']},{row['fpr']!r},"
                f"{row['probe_accuracy']!r},{row['tpr']!r},{bias_txt},{bpc_txt},"
                f"{row['status']},{row['run_dir']}"
            )
    agg_path.write_text("\n".join(lines) + "\n")
    inputs = {"data": data_path} if data_path else {}
    write_manifest(
        out_dir,
        "sweep",
        None,
        config_values,
        inputs,
        {"aggregate": agg_path.name},
        time.time() - t0,
        {"param": args.param, "values": values, "seeds": seeds},
    )
    print(f"wrote {agg_path} ({len(tasks)} sub-runs, {len(failures)} failed)")
    for failure in failures:
        print(f"  failed: {failure}", file=sys.stderr)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairdesc",
        description="Train and evaluate attribute-suppressing descriptor transforms.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    # global flags; --config/--profile/--set feed the training configuration
    # and are read by train and sweep only
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base random seed")
    common.add_argument("--out", "-o", default="run", help="output file or directory")
    common.add_argument("--config", help="flat key=value training config file")
    common.add_argument("--profile", help=f"built-in profile: {sorted(PROFILES)}")
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override one config field"
    )
    train_common = argparse.ArgumentParser(add_help=False)

    p = sub.add_parser("generate", parents=[common], help="write synthetic descriptors")
    p.add_argument("--identities", type=int, required=True)
    p.add_argument("--per-id", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument(
        "--attr",
        action="append",
        default=[],
        metavar="NAME:CATEGORIES:LEAK",
        help="attribute spec, repeatable",
    )
    p.add_argument("--spread", type=float, default=0.1, help="identity cluster spread")
    p.add_argument("--probe-check", action="store_true", help="report probe accuracy")
    p.add_argument("--probe-iterations", type=int, default=1500)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common, train_common], help="train a model")
    p.add_argument("--data", required=True, help="descriptor file")
    p.add_argument("--mode", choices=("pass", "multipass"), default="pass")
    p.add_argument("--schedule", choices=passcore.SCHEDULES, default=None)
    p.add_argument("--attribute", help="target attribute (single-attribute mode)")
    p.add_argument("--attributes", help="two comma-separated attributes (multipass)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transform", parents=[common], help="apply a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("probe", parents=[common], help="measure attribute leakage")
    p.add_argument("--data", required=True)
    p.add_argument("--attr", required=True)
    p.add_argument("--train-fraction", type=float, default=0.70)
    p.add_argument("--probe-iterations", type=int, default=5000)
    p.add_argument("--probe-batch", type=int, default=256)
    p.add_argument("--probe-rate", type=float, default=1e-3)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("evaluate", parents=[common], help="verification fairness report")
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", help="pair list CSV (i,j,genuine,group)")
    p.add_argument("--genuine", type=int, default=5000, help="genuine pairs to sample")
    p.add_argument("--impostor", type=int, default=5000, help="impostor pairs to sample")
    p.add_argument("--group-attr", help="attribute whose categories tag pairs")
    p.add_argument("--fprs", default="1e-2", help="comma-separated FPR targets")
    p.add_argument("--baseline", help="baseline report.json for trade-off coefficients")
    p.add_argument("--bias-groups", help="two comma-separated group tags")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common, train_common], help="parameter sweep")
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--data", help="descriptor file (not used for leak sweeps)")
    p.add_argument("--attribute", help="target attribute")
    p.add_argument("--fprs", default="1e-2")
    p.add_argument("--genuine", type=int, default=5000)
    p.add_argument("--impostor", type=int, default=5000)
    p.add_argument("--probe-iterations", type=int, default=1500)
    p.add_argument("--jobs", type=int, default=1, help="concurrent sub-runs")
    p.add_argument("--gen-identities", type=int, default=100)
    p.add_argument("--gen-per-id", type=int, default=20)
    p.add_argument("--gen-dim", type=int, default=64)
    p.add_argument("--gen-spread", type=float, default=0.1)
    p.add_argument("--gen-attr", help="NAME:CATEGORIES for leak_strength sweeps")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="flatten a report JSON")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_report)
    # report's --out is optional; override the common default
    p.set_defaults(out=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FairdescError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
