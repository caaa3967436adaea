"""Command-line pipeline: partition, build-memory, score, fuse, eval, demo.

Every command is a pure function of its inputs and flags; outputs are
byte-identical across reruns. Exit codes: 0 ok, 1 validation error, 2 I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import sys
import time
from pathlib import Path

from . import manifest as mf
from . import memory_bank, metrics, report, scoring, synthetic, tensor_io
from .errors import FileFormatError, ValidationError


def _write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _config(args) -> scoring.PipelineConfig:
    if getattr(args, "config", None):
        return scoring.PipelineConfig.load(args.config)
    return scoring.PipelineConfig()


def _seed(args, cfg: scoring.PipelineConfig) -> int:
    seed = args.seed if args.seed is not None else cfg.seed
    if seed is None:
        raise ValidationError(f"'{args.command}' needs an explicit seed (--seed or config \"seed\")")
    return int(seed)


def _named(arg: str) -> tuple[str | None, Path]:
    name, sep, path = arg.partition("=")
    return (name, Path(path)) if sep else (None, Path(arg))


def cmd_partition(args) -> int:
    m = mf.load_manifest(args.manifest, check_files=False)
    part = mf.partition_supervision(m, _seed(args, scoring.PipelineConfig()))
    _write_json(args.out, part.to_json())
    print(f"labeled {len(part.labeled_ids)} "
          f"({len(part.labeled_normal_ids)} normal, {len(part.labeled_abnormal_ids)} abnormal), "
          f"unlabeled {len(part.unlabeled_ids)}")
    return 0


def cmd_build_memory(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    m = mf.load_manifest(args.manifest, args.features_dir)
    if args.partition:
        part = mf.SupervisionPartition.from_json(json.loads(Path(args.partition).read_text()))
    else:
        part = mf.partition_supervision(m, seed)
    feats = m.load_features(args.features_dir)
    pool, prov = memory_bank.gather_pool(m, feats, part.labeled_normal_ids)
    bank = memory_bank.build_memory(pool, prov, cfg.coreset_ratio, seed)
    memory_bank.save_bank(bank, args.out)
    print(f"memory: {bank.rows} rows x {bank.dim} from {len(part.labeled_normal_ids)} "
          f"labeled normals (pool {pool.shape[0]} rows, ratio {cfg.coreset_ratio})")
    return 0


def cmd_score(args) -> int:
    cfg = _config(args)
    m = mf.load_manifest(args.manifest, args.features_dir)
    feats = m.load_features(args.features_dir)
    bank = memory_bank.load_bank(args.bank)
    table = scoring.score_stream(m, feats, bank, cfg.b, split=args.split, n_jobs=args.jobs)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    tensor_io.write_scores(table, args.out)
    print(f"scored {len(table)} {args.split} samples (b={cfg.b})")
    return 0


def cmd_fuse(args) -> int:
    cfg = _config(args).fusion
    nfm = tensor_io.read_scores(args.scores)
    ext = tensor_io.read_scores(args.external_scores)
    nfm_val = tensor_io.read_scores(args.scores_val) if args.scores_val else None
    ext_val = tensor_io.read_scores(args.external_scores_val) if args.external_scores_val else None
    fused = scoring.fuse(nfm, ext, cfg, nfm_val, ext_val)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    tensor_io.write_scores(fused, args.out)
    print(f"fused {len(fused)} samples (calibration={cfg.calibration}, weight={cfg.weight})")
    return 0


def _threshold_for(name, table, m, val_tables, args) -> float:
    if args.threshold is not None:
        return float(args.threshold)
    val = val_tables.get(name)
    if val is None:
        raise ValidationError(f"stream {name!r}: give --threshold or validation scores via --val-scores")
    recs = m.split("validation")
    ids = [s.sample_id for s in recs]
    vals = val.values(ids)
    return metrics.select_threshold(vals, [s.label for s in recs], args.policy)


def run_eval(m, streams, val_tables, args, seed: int) -> list[metrics.EvalReport]:
    reports = []
    for name, table in streams:
        thr = _threshold_for(name, table, m, val_tables, args)
        table = tensor_io.ScoreTable(table.entries, name)
        reports.append(metrics.evaluate(m, table, thr, args.n_resamples, seed))
    return reports


def cmd_eval(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    m = mf.load_manifest(args.manifest, check_files=False)
    streams = []
    for arg in args.scores:
        name, path = _named(arg)
        t = tensor_io.read_scores(path, name)
        streams.append((t.stream_name, t))
    names = [n for n, _ in streams]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate stream names {names}")
    val_tables = {}
    for arg in args.val_scores or []:
        name, path = _named(arg)
        t = tensor_io.read_scores(path, name)
        val_tables[t.stream_name] = t
    reports = run_eval(m, streams, val_tables, args, seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"manifest": m.name, "seed": seed, "n_resamples": args.n_resamples,
             "threshold_policy": args.policy if args.threshold is None else "fixed"}
    (out / "report.json").write_text(report.reports_json(reports, extra), encoding="utf-8")
    (out / "tables.md").write_text(report.tables_md(reports, m.name), encoding="utf-8")
    (out / "tables.csv").write_text(report.reports_csv(reports), encoding="utf-8")
    if len(reports) == 1:
        (out / "roc.csv").write_text(report.roc_csv(reports[0].overall.roc), encoding="utf-8")
    else:
        for rep in reports:
            (out / f"roc_{rep.stream_name}.csv").write_text(report.roc_csv(rep.overall.roc), encoding="utf-8")
    for rep in reports:
        a = rep.overall.auroc
        print(f"{rep.stream_name}: AUROC {a.point:.4f} [{a.lo:.4f}, {a.hi:.4f}] "
              f"F1 {rep.overall.metrics.f1:.3f} SPC {rep.overall.metrics.specificity:.3f} "
              f"SEN {rep.overall.metrics.sensitivity:.3f}")
    return 0


DEMO_CHECKS = (
    ("memory_overall_auroc", "memory-only AUROC, all abnormal > 0.99"),
    ("memory_unseen_auroc", "memory-only AUROC, unseen category > 0.95"),
    ("fusion_keeps_unseen", "fused unseen AUROC >= external-only unseen AUROC"),
    ("deterministic", "two runs with the same seed give byte-identical report.json"),
)


def run_demo_pipeline(out_dir, seed: int, rows_per_sample: int = 1, n_resamples: int = 500,
                      b: int = 3, quiet: bool = False) -> dict:
    """Generate the synthetic benchmark under ``out_dir`` and run every stage
    through the command entry points. Returns the parsed report.json."""
    out = Path(out_dir)
    data = synthetic.make_synthetic(seed, rows_per_sample)
    paths = synthetic.write_synthetic(data, out)
    _write_json(out / "config.json", {"b": b, "calibration": "none", "weight": 0.5,
                                      "coreset_ratio": 1.0, "seed": seed})
    steps = [
        ["partition", "--manifest", paths["manifest"], "--seed", seed, "--out", out / "partition.json"],
        ["build-memory", "--manifest", paths["manifest"], "--partition", out / "partition.json",
         "--config", out / "config.json", "--out", out / "bank"],
    ]
    for split in ("validation", "test"):
        steps.append(["score", "--manifest", paths["manifest"], "--bank", out / "bank",
                      "--config", out / "config.json", "--split", split,
                      "--out", out / f"nfm_{split}.csv"])
        steps.append(["fuse", "--scores", out / f"nfm_{split}.csv",
                      "--external-scores", paths[f"external_{split}"],
                      "--config", out / "config.json", "--out", out / f"fused_{split}.csv"])
    steps.append(["eval", "--manifest", paths["manifest"],
                  "--scores", f"nfm={out / 'nfm_test.csv'}",
                  f"external={paths['external_test']}", f"fused={out / 'fused_test.csv'}",
                  "--val-scores", f"nfm={out / 'nfm_validation.csv'}",
                  f"external={paths['external_validation']}",
                  f"fused={out / 'fused_validation.csv'}",
                  "--n-resamples", n_resamples, "--seed", seed, "--out", out / "eval"])
    for argv in steps:
        argv = [str(a) for a in argv]
        if quiet:
            argv.insert(0, "--quiet")
        code = main(argv, reraise=True)
        if code:
            raise RuntimeError(f"step {argv[0]} exited {code}")
    return json.loads((out / "eval" / "report.json").read_text())


def demo_checks(rep: dict, raw: bytes | None = None,
                raw_again: bytes | None = None) -> dict[str, tuple[bool, str]]:
    """Pass/fail and detail string per entry of ``DEMO_CHECKS``."""
    s = {x["stream"]: x for x in rep["streams"]}
    unseen = [c for c, b in s["nfm"]["per_category"].items() if b["seen"] == "unseen"][0]
    nfm_all = s["nfm"]["overall"]["auroc"]["point"]
    nfm_un = s["nfm"]["per_category"][unseen]["auroc"]["point"]
    ext_un = s["external"]["per_category"][unseen]["auroc"]["point"]
    fus_un = s["fused"]["per_category"][unseen]["auroc"]["point"]
    out = {
        "memory_overall_auroc": (nfm_all > 0.99, f"{nfm_all:.4f}"),
        "memory_unseen_auroc": (nfm_un > 0.95, f"{nfm_un:.4f}"),
        "fusion_keeps_unseen": (fus_un >= ext_un, f"fused {fus_un:.4f} vs external {ext_un:.4f}"),
    }
    if raw is not None:
        out["deterministic"] = (raw == raw_again, "identical" if raw == raw_again else "differ")
    return out


def cmd_demo(args) -> int:
    seed = _seed(args, scoring.PipelineConfig())
    out = Path(args.out)
    t0 = time.perf_counter()
    rep = run_demo_pipeline(out / "run1", seed, args.rows_per_sample, args.n_resamples, quiet=True)
    run_demo_pipeline(out / "run2", seed, args.rows_per_sample, args.n_resamples, quiet=True)
    raw1 = (out / "run1" / "eval" / "report.json").read_bytes()
    raw2 = (out / "run2" / "eval" / "report.json").read_bytes()
    checks = demo_checks(rep, raw1, raw2)
    elapsed = time.perf_counter() - t0
    print((out / "run1" / "eval" / "tables.md").read_text())
    ok = True
    for key, desc in DEMO_CHECKS:
        passed, detail = checks[key]
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {desc}: {detail}")
    print(f"demo finished in {elapsed:.1f}s (rows per sample: {args.rows_per_sample})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nfmbench", description=__doc__.splitlines()[0])
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("partition", help="split training ids into N_x / A_x / U_x")
    s.add_argument("--manifest", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_partition)

    s = sub.add_parser("build-memory", help="build the normal feature memory")
    s.add_argument("--manifest", required=True)
    s.add_argument("--features-dir")
    s.add_argument("--partition", help="partition JSON (default: partition with --seed)")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory for memory.nfmb + memory.json")
    s.set_defaults(func=cmd_build_memory)

    s = sub.add_parser("score", help="memory anomaly scores for one split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--features-dir")
    s.add_argument("--bank", required=True)
    s.add_argument("--config")
    s.add_argument("--split", default="test", choices=mf.SPLITS)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("fuse", help="fuse memory scores with an external stream")
    s.add_argument("--scores", required=True)
    s.add_argument("--external-scores", required=True)
    s.add_argument("--scores-val")
    s.add_argument("--external-scores-val")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval", help="AUROC with bootstrap CIs and thresholded metrics")
    s.add_argument("--manifest", required=True)
    s.add_argument("--scores", nargs="+", required=True, metavar="[NAME=]PATH")
    s.add_argument("--val-scores", nargs="+", metavar="[NAME=]PATH")
    s.add_argument("--threshold", type=float)
    s.add_argument("--policy", default="max_f1", choices=metrics.THRESHOLD_POLICIES)
    s.add_argument("--n-resamples", type=int, default=1000)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("demo", help="self-checking run on synthetic data")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--rows-per-sample", type=int, default=1)
    s.add_argument("--n-resamples", type=int, default=500)
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None, reraise: bool = False) -> int:
    args = build_parser().parse_args(argv)
    ctx = contextlib.redirect_stdout(io.StringIO()) if args.quiet else contextlib.nullcontext()
    try:
        with ctx:
            return args.func(args)
    except ValidationError as exc:
        if reraise:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileFormatError, OSError) as exc:
        if reraise:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
