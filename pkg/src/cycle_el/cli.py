"""Single executable orchestrating the pipeline.

Subcommands: synth, build-dataset, diff, train, evaluate, gap-matrix,
grad-check, report.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dataset as ds
from . import eval_harness as ev
from . import gradsuite, pipeline, synth
from .store import StoreError, load_temporal_kg
from .trainer import Checkpoint, TrainConfig, TrainerError, train, write_training_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a single config key (repeatable)")
    sub.add_argument("--data-dir", dest="data_dir")
    sub.add_argument("--artifacts-dir", dest="artifacts_dir")
    sub.add_argument("--out-dir", dest="out_dir")


def _resolve(args) -> dict:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        if key not in cfgmod.DEFAULTS:
            raise cfgmod.ConfigError(f"unknown config key {key!r}")
        overrides[key] = cfgmod._coerce(key, raw)
    for key in ("seed", "train_year", "target_year", "data_dir", "artifacts_dir",
                "out_dir", "drift_rate", "n_entities", "epochs"):
        if hasattr(args, key.replace("-", "_")) and getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    resolved = cfgmod.resolve(args.config, overrides)
    print(f"resolved config ({cfgmod.config_hash(resolved)}): "
          + json.dumps({k: list(v) if isinstance(v, tuple) else v
                        for k, v in sorted(resolved.items())}),
          file=sys.stderr)
    return resolved


def _train_config(resolved: dict, train_year: int, target_year: int) -> TrainConfig:
    return TrainConfig(
        epochs=resolved["epochs"], batch_size=resolved["batch_size"], lr=resolved["lr"],
        weight_a=resolved["weight_a"], weight_b=resolved["weight_b"],
        weight_c=resolved["weight_c"], temperature=resolved["temperature"],
        sampler_threshold=resolved["sampler_threshold"],
        max_positives=resolved["max_positives"], node_cap=resolved["node_cap"],
        seed=resolved["seed"], train_year=train_year, target_year=target_year,
        text_dim=resolved["text_dim"], hidden_dim=resolved["hidden_dim"],
        proj_dim=resolved["proj_dim"], optimizer=resolved["optimizer"],
        fusion_decay=resolved["fusion_decay"],
        dataset_hash=cfgmod.dataset_hash(resolved))


def default_target_year(years: list[int], train_year: int) -> int:
    """Cross-year pools pair the train year with the next year when one
    exists, otherwise the previous one."""
    later = [y for y in years if y > train_year]
    return min(later) if later else max(y for y in years if y < train_year)


def cmd_synth(args) -> int:
    resolved = _resolve(args)
    cfg = synth.SynthConfig(
        n_entities=resolved["n_entities"], years=tuple(resolved["years"]),
        topics=resolved["topics"], edges_per_entity=resolved["edges_per_entity"],
        drift_rate=resolved["drift_rate"],
        mentions_per_entity=resolved["mentions_per_entity"],
        vocab_size=resolved["vocab_size"], seed=resolved["seed"],
        new_fraction=resolved["new_fraction"],
        new_entity_year_index=resolved["new_entity_year_index"],
        name_group_size=resolved["name_group_size"], desc_len=resolved["desc_len"],
        ctx_len=resolved["ctx_len"], drift_degree_bias=resolved["drift_degree_bias"],
        predrift_rounds=resolved["predrift_rounds"])
    manifest = synth.generate(cfg, resolved["data_dir"])
    print(json.dumps(manifest, sort_keys=True))
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    resolved = _resolve(args)
    manifest = pipeline.build_dataset_artifacts(
        resolved["data_dir"], resolved["artifacts_dir"], list(resolved["years"]),
        min_count=resolved["min_count"], max_count=resolved["max_count"],
        knn_k=resolved["knn_k"], negative_cap=resolved["negative_cap"],
        pool_seed=resolved["pool_seed"], config_hash=cfgmod.dataset_hash(resolved))
    print(json.dumps(manifest, sort_keys=True))
    return EXIT_OK


def cmd_diff(args) -> int:
    resolved = _resolve(args)
    years = list(resolved["years"])
    kg, _ = load_temporal_kg(resolved["data_dir"], years)
    pools = ds.diff_pools(kg.snapshots[args.t1], kg.snapshots[args.t2])
    out = args.out or f"pools_rel_{args.t1}_{args.t2}.jsonl"
    pools.save(out, cfgmod.dataset_hash(resolved))
    nonempty = sum(1 for p in pools.positives if p.size)
    print(json.dumps({"out": str(out), "nodes_with_positives": nonempty}))
    return EXIT_OK


def cmd_train(args) -> int:
    resolved = _resolve(args)
    years = list(resolved["years"])
    train_year = args.train_year if args.train_year is not None else resolved["train_year"]
    target_year = args.target_year if args.target_year is not None \
        else (resolved["target_year"] or default_target_year(years, train_year))
    assets, mentions = pipeline.load_assets(resolved["data_dir"],
                                            resolved["artifacts_dir"], years,
                                            train_year, target_year)
    cfg = _train_config(resolved, train_year, target_year)
    ckpt, reports = train(assets, mentions, cfg)
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"ckpt_{train_year}.bin"
    ckpt.save(ckpt_path)
    write_training_log(out_dir / f"train_log_{train_year}.jsonl", reports)
    print(json.dumps({"checkpoint": str(ckpt_path),
                      "final_loss": reports[-1].total}, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    resolved = _resolve(args)
    years = list(resolved["years"])
    ckpt = Checkpoint.load(args.ckpt)
    _check_dataset_hash(ckpt.config.dataset_hash, cfgmod.dataset_hash(resolved), args.ckpt)
    assets, mentions = pipeline.load_assets(
        resolved["data_dir"], resolved["artifacts_dir"], years,
        ckpt.config.train_year, ckpt.config.target_year)
    table, _ = ev.evaluate_split(ckpt, assets, mentions, args.test_year,
                                 resolved["n_list"])
    report = {"config": {"hash": cfgmod.config_hash(resolved),
                         "dataset_hash": cfgmod.dataset_hash(resolved)},
              "train_year": ckpt.config.train_year, "test_year": args.test_year,
              "recall": table}
    _emit(report, args.out)
    return EXIT_OK


def cmd_gap_matrix(args) -> int:
    resolved = _resolve(args)
    years = list(resolved["years"])
    ckpt_dir = Path(args.ckpt_dir or resolved["out_dir"])
    checkpoints = _load_checkpoints(ckpt_dir, years, cfgmod.dataset_hash(resolved))
    if not checkpoints:
        raise StoreError(f"no checkpoints found in {ckpt_dir}")
    any_ckpt = next(iter(checkpoints.values()))
    assets, mentions = pipeline.load_assets(
        resolved["data_dir"], resolved["artifacts_dir"], years,
        any_ckpt.config.train_year, any_ckpt.config.target_year)
    eval_cfg = ev.EvalConfig(n_list=tuple(resolved["n_list"]),
                             direction=resolved["direction"])
    report = ev.gap_matrix(checkpoints, assets, mentions, eval_cfg)
    report["config"] = {"hash": cfgmod.config_hash(resolved),
                        "dataset_hash": cfgmod.dataset_hash(resolved)}
    report["boosts"] = {}
    report["degree_buckets"] = {}
    if args.baseline_ckpt_dir:
        baselines = _load_checkpoints(Path(args.baseline_ckpt_dir), years,
                                      cfgmod.dataset_hash(resolved))
        base_report = ev.gap_matrix(baselines, assets, mentions, eval_cfg)
        report["baseline_per_gap"] = base_report["per_gap"]
        report["boosts"] = _boost_table(report["per_gap"], base_report["per_gap"],
                                        resolved["n_list"])
        report["degree_buckets"] = _degree_analysis(checkpoints, baselines, assets,
                                                    mentions, resolved["n_list"])
    _emit(report, args.out)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    reports = gradsuite.run_suite(probes=args.probes)
    failed = False
    for rep in reports:
        status = "pass" if rep.passed else "FAIL"
        print(f"{status} {rep.op_name}: max rel error {rep.max_rel_error:.3e} "
              f"(tol {rep.tolerance:g})")
        failed = failed or not rep.passed
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_report(args) -> int:
    model = json.loads(Path(args.model).read_text())
    merged = dict(model)
    if args.baseline:
        baseline = json.loads(Path(args.baseline).read_text())
        model_hash = model.get("config", {}).get("dataset_hash", "")
        base_hash = baseline.get("config", {}).get("dataset_hash", "")
        if model_hash != base_hash:
            raise StoreError(
                f"dataset hash mismatch: model {model_hash!r} vs baseline {base_hash!r}")
        n_list = model.get("n_list", [1])
        merged["baseline_per_gap"] = baseline["per_gap"]
        merged["boosts"] = _boost_table(model["per_gap"], baseline["per_gap"], n_list)
    merged.setdefault("boosts", {})
    merged.setdefault("degree_buckets", {})
    _emit(merged, args.out)
    return EXIT_OK


def _boost_table(model_gap: dict, base_gap: dict, n_list) -> dict:
    out = {}
    for gap, agg in model_gap.items():
        if gap not in base_gap:
            continue
        row = {}
        for n in n_list:
            b = ev.boost(agg[f"@{n}"], base_gap[gap][f"@{n}"])
            row[f"@{n}"] = b if b is not None else "absent"
        out[gap] = row
    return out


def _degree_analysis(checkpoints, baselines, assets, mentions, n_list) -> dict:
    improvements = []
    for train_year, ckpt in sorted(checkpoints.items()):
        if train_year not in baselines:
            continue
        train_graph = assets.kg.snapshots[train_year]
        for test_year in assets.kg.years:
            if test_year == train_year:
                continue
            _, det_m = ev.evaluate_split(ckpt, assets, mentions, test_year, n_list)
            _, det_b = ev.evaluate_split(baselines[train_year], assets, mentions,
                                         test_year, n_list)
            improvements.extend(ev.per_query_improvement(det_m, det_b, train_graph))
    return ev.degree_report(improvements)


def _load_checkpoints(ckpt_dir: Path, years: list[int], expected_hash: str) -> dict:
    out = {}
    for year in years:
        path = ckpt_dir / f"ckpt_{year}.bin"
        if not path.exists():
            continue
        ckpt = Checkpoint.load(path)
        _check_dataset_hash(ckpt.config.dataset_hash, expected_hash, path)
        out[year] = ckpt
    return out


def _check_dataset_hash(found: str, expected: str, source) -> None:
    if found and expected and found != expected:
        raise StoreError(f"{source}: dataset hash {found!r} does not match "
                         f"resolved config {expected!r}")


def _emit(obj: dict, out_path: str | None):
    text = json.dumps(obj, sort_keys=True, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n")
    else:
        print(text)


def build_parser() -> _Parser:
    parser = _Parser(prog="cycle", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic drifted dataset")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--drift-rate", dest="drift_rate", type=float)
    p.add_argument("--n-entities", dest="n_entities", type=int)
    p.set_defaults(fn=cmd_synth)

    p = subs.add_parser("build-dataset", help="build feature matrix, graphs, pools")
    _add_common(p)
    p.set_defaults(fn=cmd_build_dataset)

    p = subs.add_parser("diff", help="cross-year positive/negative pools")
    _add_common(p)
    p.add_argument("--t1", type=int, required=True)
    p.add_argument("--t2", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_diff)

    p = subs.add_parser("train", help="train one year's model")
    _add_common(p)
    p.add_argument("--train-year", dest="train_year", type=int)
    p.add_argument("--target-year", dest="target_year", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(fn=cmd_train)

    p = subs.add_parser("evaluate", help="evaluate one checkpoint on one year")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test-year", dest="test_year", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_evaluate)

    p = subs.add_parser("gap-matrix", help="full (train, test) recall matrix")
    _add_common(p)
    p.add_argument("--ckpt-dir", dest="ckpt_dir")
    p.add_argument("--baseline-ckpt-dir", dest="baseline_ckpt_dir")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gap_matrix)

    p = subs.add_parser("grad-check", help="run the gradient verification suite")
    p.add_argument("--probes", type=int, default=25)
    p.set_defaults(fn=cmd_grad_check)

    p = subs.add_parser("report", help="merge evaluation reports and compute boosts")
    p.add_argument("--model", required=True)
    p.add_argument("--baseline")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (cfgmod.ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StoreError, ds.DatasetError, synth.SynthError, FileNotFoundError,
            KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainerError,) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
