"""Pipeline stages behind the CLI. Every stage reads only files written
by earlier stages plus the config, so stages can be rerun independently;
`all` is exactly the stages chained in order.

Output layout under the run directory:

    config.json            effective config for the run
    data/train|holdout|attack/   PPM images + manifest.json
    model.json             trained weights
    train_report.json      accuracies and per-epoch losses
    attacks/               originals, adversarials, masks + attacks.json
    explanations/          per-record score maps and LIME rankings + index.json
    eval.csv  summary.json  summary.txt
    plots/                 SVG curves, overlay PPM, mean-rank table
"""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from threadpoolctl import threadpool_limits

from . import config as cfgmod
from . import net as network
from .attack import AttackConfig, attack_image_regions, load_records, save_records
from .data import DatasetConfig, generate_dataset, load_dataset, save_dataset, train
from .errors import ConfigError, InputError
from .evaluation import (
    ExplanationSet,
    aggregate,
    evaluate_example,
    read_eval_csv,
    write_eval_csv,
)
from .explainers import (
    LimeConfig,
    guided_backprop,
    lime_explain,
    load_ranking,
    load_scores,
    salience,
    save_ranking,
    save_scores,
)
from .ppm import write_ppm
from .report import plot_example_curves, render_overlay


def log(msg):
    print(msg, file=sys.stderr)


def _dataset_cfg(cfg, split, per_class_key, stage_code):
    d = cfg["data"]
    return DatasetConfig(
        num_classes=d["num_classes"],
        images_per_class=d[per_class_key],
        height=d["height"],
        width=d["width"],
        seed=cfgmod.stage_seed(cfg["master_seed"], stage_code),
    )


def stage_gen_data(cfg, out):
    os.makedirs(out, exist_ok=True)
    cfgmod.save_config(cfg, os.path.join(out, "config.json"))
    splits = [
        ("train", "train_per_class", cfgmod.SEED_DATA_TRAIN),
        ("holdout", "holdout_per_class", cfgmod.SEED_DATA_HOLDOUT),
        ("attack", "attack_per_class", cfgmod.SEED_DATA_ATTACK),
    ]
    for split, key, code in splits:
        ds_cfg = _dataset_cfg(cfg, split, key, code)
        dataset = generate_dataset(ds_cfg)
        save_dataset(dataset, ds_cfg, os.path.join(out, "data", split))
        log(f"gen-data: wrote {len(dataset)} images to data/{split}")


def stage_train(cfg, out, data_dir=None):
    data_dir = data_dir or os.path.join(out, "data")
    train_set, _ = load_dataset(os.path.join(data_dir, "train"))
    holdout, _ = load_dataset(os.path.join(data_dir, "holdout"))
    d = cfg["data"]
    net = network.build_network(
        cfg["model"]["architecture"],
        (3, d["height"], d["width"]),
        d["num_classes"],
        cfgmod.stage_seed(cfg["master_seed"], cfgmod.SEED_MODEL_INIT),
    )
    report = train(
        net,
        train_set,
        epochs=cfg["train"]["epochs"],
        lr=cfg["train"]["lr"],
        seed=cfgmod.stage_seed(cfg["master_seed"], cfgmod.SEED_TRAIN_SHUFFLE),
        holdout=holdout,
    )
    network.save_network(net, os.path.join(out, "model.json"))
    with open(os.path.join(out, "train_report.json"), "w") as f:
        json.dump(
            {
                "epochs": report.epochs,
                "train_accuracy": report.train_accuracy,
                "holdout_accuracy": report.holdout_accuracy,
                "epoch_losses": report.epoch_losses,
            },
            f,
            indent=1,
        )
    log(
        f"train: accuracy train={report.train_accuracy:.3f} "
        f"holdout={report.holdout_accuracy:.3f}"
    )
    return report


# worker-process globals, set once per worker by the pool initializer
_WORKER = {}


def _pool_init(init, *args):
    # work parallelizes across processes; multi-threaded BLAS only adds
    # sync overhead at these GEMM sizes, so pin each worker to one thread
    # (the limiter must stay referenced for the worker's lifetime)
    _WORKER["blas_limiter"] = threadpool_limits(limits=1, user_api="blas")
    init(*args)


def _attack_worker_init(model_path, seg_params, attack_cfg_dict, regions):
    _WORKER["net"] = network.load_network(model_path)
    _WORKER["seg_params"] = seg_params
    _WORKER["attack_cfg"] = AttackConfig(**attack_cfg_dict)
    _WORKER["regions"] = regions


def _attack_worker(task):
    image_index, img = task
    return attack_image_regions(
        _WORKER["net"], img, image_index, _WORKER["seg_params"],
        _WORKER["attack_cfg"], _WORKER["regions"],
    )


def _attack_cfg_dict(cfg):
    a = cfg["attack"]
    return {
        "target_label": a["target_label"],
        "step_eps": a["step_eps"],
        "max_iters": a["max_iters"],
        "patience": a["patience"],
        "ball_eps": a["ball_eps"],
    }


def stage_attack(cfg, out, jobs=1, model_path=None, data_dir=None):
    model_path = model_path or os.path.join(out, "model.json")
    data_dir = data_dir or os.path.join(out, "data", "attack")
    if not os.path.exists(model_path):
        raise ConfigError(f"no model at {model_path}; run the train stage first")
    dataset, _ = load_dataset(data_dir)
    images = [img for img, _ in dataset]
    seg_params = cfg["segmentation"]["attack"]
    regions = cfg["attack"]["regions"]
    acfg = _attack_cfg_dict(cfg)

    tasks = list(enumerate(images))
    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_pool_init,
            initargs=(_attack_worker_init, model_path, seg_params, acfg, regions),
        ) as pool:
            per_image = list(pool.map(_attack_worker, tasks, chunksize=4))
    else:
        with threadpool_limits(limits=1, user_api="blas"):
            _attack_worker_init(model_path, seg_params, acfg, regions)
            per_image = [_attack_worker(t) for t in tasks]

    records = [rec for recs in per_image for rec in recs]
    save_records(records, os.path.join(out, "attacks"))
    n_success = sum(1 for r in records if r.status.value == "success")
    log(
        f"attack: {len(records)} attempts over {len(images)} images, "
        f"{n_success} successes ({n_success / max(len(records), 1):.0%})"
    )
    return records


def _explain_worker_init(model_path, seg_params, lime_cfg_dict, master_seed, methods):
    _WORKER["net"] = network.load_network(model_path)
    _WORKER["seg_params"] = seg_params
    _WORKER["lime_cfg"] = lime_cfg_dict
    _WORKER["master_seed"] = master_seed
    _WORKER["methods"] = methods


def _explain_worker(task):
    index, adversarial = task
    net = _WORKER["net"]
    result = {}
    if "salience" in _WORKER["methods"]:
        result["salience"] = salience(net, adversarial)
    if "guided" in _WORKER["methods"]:
        result["guided"] = guided_backprop(net, adversarial)
    if "lime" in _WORKER["methods"]:
        lime_cfg = LimeConfig(
            **_WORKER["lime_cfg"],
            seed=[_WORKER["master_seed"], cfgmod.SEED_LIME, index],
        )
        result["lime"] = lime_explain(
            net, adversarial, lime_cfg, _WORKER["seg_params"]
        )
    return index, result


ALL_EXPLAIN_METHODS = ("salience", "guided", "lime")


def stage_explain(cfg, out, jobs=1, model_path=None, attacks_dir=None, method="all"):
    model_path = model_path or os.path.join(out, "model.json")
    attacks_dir = attacks_dir or os.path.join(out, "attacks")
    if not os.path.exists(os.path.join(attacks_dir, "attacks.json")):
        raise ConfigError(f"no attack manifest in {attacks_dir}; run the attack stage")
    methods = ALL_EXPLAIN_METHODS if method == "all" else (method,)
    records = load_records(attacks_dir, success_only=True)
    exp_dir = os.path.join(out, "explanations")
    os.makedirs(exp_dir, exist_ok=True)
    seg_params = cfg["segmentation"]["lime"]
    lime_cfg = dict(cfg["lime"])
    tasks = [(i, rec.adversarial) for i, rec in enumerate(records)]
    initargs = (model_path, seg_params, lime_cfg, cfg["master_seed"], methods)

    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_pool_init,
            initargs=(_explain_worker_init,) + initargs,
        ) as pool:
            results = list(pool.map(_explain_worker, tasks, chunksize=2))
    else:
        with threadpool_limits(limits=1, user_api="blas"):
            _explain_worker_init(*initargs)
            results = [_explain_worker(t) for t in tasks]

    # merge into any existing index so per-method runs accumulate
    index_path = os.path.join(exp_dir, "index.json")
    entries: dict[str, dict] = {}
    if os.path.exists(index_path):
        with open(index_path) as f:
            entries = {e["id"]: e for e in json.load(f)["records"]}
    for (_, result), rec in zip(results, records):
        rid = rec.record_id
        entry = entries.setdefault(rid, {"id": rid})
        if "salience" in result:
            save_scores(result["salience"], os.path.join(exp_dir, f"salience_{rid}"))
            entry["salience"] = f"salience_{rid}"
        if "guided" in result:
            save_scores(result["guided"], os.path.join(exp_dir, f"guided_{rid}"))
            entry["guided"] = f"guided_{rid}"
        if "lime" in result:
            save_ranking(result["lime"], os.path.join(exp_dir, f"lime_{rid}"))
            entry["lime"] = f"lime_{rid}"
            entry["ranked_superpixels"] = len(result["lime"].ranked)
    with open(index_path, "w") as f:
        json.dump({"records": [entries[k] for k in sorted(entries)]}, f, indent=1)
    log(
        f"explain: wrote {'/'.join(methods)} for each of {len(records)} records"
    )
    return list(entries.values())


def load_explanations(out, record_id) -> ExplanationSet:
    exp_dir = os.path.join(out, "explanations")
    try:
        return ExplanationSet(
            salience=load_scores(os.path.join(exp_dir, f"salience_{record_id}")),
            guided=load_scores(os.path.join(exp_dir, f"guided_{record_id}")),
            lime=load_ranking(os.path.join(exp_dir, f"lime_{record_id}")),
        )
    except FileNotFoundError as exc:
        raise ConfigError(
            f"missing explanation files for record {record_id}; run the explain "
            f"stage for all three methods first ({exc})"
        ) from exc


def stage_evaluate(cfg, out, attacks_dir=None):
    attacks_dir = attacks_dir or os.path.join(out, "attacks")
    index_path = os.path.join(out, "explanations", "index.json")
    if not os.path.exists(index_path):
        raise ConfigError("no explanations index; run the explain stage first")
    records = load_records(attacks_dir, success_only=True)
    eval_seed = cfgmod.stage_seed(cfg["master_seed"], cfgmod.SEED_EVAL)
    max_n = cfg["evaluation"]["max_n"]
    all_evals = []
    skipped = 0
    for rec in records:
        explanations = load_explanations(out, rec.record_id)
        try:
            all_evals.extend(evaluate_example(rec, explanations, eval_seed, max_n))
        except InputError as exc:
            skipped += 1
            log(f"evaluate: skipping {rec.record_id}: {exc}")
    write_eval_csv(all_evals, os.path.join(out, "eval.csv"))
    table = aggregate(all_evals, config_fingerprint=cfgmod.fingerprint(cfg))
    table.notes.append(
        f"success records evaluated: {len(records) - skipped}, skipped: {skipped}"
    )
    with open(os.path.join(out, "summary.json"), "w") as f:
        f.write(table.to_json() + "\n")
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write(table.format_text() + "\n")
    log("evaluate: " + table.format_text().splitlines()[0])
    return table


def stage_report(cfg, out, example_id=None, n=None):
    rows = read_eval_csv(os.path.join(out, "eval.csv"))
    if not rows:
        raise ConfigError("eval.csv is empty; run the evaluate stage first")
    plots = os.path.join(out, "plots")
    os.makedirs(plots, exist_ok=True)
    if example_id is None:
        example_id = rows[0]["example_id"]
    plot_example_curves(rows, example_id, os.path.join(plots, f"curves_{example_id}"))

    records = load_records(os.path.join(out, "attacks"), success_only=True)
    by_id = {r.record_id: r for r in records}
    if example_id not in by_id:
        raise InputError(f"example {example_id!r} is not a Success record")
    record = by_id[example_id]
    explanations = load_explanations(out, example_id)
    mine = [r for r in rows if r["example_id"] == example_id and r["method"] == "lime"]
    if n is None:
        n = max(mine, key=lambda r: (r["jaccard"], -r["n"]))["n"]
    budget = next(r["budget"] for r in mine if r["n"] == n)
    panel = render_overlay(record, explanations, budget)
    write_ppm(os.path.join(plots, f"overlay_{example_id}_n{n}.ppm"), panel)

    with open(os.path.join(out, "summary.txt")) as f:
        text = f.read()
    with open(os.path.join(plots, "mean_ranks.txt"), "w") as f:
        f.write(text)
    print(text)
    log(f"report: plots for example {example_id} at n={n} (budget {budget})")
    return example_id, n, budget


def stage_all(cfg, out, jobs=1):
    stage_gen_data(cfg, out)
    stage_train(cfg, out)
    stage_attack(cfg, out, jobs=jobs)
    stage_explain(cfg, out, jobs=jobs)
    stage_evaluate(cfg, out)
    stage_report(cfg, out)


__all__ = [
    "stage_gen_data",
    "stage_train",
    "stage_attack",
    "stage_explain",
    "stage_evaluate",
    "stage_report",
    "stage_all",
    "load_explanations",
]
