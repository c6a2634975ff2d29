"""Runs one configured experiment end to end: materialize data, train,
write every output file under the configured directory, and return a
JSON-able manifest of what was produced.

Output files per kind:
  sweep      sweep.csv, summary.txt, trials_shared{k}.csv, aggregate_shared{k}.json
  compare    compare.csv, summary.txt, trials_{approach}_{structure}.csv,
             aggregate_{approach}_{structure}.json
  visualize  projection_layer{k}.csv, projection_src_layer{k}.csv, summary.txt
  gen-data   source.csv, target.csv, target_pool.csv
"""

import os

from .config import ExperimentConfig, to_shift_spec, to_train_config
from .data import LabeledDataset, generate_shift_task, load_csv, save_csv
from .errors import ConfigError, DataError
from .experiments import (
    prepare_data,
    run_compare,
    run_sweep,
    run_visualize,
    write_compare_csv,
    write_compare_summary,
    write_projection_csv,
    write_sweep_csv,
    write_sweep_summary,
    write_visualize_summary,
)
from .train import write_aggregate_json, write_trials_csv


def load_datasets(config: ExperimentConfig):
    if config.data.kind == "synthetic":
        return generate_shift_task(to_shift_spec(config), attribute=config.attribute)
    source = load_csv(config.data.source_path, "source")
    target = load_csv(config.data.target_path, "target")
    pool = load_csv(config.data.target_pool_path, "target")
    if source.scores is None or target.scores is None:
        raise DataError("source and target csv files must carry a label column")
    return (
        LabeledDataset(source.features, source.scores, config.attribute),
        LabeledDataset(target.features, target.scores, config.attribute),
        pool.features,
    )


def run_experiment(config: ExperimentConfig) -> dict:
    if config.kind is None:
        raise ConfigError("experiment kind not set (sweep | compare | visualize | gen-data)")
    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    source, target, pool = load_datasets(config)
    manifest = {"kind": config.kind, "out_dir": out, "seed": config.seed, "outputs": []}

    def emit(name):
        manifest["outputs"].append(name)
        return os.path.join(out, name)

    if config.kind == "gen-data":
        save_csv(emit("source.csv"), source.features, source.scores)
        save_csv(emit("target.csv"), target.features, target.scores)
        save_csv(emit("target_pool.csv"), pool)
        manifest["rows"] = {"source": len(source), "target": len(target), "target_pool": len(pool)}
        return manifest

    prepared = prepare_data(source, target, pool, config.seed, config.data.fractions)
    train_cfg = to_train_config(config)
    width = config.network.hidden_width

    if config.kind == "sweep":
        sweep = run_sweep(prepared, train_cfg, config.network.sweep_layers, width, config.attribute)
        write_sweep_csv(emit("sweep.csv"), sweep)
        write_sweep_summary(emit("summary.txt"), sweep)
        for k, rep in sorted(sweep["reports"].items()):
            write_trials_csv(emit(f"trials_shared{k}.csv"), rep)
            write_aggregate_json(emit(f"aggregate_shared{k}.json"), sweep["aggregates"][k])
        manifest["best_shared_layers"] = sweep["best_shared_layers"]
        manifest["rows"] = sweep["rows"]
    elif config.kind == "compare":
        table, reports, aggregates = run_compare(prepared, train_cfg, config.network.shared_layers,
                                                 width, config.attribute)
        write_compare_csv(emit("compare.csv"), table)
        write_compare_summary(emit("summary.txt"), table)
        for (approach, structure), rep in sorted(reports.items()):
            write_trials_csv(emit(f"trials_{approach}_{structure}.csv"), rep)
            write_aggregate_json(emit(f"aggregate_{approach}_{structure}.json"), aggregates[(approach, structure)])
        manifest["significant"] = {
            structure: table.row("dann", structure).significant for structure in ("deep", "shallow")
        }
        manifest["p_values"] = {
            structure: table.row("dann", structure).p_values for structure in ("deep", "shallow")
        }
    elif config.kind == "visualize":
        layers = run_visualize(prepared, train_cfg, config.network.shared_layers, width)
        for entry in layers:
            k = entry["layer"]
            write_projection_csv(emit(f"projection_layer{k}.csv"), *entry["dann"])
            write_projection_csv(emit(f"projection_src_layer{k}.csv"), *entry["src"])
        write_visualize_summary(emit("summary.txt"), layers)
        manifest["separability"] = {
            str(e["layer"]): {"dann": e["dann_separability"], "src": e["src_separability"]}
            for e in layers
        }
    manifest["outputs"].sort()
    return manifest
