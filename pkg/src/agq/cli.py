"""Command-line entry point: quantize, analyze, eval, bench.

All randomness flows from the seeds in the config; every command is
deterministic given (config, seeds, inputs) except bench wall-clock timings,
which are informational only. Exit codes are a stable contract:
1 = config error, 2 = I/O error, 3 = numeric error, 4 = threshold failure.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from importlib import resources

import click
import jsonschema
import numpy as np

from . import kernels, pipeline, pruning, tensor_store
from .pruning import default_start_layer, make_schedule
from .quantizers import QuantError, fit_weight_symmetric, quantize_weight_symmetric

EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3
EXIT_THRESHOLD = 4


def _load_schema() -> dict:
    text = resources.files("agq.schemas").joinpath("run_config.schema.json").read_text()
    return json.loads(text)


def load_config(path: str) -> dict:
    """Parse and schema-validate a run config; unknown keys are rejected."""
    try:
        with open(path) as f:
            raw = f.read()
    except OSError as e:
        click.echo(f"config read error: {e}", err=True)
        sys.exit(EXIT_IO)
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as e:
        click.echo(f"config parse error at line {e.lineno}, column {e.colno}: {e.msg}",
                   err=True)
        sys.exit(EXIT_CONFIG)
    try:
        jsonschema.validate(cfg, _load_schema())
    except jsonschema.ValidationError as e:
        click.echo(f"config schema error: {e.message}", err=True)
        sys.exit(EXIT_CONFIG)
    return cfg


def _block_config(cfg: dict) -> pipeline.BlockConfig:
    block = cfg.get("block", {})
    quant = cfg.get("quantization", {})
    sites = pipeline.preset_sites(
        quant.get("mode", "fp32"),
        act_quantizer=quant.get("act_quantizer", "trip"),
        trip_cap=quant.get("trip_cap", 3),
    )
    return pipeline.BlockConfig(
        d_model=block.get("d_model", 64),
        n_heads=block.get("n_heads", 4),
        d_ff=block.get("d_ff", 256),
        sites=sites,
        seed=cfg.get("seed", 0),
    )


def _schedule(cfg: dict, n_blocks: int):
    prune = cfg.get("prune")
    if prune is None:
        return None
    start = prune.get("start_layer", default_start_layer(n_blocks))
    return make_schedule(n_blocks, start, prune["beta"], prune["m"])


def _emit(report: dict, cfg: dict) -> None:
    path = cfg.get("output", {}).get("report")
    text = json.dumps(report, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")
    else:
        click.echo(text)


@click.group()
@click.option("--threads", type=int, default=None,
              help="GEMM row-partition thread count (AGQ_THREADS fallback).")
@click.pass_context
def main(ctx, threads):
    if threads is None:
        env = os.environ.get("AGQ_THREADS")
        threads = int(env) if env else None
    ctx.obj = {"threads": threads}


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--in", "in_path", required=True)
@click.option("--out", "out_path", required=True)
def quantize(config_path, in_path, out_path):
    """Quantize every float tensor in a store to per-channel 4-bit codes."""
    load_config(config_path)
    try:
        store = tensor_store.load_store(in_path)
    except (tensor_store.StoreError, OSError) as e:
        click.echo(f"store error: {e}", err=True)
        sys.exit(EXIT_IO)
    out_store: dict[str, np.ndarray] = {}
    sidecar: dict[str, dict] = {}
    try:
        for name in sorted(store):
            w = store[name]
            if w.dtype != np.float32:
                continue
            wq = quantize_weight_symmetric(w, fit_weight_symmetric(w, 4))
            out_store[name + ".codes"] = (wq.codes + 8).astype(np.uint8)
            sidecar[name] = {
                "kind": "weight_symmetric",
                "bits": 4,
                "offset": 8,
                "scales": [float(s) for s in wq.params.scales],
            }
    except QuantError as e:
        click.echo(f"numeric error: {e}", err=True)
        sys.exit(EXIT_NUMERIC)
    try:
        tensor_store.save_store(out_store, out_path)
        with open(out_path + ".params.json", "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        click.echo(f"write error: {e}", err=True)
        sys.exit(EXIT_IO)


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--in", "in_path", required=True)
@click.option("--input", "input_name", required=True,
              help="Name of the activation tensor to analyze.")
def analyze(config_path, in_path, input_name):
    """Outlier-channel and attention-locality report for one activation."""
    cfg = load_config(config_path)
    try:
        store = tensor_store.load_store(in_path)
    except (tensor_store.StoreError, OSError) as e:
        click.echo(f"store error: {e}", err=True)
        sys.exit(EXIT_IO)
    if input_name not in store:
        click.echo(f"tensor {input_name!r} not in store", err=True)
        sys.exit(EXIT_IO)
    x = store[input_name]
    k_sigma = cfg.get("analysis", {}).get("k_sigma", 3.0)
    block_cfg = _block_config(cfg)
    try:
        report_out = pipeline.analyze_outliers(x, k_sigma)
        block = pipeline.init_block(block_cfg)
        _, fp_maps = pipeline.forward_fp(block, x)
        _, q_map, _ = pipeline.forward_block(block, x)
        report = {
            "outliers": {
                "k_sigma": k_sigma,
                "threshold": report_out.threshold,
                "counts": report_out.counts.tolist(),
                "ranked_channels": report_out.ranked_channels.tolist(),
            },
            "locality_fp": pipeline.attention_locality(fp_maps[0]),
            "locality_q": pipeline.attention_locality(q_map),
        }
    except (QuantError, pipeline.PipelineError, pruning.PruneError) as e:
        click.echo(f"numeric error: {e}", err=True)
        sys.exit(EXIT_NUMERIC)
    _emit(report, cfg)
    csv_path = cfg.get("output", {}).get("csv")
    if csv_path:
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["channel", "outlier_count"])
            for ch, count in enumerate(report_out.counts):
                writer.writerow([ch, int(count)])


@main.command(name="eval")
@click.option("--config", "config_path", required=True)
@click.option("--in", "in_path", required=False, default=None)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
def eval_cmd(config_path, in_path, seed):
    """Run FP and quantized passes; exit 0 iff configured thresholds pass.

    The input hidden states come from the store tensor named "input" when a
    store is given, otherwise from the seeded generator.
    """
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    block_cfg = _block_config(cfg)
    n_blocks = cfg.get("block", {}).get("n_blocks", 2)
    t = cfg.get("sequence_length", 32)
    if in_path:
        try:
            store = tensor_store.load_store(in_path)
        except (tensor_store.StoreError, OSError) as e:
            click.echo(f"store error: {e}", err=True)
            sys.exit(EXIT_IO)
        x = store.get("input")
        if x is None:
            click.echo("store has no tensor named 'input'", err=True)
            sys.exit(EXIT_IO)
    else:
        rng = np.random.default_rng(cfg.get("seed", 0) + 1)
        x = rng.standard_normal((t, block_cfg.d_model)).astype(np.float32)

    try:
        blocks = pipeline.init_stack(block_cfg, n_blocks)
        schedule = _schedule(cfg, n_blocks)
        fp_cfg = pipeline.BlockConfig(
            d_model=block_cfg.d_model, n_heads=block_cfg.n_heads,
            d_ff=block_cfg.d_ff, sites={}, seed=block_cfg.seed,
        )
        fp_out, fp_info = pipeline.forward_stack(blocks, x, fp_cfg)
        records = []
        q_out, q_info = pipeline.forward_stack(blocks, x, block_cfg)
        records.append(_eval_record("no_prune", q_out, q_info, fp_out, fp_info))
        if schedule is not None:
            qp_out, qp_info = pipeline.forward_stack(blocks, x, block_cfg,
                                                     schedule=schedule)
            keeps = {i: qp_info["keeps"][i] for i in schedule.prune_layers}
            fpp_out, fpp_info = pipeline.forward_stack(blocks, x, fp_cfg,
                                                       forced_keeps=keeps)
            rec = _eval_record("prune", qp_out, qp_info, fpp_out, fpp_info)
            rec["schedule"] = {
                "beta": schedule.final_ratio,
                "m": len(schedule.prune_layers),
                "gamma": schedule.per_layer_ratio,
                "prune_layers": list(schedule.prune_layers),
            }
            records.append(rec)
    except (QuantError, pipeline.PipelineError, pruning.PruneError) as e:
        click.echo(f"numeric error: {e}", err=True)
        sys.exit(EXIT_NUMERIC)

    report = {"records": records}
    _emit(report, cfg)
    min_cosine = cfg.get("thresholds", {}).get("min_cosine")
    if min_cosine is not None:
        for rec in records:
            if rec["cosine"] < min_cosine:
                click.echo(
                    f"threshold failure: cosine {rec['cosine']:.6f} < {min_cosine} "
                    f"({rec['name']})",
                    err=True,
                )
                sys.exit(EXIT_THRESHOLD)


def _eval_record(name, q_out, q_info, fp_out, fp_info) -> dict:
    return {
        "name": name,
        "cosine": pipeline.cosine_similarity(q_out, fp_out),
        "sparsity": q_info["sparsity"],
        "locality_fp": pipeline.attention_locality(fp_info["maps"][-1]),
        "locality_q": pipeline.attention_locality(q_info["maps"][-1]),
        "sites": q_info["sites"],
    }


@main.command()
@click.option("--sizes", default="64,256,512", help="Comma-separated square sizes.")
@click.option("--kernels", "kernel_names", default="f32,int8,int4")
@click.option("--repeats", type=int, default=50, show_default=True)
def bench(sizes, kernel_names, repeats):
    """JSON-lines latency report; numbers are informational, never gated."""
    if repeats < 3:
        click.echo("repeats must be >= 3", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        size_list = [int(s) for s in sizes.split(",") if s]
    except ValueError:
        click.echo(f"bad sizes {sizes!r}", err=True)
        sys.exit(EXIT_CONFIG)
    for kernel in kernel_names.split(","):
        if kernel not in kernels.BENCH_KERNELS:
            click.echo(f"unknown kernel {kernel!r}", err=True)
            sys.exit(EXIT_CONFIG)
    for n in size_list:
        for kernel in kernel_names.split(","):
            row = kernels.bench_gemm(n, n, n, kernel, repeats)
            click.echo(json.dumps(row, sort_keys=True))


if __name__ == "__main__":
    main()
