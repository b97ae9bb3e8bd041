"""Command line interface: ``svrgraph <command> [options]``.

Exit codes: 0 success, 2 invalid input (bad flags, missing or malformed
files), 1 internal failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dims as dims_mod
from . import export, flow, prune, spectra, stats, tensorio, trainer

logger = logging.getLogger("svrgraph")


class InputError(Exception):
    """User-facing input problem (exit code 2)."""


def _default_seed() -> int:
    raw = os.environ.get("SVR_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise InputError(f"SVR_SEED must be an integer, got {raw!r}") from exc


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _load(args):
    for path in (args.model, args.manifest):
        if not Path(path).is_file():
            raise InputError(f"no such file: {path}")
    return tensorio.load_model(args.model, args.manifest, fold_scale=getattr(args, "fold_scale", False))


def _params(args) -> dict:
    skip = {"func", "command"}
    return {
        "command": args.command,
        "params": {k: v for k, v in vars(args).items() if k not in skip},
        "tool_version": export.tool_version(),
    }


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- commands ------------------------------------------------------------------


def cmd_build(args) -> None:
    spec, store = _load(args)
    graph = spectra.build_svr(spec, store, threads=args.threads)
    data = export.graph_export(graph, args.p, _params(args))
    out = Path(args.out)
    if args.format in ("json", "both"):
        export.write_json(out.with_suffix(".json") if args.format == "both" else out, data)
    if args.format in ("dot", "both"):
        (out.with_suffix(".dot") if args.format == "both" else out).write_text(export.to_dot(data))


def cmd_dims(args) -> None:
    spec, store = _load(args)
    graph = spectra.build_svr(spec, store, threads=args.threads)
    adjs = []
    for i, adj in enumerate(graph.adjacencies):
        d = dims_mod.internal_dims(adj.values, adj.n_null)
        adjs.append({"adjacency": i, "d_out": d.d_out, "d_in": d.d_in, "deviation": d.deviation, "n_null": adj.n_null})
    result = {
        "internal_dims": adjs,
        "colors": [graph.colors(i).tolist() for i in range(graph.n_layers)],
        "sigmas": [graph.sigmas(i).tolist() for i in range(graph.n_layers)],
        "tie_flags": list(graph.tie_flags),
        "index_base": "d_out/d_in are 1-based counts of leading spectral neurons",
        **_params(args),
    }
    export.write_json(args.out, result)


def cmd_heatmap(args) -> None:
    spec, store = _load(args)
    graph = spectra.build_svr(spec, store, threads=args.threads)
    if not 0 <= args.layer < len(graph.adjacencies):
        raise InputError(f"--layer must lie in [0, {len(graph.adjacencies)})")
    adj = graph.adjacencies[args.layer]
    out = _out_dir(args.out_dir)
    meta = {**_params(args), "kind": adj.kind, "rows": "next layer ranks", "cols": "previous layer ranks"}
    export.write_matrix_csv(out / f"adjacency_{args.layer}.csv", adj.values, meta)
    export.write_pgm(out / f"adjacency_{args.layer}.pgm", adj.values, bits=args.bits, params=meta)


def _random_inputs(spec, count: int, rng, image: int) -> np.ndarray:
    first = spec.layers[0]
    if first.kind == "conv":
        return rng.standard_normal((count, first.in_dim, image, image))
    return rng.standard_normal((count, first.in_dim))


def cmd_prune(args) -> None:
    spec, store = _load(args)
    graph = spectra.build_svr(spec, store, threads=args.threads)
    pruned, report = prune.prune_to_internal_dims(spec, store, graph)
    rng = stats.make_rng(args.seed)
    x = _random_inputs(spec, args.check_samples, rng, args.image_size)
    eq = prune.equivalence_check(spec, store, pruned, x)
    tensorio.save_model(spec, pruned, args.out_model, args.out_manifest)
    export.write_json(
        args.report,
        {
            "layers": [r.to_dict() for r in report],
            "equivalence": {"max_discrepancy": eq.max_discrepancy, "agreement": eq.agreement, "n_inputs": eq.n_inputs},
            **_params(args),
        },
    )


def cmd_cross(args) -> None:
    spec, store = _load(args)
    try:
        cross, f_prev, f_next = spectra.cross_adjacency_at(spec, store, args.layer, squared=args.squared)
    except (IndexError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    part = prune.kernel_blocks(cross, f_prev.S, f_next.S, args.mass_threshold, args.penalty)
    assign = prune.prunable_neurons(f_prev.U, part, args.ambiguity_tol, args.cutoff)
    result = {
        "partition": part.to_dict(),
        "neurons": assign.to_dict(),
        "prunable": assign.prunable_indices,
        "sigma_cutoff": args.cutoff * part.sigma_max,
        **_params(args),
    }
    if args.out_model:
        pruned = prune.prune_channels(spec, store, args.layer, assign.prunable_indices)
        rng = stats.make_rng(args.seed)
        eq = prune.equivalence_check(spec, store, pruned, _random_inputs(spec, args.check_samples, rng, args.image_size))
        result["equivalence"] = {"max_discrepancy": eq.max_discrepancy, "agreement": eq.agreement, "n_inputs": eq.n_inputs}
        tensorio.save_model(spec, pruned, args.out_model, args.out_manifest or str(args.out_model) + ".manifest.json")
    export.write_json(args.out, result)
    if args.csv:
        export.write_matrix_csv(args.csv, cross, _params(args))


def _read_images(path, channels: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    if path.suffix == ".npy":
        x = np.load(path).astype(np.float64)
    else:
        x = tensorio.read_idx_images(path).astype(np.float64) / 255.0
    if x.ndim == 3:
        x = np.repeat(x[:, None], channels, axis=1) if channels > 1 else x[:, None]
    if x.ndim != 4 or x.shape[1] != channels:
        raise InputError(f"images must be (N, {channels}, H, W); got {x.shape}")
    return x


def cmd_images(args) -> None:
    spec, store = _load(args)
    if spec.layers[args.layer].kind != "conv":
        raise InputError(f"layer {args.layer} is not a convolutional layer")
    images = _read_images(args.images, spec.layers[0].in_dim)[: args.count]
    if len(images) == 0:
        raise InputError("no images to analyse")
    out = _out_dir(args.out_dir)
    meta = _params(args)
    Y = flow.spectral_images(spec, store, images[0], args.layer, args.top_k)
    for k, y in enumerate(Y):
        export.write_pgm(out / f"spectral_{args.layer}_{k}.pgm", np.abs(y), bits=args.bits, params={**meta, "rank": k})
    factor = images.shape[-1] // Y.shape[-1]
    export.write_pgm(out / "sobel.pgm", flow.sobel(flow.downsample(images[0], factor)), bits=args.bits, params=meta)
    sim = flow.edge_similarity(spec, store, images, args.layer, args.top_k)
    export.write_csv(out / "similarity.csv", ["rank", "mean", "std", "n"], sim.rows(), meta)


def cmd_validate(args) -> None:
    rng = stats.make_rng(args.seed)
    result = _params(args)
    if args.kind == "fc":
        s = np.sort(args.n * stats.fc_coefficient_samples(args.n, args.samples, rng))
        result["ks"] = stats.ks_distance(s, stats.NullModel(1, 1.0, args.n))
    elif args.kind == "conv":
        s = np.sort(stats.conv_coefficient_samples(args.n, args.K, args.samples, rng))
        result["ks"] = stats.ks_distance(s, stats.NullModel.conv(args.n, args.K))
    elif args.kind == "moments":
        result["moments"] = stats.validate_moments(args.n, args.K, args.n, args.samples, rng=rng, seed=args.seed).to_dict()
    else:
        pair = stats.LayerPair(16, 64, 32, args.K if args.K > 1 else 0)
        table = stats.survival_validation(pair, args.init, rng, trials=args.trials)
        result["survival"] = {"max_gap": table.max_gap(), "n_coefficients": table.n_coefficients}
        if args.csv:
            export.write_csv(args.csv, ["threshold", "empirical", "model"], table.rows(), _params(args))
    export.write_json(args.out, result)


def cmd_train(args) -> None:
    data_dir = Path(args.data_dir)
    try:
        dataset = tensorio.load_idx_dir(data_dir)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from exc
    xtr, ytr, xte, yte = dataset
    dataset = (xtr.reshape(len(xtr), -1), ytr, xte.reshape(len(xte), -1), yte)
    widths = args.widths or [dataset[0].shape[1], 40, 40, 40, 10]
    config = trainer.TrainConfig(tuple(widths), args.epochs, args.lr, args.batch_size, args.seed, args.subset)
    meta = {**_params(args), "config": config.to_dict()}
    if args.sweep:
        log = []
        rows = trainer.width_experiment(args.sweep, args.runs, dataset, config, log)
        export.write_json(args.out, {"rows": [r.to_dict() for r in rows], **meta})
        return
    log = []
    spec, store, acc = trainer.train_mlp(config, dataset, log)
    if args.out_model:
        tensorio.save_model(spec, store, args.out_model, args.out_manifest or str(args.out_model) + ".manifest.json")
    if args.log:
        export.write_csv(args.log, ["epoch", "loss", "test_acc"], log, meta)
    export.write_json(args.out, {"test_accuracy": acc, "log": log, **meta})


def cmd_blocknoise(args) -> None:
    rows = dims_mod.block_noise_experiment(args.n, args.p, args.eps, trials=args.trials, seed=args.seed)
    export.write_csv(
        args.out,
        ["eps", "mean_d_out", "ci_low", "ci_high"],
        [(r.eps, r.mean_d_out, r.ci_low, r.ci_high) for r in rows],
        _params(args),
    )


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svrgraph", description="Singular Value Representation of network weights")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_cmd(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model", required=True, help="tensor container")
        p.add_argument("--manifest", required=True, help="model manifest JSON")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--fold-scale", action="store_true", help="multiply manifest scale vectors into weights")
        p.set_defaults(func=func)
        return p

    def seeded(p):
        p.add_argument("--seed", type=int, default=None, help="RNG seed (default: $SVR_SEED or 0)")
        return p

    p = model_cmd("build", cmd_build, "thresholded SVR graph as JSON/DOT")
    p.add_argument("--p", type=float, default=0.15, help="null survival fraction")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "dot", "both"), default="json")

    p = model_cmd("dims", cmd_dims, "internal dimensions and color intensities")
    p.add_argument("--out", required=True)

    p = model_cmd("heatmap", cmd_heatmap, "adjacency matrix as CSV and PGM")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.add_argument("--out-dir", required=True)

    p = seeded(model_cmd("prune", cmd_prune, "SVD compression to internal dimensions"))
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--check-samples", type=int, default=1000)
    p.add_argument("--image-size", type=int, default=8)

    p = seeded(model_cmd("cross", cmd_cross, "cross adjacency, kernel blocks and prunable neurons"))
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--squared", action="store_true")
    p.add_argument("--mass-threshold", type=float, default=0.75)
    p.add_argument("--penalty", type=float, default=None)
    p.add_argument("--ambiguity-tol", type=float, default=1e-3)
    p.add_argument("--cutoff", type=float, default=prune.NEGLIGIBLE_RTOL, help="relative sigma cutoff")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--out-model", default=None, help="write the channel-pruned model here")
    p.add_argument("--out-manifest", default=None)
    p.add_argument("--check-samples", type=int, default=1000)
    p.add_argument("--image-size", type=int, default=8)

    p = model_cmd("images", cmd_images, "spectral images and edge similarity")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--images", required=True, help="IDX image file or .npy array (N, C, H, W)")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.add_argument("--out-dir", required=True)

    p = seeded(sub.add_parser("validate", help="Monte Carlo checks of the null models"))
    p.add_argument("--kind", choices=("fc", "conv", "moments", "survival"), required=True)
    p.add_argument("--n", type=int, default=256, help="dimension / channel count")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--init", choices=("normal", "uniform"), default="normal")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_validate)

    p = seeded(sub.add_parser("train", help="train a bias-free MLP on an IDX dataset directory"))
    p.add_argument("--data-dir", required=True)
    p.add_argument("--widths", type=_ints, default=None)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--subset", type=int, default=None)
    p.add_argument("--sweep", type=_ints, default=None, help="hidden widths n for [input, n, n, classes] runs")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--out-model", default=None)
    p.add_argument("--out-manifest", default=None)
    p.add_argument("--log", default=None, help="CSV of (epoch, loss, test_acc)")
    p.set_defaults(func=cmd_train)

    p = seeded(sub.add_parser("blocknoise", help="internal-dimension recovery under orthogonal noise"))
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, default=20)
    p.add_argument("--eps", type=_floats, default=[0.0, 0.1, 0.3, 1.0, 3.0, 5.0])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blocknoise)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if "seed" in vars(args) and args.seed is None:
            args.seed = _default_seed()
        if getattr(args, "threads", 1) < 1:
            raise InputError("--threads must be >= 1")
        args.func(args)
    except (InputError, tensorio.FormatError, tensorio.ShapeMismatchError, FileNotFoundError) as exc:
        print(f"svrgraph {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"svrgraph {args.command}: invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        logger.debug("internal failure", exc_info=True)
        print(f"svrgraph {args.command}: internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
