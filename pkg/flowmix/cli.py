"""Command-line front end.

Every command is declared once in ``COMMANDS``; ``main`` builds the parser
from that registry and maps failures to exit codes (2 for usage errors, 1
for runtime errors).
"""

from __future__ import annotations

import argparse
from collections.abc import Callable
from dataclasses import dataclass
import json
import logging
from pathlib import Path
import sys

import numpy as np
import voluptuous as vol

from . import __version__, const
from .config import SCORE_SCHEMA
from .embedding import EmbeddingTable, embed_dataset
from .exceptions import ContractViolation, FlowmixError, TrainingDiverged
from .model import flowgen
from .model.condgen import CondConfig, generate_for_re, load_bundle, save_bundle, train_cond
from .model.flowgen import FlowDataset
from .model.gmvae import decode, decode_centroids, load_model, sample_prior, save_model
from .model.numkit import Rng
from .model.spectral import LaplacianKind, permutation_null, smoothness_score, summary_line, write_report_csv
from .model.trainer import TrainConfig, train
from .plot import ColorBy, write_svg
from .protocol import cluster_sweep, write_sweep_csv

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

_LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


@dataclass(frozen=True, kw_only=True)
class CommandDescription:
    """Describes one sub-command."""

    key: str
    help: str
    add_arguments: Callable[[argparse.ArgumentParser], None]
    handler: Callable[[argparse.Namespace], int]


# ── shared argument groups ──────────────────────────────────────────────

def _add_training_arguments(parser: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    parser.add_argument("--data", required=True, type=Path, help="GMVF dataset")
    parser.add_argument("--latent-dim", type=int, default=defaults.latent_dim)
    parser.add_argument("--epochs", type=int, default=defaults.epochs)
    parser.add_argument("--warmup", type=int, default=defaults.warmup_epochs)
    parser.add_argument("--em-every", type=int, default=defaults.em_every)
    parser.add_argument("--lr", type=float, default=defaults.lr)
    parser.add_argument("--batch", type=int, default=defaults.batch_size)
    parser.add_argument("--hidden", type=int, nargs="+", default=list(defaults.hidden))
    parser.add_argument("--seed", type=int, default=defaults.seed)


def _train_config(args: argparse.Namespace, n_clusters: int) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        warmup_epochs=args.warmup,
        batch_size=args.batch,
        lr=args.lr,
        em_every=args.em_every,
        n_clusters=n_clusters,
        latent_dim=args.latent_dim,
        hidden=tuple(args.hidden),
        seed=args.seed,
    )


def _write_sidecar(out: Path, payload: dict) -> Path:
    sidecar = out.with_name(out.name + ".json")
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return sidecar


def _fields_dataset(re, fields: np.ndarray) -> FlowDataset:
    return FlowDataset(re=np.asarray(re, dtype=np.float64), fields=fields)


# ── gen-data ────────────────────────────────────────────────────────────

def _gen_data_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, default=256)
    parser.add_argument("--re-min", type=float, default=const.RE_MIN)
    parser.add_argument("--re-max", type=float, default=const.RE_MAX)
    parser.add_argument("--grid", type=int, default=const.GRID, help="grid side H = W")
    parser.add_argument("--noise", type=float, default=const.NOISE_FRAC, help="noise as a fraction of channel RMS")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, type=Path)


def _gen_data(args: argparse.Namespace) -> int:
    dataset = flowgen.generate(
        n=args.n,
        re_min=args.re_min,
        re_max=args.re_max,
        height=args.grid,
        width=args.grid,
        noise_frac=args.noise,
        seed=args.seed,
    )
    flowgen.save(args.out, dataset)
    sigma = dict(zip(const.CHANNELS, (float(s) for s in dataset.noise_sigma)))
    _write_sidecar(args.out, {
        "n": args.n,
        "re_min": args.re_min,
        "re_max": args.re_max,
        "grid": args.grid,
        "noise_frac": args.noise,
        "noise_sigma": sigma,
        "seed": args.seed,
    })
    print("noise sigma " + " ".join(f"{name}={value:.6g}" for name, value in sigma.items()))
    return EXIT_OK


# ── train ───────────────────────────────────────────────────────────────

def _train_arguments(parser: argparse.ArgumentParser) -> None:
    _add_training_arguments(parser)
    parser.add_argument("--clusters", type=int, default=TrainConfig().n_clusters)
    parser.add_argument("--out", required=True, type=Path, help="GMVM model file")
    parser.add_argument("--log", type=Path, help="training log CSV")
    parser.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")


def _train(args: argparse.Namespace) -> int:
    config = _train_config(args, args.clusters)
    dataset = flowgen.load(args.data)
    try:
        model, log = train(dataset, config)
    except TrainingDiverged as err:
        if err.checkpoint is not None:
            rescue = args.out.with_name(args.out.name + ".last-good")
            rescue.write_bytes(err.checkpoint)
            _LOGGER.error("Last good checkpoint (epoch %d) written to %s", err.epoch - 1, rescue)
        raise
    save_model(args.out, model)
    if args.log is not None:
        log.to_csv(args.log, timing=not args.no_timing)
    return EXIT_OK


# ── embed / score / plot ────────────────────────────────────────────────

def _embed_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, type=Path)
    parser.add_argument("--data", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path, help="embedding table CSV")


def _embed(args: argparse.Namespace) -> int:
    model, _ = load_model(args.model)
    embed_dataset(model, flowgen.load(args.data)).to_csv(args.out)
    return EXIT_OK


def _score_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embeddings", required=True, type=Path)
    parser.add_argument("--quantity", default="re", help="'re' or any column of the embedding table")
    parser.add_argument("--k", type=int, default=const.KNN_K)
    parser.add_argument("--alpha", type=float, default=const.ALPHA)
    parser.add_argument("--shuffles", type=int, default=0, help="size of the permutation null")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--laplacian",
        default=LaplacianKind.UNNORMALIZED.value,
        choices=[kind.value for kind in LaplacianKind],
    )
    parser.add_argument("--out", type=Path, help="per-mode report CSV")


def _score(args: argparse.Namespace) -> int:
    options = SCORE_SCHEMA({
        "k": args.k,
        "alpha": args.alpha,
        "shuffles": args.shuffles,
        "seed": args.seed,
        "laplacian": args.laplacian,
    })
    table = EmbeddingTable.from_csv(args.embeddings)
    quantity = table.column(args.quantity)
    kind = LaplacianKind(options["laplacian"])
    report = smoothness_score(table.pcs, quantity, options["k"], options["alpha"], kind)
    print(summary_line(report))
    if options["shuffles"]:
        null = permutation_null(
            table.pcs, quantity, options["k"], options["alpha"], options["shuffles"], Rng(options["seed"]), kind
        )
        p95 = float(np.percentile(null, 95))
        print(f"null_p95={p95:.6f} shuffles={len(null)} exceeds={report.score > p95}")
    if args.out is not None:
        write_report_csv(report, args.out)
    return EXIT_OK


def _plot_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embeddings", required=True, type=Path)
    parser.add_argument("--color-by", default=ColorBy.CLUSTER.value, choices=[c.value for c in ColorBy])
    parser.add_argument("--out", required=True, type=Path, help="SVG file")


def _plot(args: argparse.Namespace) -> int:
    write_svg(EmbeddingTable.from_csv(args.embeddings), args.out, args.color_by)
    return EXIT_OK


# ── generation ──────────────────────────────────────────────────────────

def _sample_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, type=Path)
    parser.add_argument("--cluster", type=int, help="draw from one component instead of the mixture")
    parser.add_argument("--n", type=int, default=16)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, type=Path)


def _sample(args: argparse.Namespace) -> int:
    if args.n < 0:
        raise ContractViolation("--n must not be negative")
    model, _ = load_model(args.model)
    z = sample_prior(model.gmm, Rng(args.seed), args.n, args.cluster)
    fields = decode(model, z).mean.value.reshape(args.n, *model.field_shape)
    flowgen.save(args.out, _fields_dataset(np.full(args.n, np.nan), fields))
    return EXIT_OK


def _centroids_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path)


def _centroids(args: argparse.Namespace) -> int:
    model, _ = load_model(args.model)
    fields = decode_centroids(model).reshape(model.gmm.n_clusters, *model.field_shape)
    flowgen.save(args.out, _fields_dataset(np.full(model.gmm.n_clusters, np.nan), fields))
    return EXIT_OK


def _condgen_train_arguments(parser: argparse.ArgumentParser) -> None:
    defaults = CondConfig()
    parser.add_argument("--model", required=True, type=Path, help="trained GMVM model")
    parser.add_argument("--data", required=True, type=Path)
    parser.add_argument("--steps", type=int, default=defaults.steps)
    parser.add_argument("--lr", type=float, default=defaults.lr)
    parser.add_argument("--seed", type=int, default=defaults.seed)
    parser.add_argument("--out", required=True, type=Path, help="GMVM bundle with the conditional network")


def _condgen_train(args: argparse.Namespace) -> int:
    config = CondConfig(steps=args.steps, lr=args.lr, seed=args.seed)
    model, _ = load_model(args.model)
    mlp = train_cond(model, flowgen.load(args.data), config)
    save_bundle(args.out, model, mlp)
    return EXIT_OK


def _condgen_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, type=Path, help="bundle written by condgen-train")
    parser.add_argument("--re", required=True, type=float, nargs="+")
    parser.add_argument("--out", required=True, type=Path)


def _condgen(args: argparse.Namespace) -> int:
    model, mlp = load_bundle(args.model)
    fields = np.stack([generate_for_re(mlp, model, re) for re in args.re])
    flowgen.save(args.out, _fields_dataset(args.re, fields))
    return EXIT_OK


# ── sweep ───────────────────────────────────────────────────────────────

def _sweep_arguments(parser: argparse.ArgumentParser) -> None:
    _add_training_arguments(parser)
    parser.add_argument("--clusters", type=int, nargs="+", default=[4, 6, 8])
    parser.add_argument("--k", type=int, default=const.KNN_K)
    parser.add_argument("--alpha", type=float, default=const.ALPHA)
    parser.add_argument("--shuffles", type=int, default=100)
    parser.add_argument("--out", required=True, type=Path, help="sweep CSV")


def _sweep(args: argparse.Namespace) -> int:
    config = _train_config(args, args.clusters[0])
    results = cluster_sweep(flowgen.load(args.data), config, args.clusters, args.k, args.alpha, args.shuffles)
    write_sweep_csv(results, args.out)
    for clusters, result in results.items():
        print(f"clusters={clusters} score={result.score:.6f} null_p95={result.null_p95:.6f}")
    return EXIT_OK


COMMANDS: tuple[CommandDescription, ...] = (
    CommandDescription(
        key="gen-data",
        help="generate a synthetic Kovasznay dataset",
        add_arguments=_gen_data_arguments,
        handler=_gen_data,
    ),
    CommandDescription(
        key="train",
        help="train a GMVAE on a dataset",
        add_arguments=_train_arguments,
        handler=_train,
    ),
    CommandDescription(
        key="embed",
        help="write latent means, PCA coordinates and cluster labels",
        add_arguments=_embed_arguments,
        handler=_embed,
    ),
    CommandDescription(
        key="score",
        help="graph-spectral smoothness of a quantity over the embedding",
        add_arguments=_score_arguments,
        handler=_score,
    ),
    CommandDescription(
        key="sample",
        help="decode draws from the latent mixture",
        add_arguments=_sample_arguments,
        handler=_sample,
    ),
    CommandDescription(
        key="condgen-train",
        help="fit the Reynolds-number to latent network",
        add_arguments=_condgen_train_arguments,
        handler=_condgen_train,
    ),
    CommandDescription(
        key="condgen",
        help="generate fields for given Reynolds numbers",
        add_arguments=_condgen_arguments,
        handler=_condgen,
    ),
    CommandDescription(
        key="plot",
        help="SVG scatter of the PCA embedding",
        add_arguments=_plot_arguments,
        handler=_plot,
    ),
    CommandDescription(
        key="centroids",
        help="decode the cluster centres",
        add_arguments=_centroids_arguments,
        handler=_centroids,
    ),
    CommandDescription(
        key="sweep",
        help="repeat train + score for several cluster counts",
        add_arguments=_sweep_arguments,
        handler=_sweep,
    ),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=const.NAME, description="Gaussian-mixture VAE for parametric flow fields")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for description in COMMANDS:
        sub = commands.add_parser(description.key, help=description.help)
        description.add_arguments(sub)
        sub.set_defaults(handler=description.handler)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format=_LOG_FORMAT)
    logging.getLogger(const.NAME).setLevel(level)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    _configure_logging(args)

    try:
        return args.handler(args)
    except vol.Invalid as err:
        print(f"{parser.prog} {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FlowmixError as err:
        if isinstance(err.__cause__, vol.Invalid):
            print(f"{parser.prog} {args.command}: error: {err}", file=sys.stderr)
            return EXIT_USAGE
        _LOGGER.error("%s failed: %s", args.command, err)
        return EXIT_RUNTIME
    except OSError as err:
        _LOGGER.error("%s failed: %s", args.command, err)
        return EXIT_RUNTIME
