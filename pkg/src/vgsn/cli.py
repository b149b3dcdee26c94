"""Command-line interface: ``vgsn train|generate|bench|gradcheck|fixture``.

Failures exit nonzero with a single stderr line ``error: <category>: <detail>``.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .corpus import FILENAME_RE, CorpusError, PgmError, load_paired_corpus, read_pgm, write_pgm
from .estimator import GlyphTransfer
from .model import ConfigError, GridSpec, ModelConfig, default_config, forward, init_params
from .serialization import ModelFormatError
from .tensor import NonFiniteError, Rng, Tensor
from .training import TrainingDiverged, batch_loss, write_loss_csv

log = logging.getLogger("vgsn")

# Seconds per epoch at 256x256 on the original hardware; reported, never asserted.
REFERENCE_SECONDS = {
    ("vae", 4, "sgd"): 87, ("vae", 4, "adam"): 96, ("vae", 4, "rmsprop"): 95,
    ("vae", 8, "sgd"): 179, ("vae", 8, "adam"): 177, ("vae", 8, "rmsprop"): 175,
    ("vgsn", 4, "sgd"): 78, ("vgsn", 4, "adam"): 77, ("vgsn", 4, "rmsprop"): 74,
    ("vgsn", 8, "sgd"): 148, ("vgsn", 8, "adam"): 157, ("vgsn", 8, "rmsprop"): 154,
}  # fmt: skip
BENCH_COLUMNS = ["model", "grid", "optimizer", "epochs", "sec_per_epoch", "final_loss", "paper_ref_sec"]
GRADCHECK_TOLERANCE = 1e-4


class CliError(Exception):
    def __init__(self, category: str, detail: str):
        super().__init__(detail)
        self.category = category


def _load_corpus(args):
    corpus = load_paired_corpus(args.font_a, args.font_b)
    if corpus.image_size != args.image_size:
        raise CliError("config", f"corpus images are {corpus.image_size}px but --image-size is {args.image_size}")
    for cp, side in corpus.skipped:
        print(f"skipped U+{cp:04X}: only in font {side.upper()}", file=sys.stderr)
    return corpus


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    default_config(args.image_size, args.grid, kind=args.model, stages=args.stages)  # fail before loading data
    corpus = _load_corpus(args)
    est = GlyphTransfer(
        grid=args.grid,
        model=args.model,
        optimizer=args.optimizer,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        decoder_stages=args.stages,
        kl_weight=args.kl_weight,
    )
    est.fit_corpus(corpus)
    est.save(args.out)
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as fh:
            write_loss_csv(est.loss_curve_, fh, timing=args.timing)
    if est.loss_curve_:
        first, last = est.loss_curve_[0].mean_loss, est.loss_curve_[-1].mean_loss
        print(f"trained {args.epochs} epochs on {len(corpus)} pairs: loss {first:.6g} -> {last:.6g}")
    return 0


# ---------------------------------------------------------------- generate


def _inputs(path: Path):
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if FILENAME_RE.fullmatch(p.name))
        if not files:
            raise CliError("io", f"no U+XXXX.pgm files in {path}")
        return files
    if not path.exists():
        raise CliError("io", f"input {path} does not exist")
    return [path]


def cmd_generate(args) -> int:
    est = GlyphTransfer.load(args.model)
    src = Path(args.input)
    files = _inputs(src)
    images = np.stack([read_pgm(f) for f in files])
    if images.shape[1] != est.image_size_ or images.shape[2] != est.image_size_:
        raise CliError("config", f"input images are {images.shape[2]}x{images.shape[1]} but the model expects {est.image_size_}px")
    out = est.predict(images, stochastic=args.stochastic, random_state=args.seed)
    dest = Path(args.out)
    if src.is_dir():
        dest.mkdir(parents=True, exist_ok=True)
        targets = [dest / f.name for f in files]
    else:
        targets = [dest]
    for target, image in zip(targets, out):
        write_pgm(target, image)
    print(f"wrote {len(targets)} glyph(s) to {dest}")
    return 0


# ---------------------------------------------------------------- bench


def run_bench(corpus, epochs: int, seed: int, batch_size: int = 32, stages=None) -> list[dict]:
    rows = []
    for kind in ("vgsn", "vae"):
        for grid in (4, 8):
            for opt in ("sgd", "adam", "rmsprop"):
                est = GlyphTransfer(grid=grid, model=kind, optimizer=opt, epochs=epochs, batch_size=batch_size, seed=seed, decoder_stages=stages)
                est.fit_corpus(corpus)
                curve = est.loss_curve_
                rows.append(
                    {
                        "model": kind,
                        "grid": grid,
                        "optimizer": opt,
                        "epochs": epochs,
                        "sec_per_epoch": float(np.mean([r.wall_time_seconds for r in curve])),
                        "final_loss": curve[-1].mean_loss,
                        "paper_ref_sec": REFERENCE_SECONDS[(kind, grid, opt)],
                    }
                )
    return rows


def write_bench_csv(rows, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(BENCH_COLUMNS)
    for r in rows:
        writer.writerow(
            [r["model"], r["grid"], r["optimizer"], r["epochs"], f"{r['sec_per_epoch']:.9g}", f"{r['final_loss']:.9g}", r["paper_ref_sec"]]
        )


def format_bench_table(csv_text: str, image_size: int, n_pairs: int) -> str:
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    head = ["model", "grid", "optimizer", "epochs", "s/epoch", "final loss", "paper (256², reference hardware)"]
    body = [
        [r["model"], f"{r['grid']}x{r['grid']}", r["optimizer"], r["epochs"], f"{float(r['sec_per_epoch']):.4f}", f"{float(r['final_loss']):.5f}", f"{r['paper_ref_sec']} s"]
        for r in rows
    ]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    lines = [f"measured at {image_size}x{image_size}, {n_pairs} pairs; reference seconds come from the original 256x256 runs and are not asserted"]
    for row in [head] + body:
        lines.append("  ".join(str(x).ljust(w) for x, w in zip(row, widths)))
    return "\n".join(lines)


def cmd_bench(args) -> int:
    corpus = _load_corpus(args)
    rows = run_bench(corpus, args.epochs, args.seed, args.batch_size, args.stages)
    buf = io.StringIO()
    write_bench_csv(rows, buf)
    Path(args.out).write_text(buf.getvalue())
    print(format_bench_table(buf.getvalue(), args.image_size, len(corpus)))
    return 0


# ---------------------------------------------------------------- gradcheck


def gradcheck_config(image_size: int = 16, grid: int = 2, stages: int = 2) -> ModelConfig:
    """Narrow network so every element can be finite-differenced quickly."""
    depth = min(6, int(np.log2(image_size)))
    return ModelConfig(
        image_size=image_size,
        encoder_depth=depth,
        decoder_stages=stages,
        latent_dim=4,
        basis_dim=8,
        grid=GridSpec(grid, 4),
        encoder_channels=(4,) * (depth - 1) + (8,),
        decoder_channels=(4,) * stages,
    )


def run_gradcheck(image_size=16, grid=2, stages=2, seed=0, step=1e-6, batch=4, kind="vgsn"):
    """Finite-difference check of the full training loss; returns ``(max_error, per_group)``."""
    with T.precision("float64"):
        cfg = gradcheck_config(image_size, grid, stages)
        if kind != cfg.kind:
            cfg = cfg.as_vae()
        rng = Rng(seed)
        params = init_params(cfg, rng)
        # move off the init's exact zeros/ones so no ReLU input sits on its kink
        for name, t in params.named_parameters():
            if not name.endswith("kernel") and not name.endswith("weight"):
                base = 1.0 if name.endswith("gamma") else 0.0
                t.data = base + 0.1 * rng.normal(t.size).reshape(t.shape)
        x = rng.uniform(batch * image_size * image_size).reshape(batch, image_size, image_size, 1)
        eps = rng.normal(batch * cfg.latent_dim).reshape(batch, cfg.latent_dim)
        # targets near the current output keep the loss, and its round-off, small
        fitted = forward(params, Tensor(x), eps, "train").data
        y = fitted + 0.005 * rng.normal(fitted.size).reshape(fitted.shape)
        report: dict[str, float] = {}
        worst = T.grad_check(lambda: batch_loss(params, x, y, eps, "train"), params.parameters(), step, report)
    return worst, report


def cmd_gradcheck(args) -> int:
    worst, report = run_gradcheck(args.image_size, args.grid, args.stages, args.seed, args.step)
    print(f"max relative error {worst:.3e} over {len(report)} parameter groups (tolerance {GRADCHECK_TOLERANCE:g})")
    if worst < GRADCHECK_TOLERANCE:
        print("gradcheck: pass")
        return 0
    bad = [name for name, err in report.items() if not err < GRADCHECK_TOLERANCE]
    raise CliError("gradcheck", f"max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:g} in {', '.join(bad)}")


def cmd_fixture(args) -> int:
    from .fixtures import write_fixture

    dir_a, dir_b = write_fixture(args.outdir, args.size)
    print(f"wrote {dir_a} and {dir_b}")
    return 0


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vgsn", description="Variational grid setting network for glyph generation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def corpus_flags(p):
        p.add_argument("--font-a", required=True, help="directory of source-font U+XXXX.pgm glyphs")
        p.add_argument("--font-b", required=True, help="directory of target-font U+XXXX.pgm glyphs")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--stages", type=int, default=None, help="decoder stages (default min(5, log2(size/grid)))")

    p = sub.add_parser("train", help="train on paired glyphs")
    corpus_flags(p)
    p.add_argument("--grid", type=int, default=4)
    p.add_argument("--model", choices=["vgsn", "vae"], default="vgsn")
    p.add_argument("--optimizer", choices=["sgd", "adam", "rmsprop"], default="adam")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--kl-weight", type=float, default=0.0)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds in the loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate target-font glyphs")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="a PGM file or a directory of U+XXXX.pgm files")
    p.add_argument("--out", required=True)
    p.add_argument("--stochastic", action="store_true", help="sample the latent instead of using its mean")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="time VGSN vs VAE over grids and optimizers")
    corpus_flags(p)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--out", required=True, help="CSV report")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of backpropagation")
    p.add_argument("--image-size", type=int, default=16)
    p.add_argument("--grid", type=int, default=2)
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fixture", help="write the synthetic two-font glyph corpus")
    p.add_argument("outdir")
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(func=cmd_fixture)
    return parser


_CATEGORIES = (
    (ConfigError, "config"),
    (CorpusError, "corpus"),
    (PgmError, "corpus"),
    (TrainingDiverged, "training"),
    (NonFiniteError, "training"),
    (OSError, "io"),
    (ValueError, "config"),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        category, detail = exc.category, str(exc)
    except ModelFormatError as exc:
        category, detail = f"model:{exc.category}", str(exc)
    except Exception as exc:
        for cls, name in _CATEGORIES:
            if isinstance(exc, cls):
                category, detail = name, str(exc)
                break
        else:
            raise
    print(f"error: {category}: {detail}".replace("\n", " "), file=sys.stderr)
    return 2 if category == "config" else 1


if __name__ == "__main__":
    sys.exit(main())
