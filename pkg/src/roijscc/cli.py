"""Command line: ``roijscc {train,evaluate,ablate,render}``."""
from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

from roijscc import data
from roijscc.channel import bandwidth_for_cpp, parse_snr
from roijscc.config import load_config
from roijscc.errors import ConfigError, DivergenceError, DomainError, ProtocolError

log = logging.getLogger("roijscc")

EXIT_CODES = {ConfigError: 2, DomainError: 2, ProtocolError: 3, DivergenceError: 4}


def _floats(text: str) -> list[float]:
    return [parse_snr(t) for t in text.split(",") if t.strip()]


def _cpps(text: str) -> list[str]:
    out = []
    for t in text.split(","):
        t = t.strip()
        if t:
            try:
                out.append(str(Fraction(t)))
            except ValueError as exc:
                raise ConfigError(f"bad CPP value {t!r}") from exc
    return out


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def cmd_train(args) -> None:
    from roijscc.train import train

    cfg = load_config(args.config)
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = cfg.with_variant(cfg.variant, **overrides)
    result = train(cfg, resume=args.resume)
    last = result.history[-1] if result.history else float("nan")
    print(f"trained {cfg.variant}: {len(result.history)} steps, final loss {last:.5f}, checkpoint {result.checkpoint}")


def cmd_evaluate(args) -> None:
    from roijscc.evaluate import Evaluated, evaluate_models, evaluation_images, plot_results
    from roijscc.train import load_checkpoint

    models = []
    for i, path in enumerate(args.checkpoint):
        model, cfg, _ = load_checkpoint(path)
        name = cfg.variant if len(args.checkpoint) == 1 else f"{cfg.variant}#{i}"
        models.append(Evaluated(name, model, cfg))
    images = evaluation_images(models[0].cfg, root=args.data, limit=args.limit)
    if not images:
        raise ConfigError("no evaluation images")
    snrs = _floats(args.snr) if args.snr else [models[0].cfg.snr_db]
    cpps = _cpps(args.cpp) if args.cpp else [models[0].cfg.cpp]
    table = evaluate_models(models, images, snrs, cpps, seed=args.seed, gamma_draws=args.gamma_draws)
    paths = table.write(args.out)
    plot_results(table, Path(args.out) / "psnr_vs_snr.png")
    for c in table.cells():
        print(f"{c.variant:>18s}  SNR {c.snr_db:>6.1f} dB  CPP {c.cpp:>6s}  "
              f"PSNR_ROI {c.psnr_roi:7.3f}  PSNR_Avg {c.psnr_avg:7.3f}  (n={c.n})")
    print("wrote", ", ".join(str(p) for p in paths))


def cmd_ablate(args) -> None:
    from roijscc.evaluate import ablate

    cfg = load_config(args.config)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = _ints(args.seeds)
    out = args.out or str(Path(cfg.out_dir) / "ablation")
    snrs = _floats(args.snr) if args.snr else None
    cpps = _cpps(args.cpp) if args.cpp else None
    result = ablate(cfg, variants, seeds, out, snrs=snrs, cpps=cpps, eval_limit=args.limit)
    for v in variants:
        print(f"{v:>18s}  PSNR_ROI {result.mean(v):7.3f}  PSNR_Avg {result.mean(v, 'psnr_avg'):7.3f}")
    print("wrote", Path(out) / "ablation.csv")


def cmd_render(args) -> None:
    from roijscc.metrics import region_psnr
    from roijscc.pipeline import transmit
    from roijscc.train import link_settings, load_checkpoint

    gamma = np.array([_ints(args.gamma)])
    if gamma.shape != (1, 2):
        raise ConfigError("--gamma takes two integers, e.g. 2,2")
    img = data.read_image(args.image)
    recons, labels = [], []
    for path in args.checkpoint:
        model, cfg, _ = load_checkpoint(path)
        model.eval()
        grid = cfg.model.grid
        snr = parse_snr(args.snr) if args.snr else cfg.snr_db
        link = link_settings(cfg, img.shape[1], img.shape[2])
        if args.cpp:
            k = bandwidth_for_cpp(Fraction(args.cpp), img.shape[1], img.shape[2])
            link = type(link)(k, link.tau, link.adaptive, link.power)
        gen = torch.Generator().manual_seed(args.seed)
        with torch.no_grad():
            x_hat = transmit(model, torch.from_numpy(img)[None], gamma, link, snr, gen).x_hat[0].numpy()
        roi, avg = region_psnr(img, x_hat, gamma[0], grid)
        recons.append(x_hat)
        labels.append(f"{cfg.variant} ROI {roi:.2f}dB")
    out = data.render_panel(args.out, img, recons, gamma[0], grid, labels)
    print("wrote", out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roijscc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one variant from a YAML config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", type=int)
    t.add_argument("--out", help="override out_dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="region-wise PSNR over an (SNR, CPP) grid")
    e.add_argument("--checkpoint", action="append", required=True,
                   help="repeat to evaluate several models on paired draws")
    e.add_argument("--snr", help="comma list in dB; 'inf' is the noiseless channel")
    e.add_argument("--cpp", help="comma list such as 1/12,1/24")
    e.add_argument("--out", required=True)
    e.add_argument("--data", help="dataset root (<root>/<split>/*.png); default: the checkpoint's val set")
    e.add_argument("--limit", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--gamma-draws", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="train and compare ablation variants")
    a.add_argument("--config", required=True)
    a.add_argument("--variants", required=True,
                   help="comma list of variant names or '+'-joined flags "
                        "(mask_injection, split_processing, roi_loss, roi_bandwidth)")
    a.add_argument("--seeds", default="0")
    a.add_argument("--out")
    a.add_argument("--snr")
    a.add_argument("--cpp")
    a.add_argument("--limit", type=int)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("render", help="side-by-side reconstruction panel with the ROI outlined")
    r.add_argument("--checkpoint", action="append", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--gamma", required=True, help="1-based ROI row,col, e.g. 2,2")
    r.add_argument("--snr")
    r.add_argument("--cpp")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="panel.png")
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except tuple(EXIT_CODES) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODES[type(exc)]
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
