"""Command-line pipeline: extract, train, generate, caption, export.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
An optional JSON config file mirrors all flags; COVERFORGE_CACHE
overrides the feature-cache directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


def _cache_dir(args):
    env = os.environ.get("COVERFORGE_CACHE")
    return Path(args.cache or env or "feature-cache")


def cmd_extract(args):
    from .dataset import DataError, ingest, extract_track_features
    in_dir = Path(args.in_dir)
    cache_dir = Path(args.out)
    try:
        if (in_dir / "labels.csv").exists():
            manifest, stats, hits = ingest(in_dir, cache_dir, args.nfft, args.hop)
            print(f"ingested {len(manifest.entries)} tracks "
                  f"({hits} cache hits) -> {cache_dir}")
        else:
            cache_dir.mkdir(parents=True, exist_ok=True)
            wavs = sorted(in_dir.glob("*.wav"))
            if not wavs:
                raise DataError([f"no labels.csv and no .wav files in {in_dir}"])
            for wav in wavs:
                feats = extract_track_features(wav, args.nfft, args.hop)
                out = cache_dir / f"{wav.stem}.json"
                with open(out, "w") as f:
                    json.dump({"track_id": wav.stem, "sample_rate": 44100,
                               "fragments": [x.to_dict() for x in feats]}, f)
                print(f"extracted {wav.name}: {len(feats)} fragments")
    except DataError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_train(args):
    from . import gan, nn
    from .dataset import DataError, build_training_arrays, ingest
    cache_dir = _cache_dir(args)
    try:
        manifest, stats, _ = ingest(args.data, cache_dir)
        dataset = build_training_arrays(manifest, cache_dir, args.canvas)
    except DataError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_DATA
    cfg = gan.TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                          critic_steps=args.d_steps, canvas_size=args.canvas,
                          seed=args.seed, spp=args.spp)
    rng = np.random.default_rng(cfg.seed)
    state = gan.build_models(cfg, dataset[1].shape[1], rng)
    log_path = Path(args.out).with_suffix(".log.csv")
    try:
        if args.epochs > 0:
            state = gan.train(dataset, cfg, state, log_path=log_path,
                              progress=lambda e, r: print(
                                  f"epoch {e}: w={r.wasserstein:.4f} gp={r.gp:.4f} "
                                  f"l2={r.secondary:.4f} g={r.g_loss:.4f}") if r else None)
    except FloatingPointError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    nn.save_checkpoint(args.out, {"g": state.generator, "d": state.discriminator},
                       {"g": state.g_opt, "d": state.d_opt},
                       meta={"embedding_dim": dataset[1].shape[1],
                             "canvas": args.canvas})
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _load_generator(checkpoint, embedding_dim):
    from . import gan, nn
    rng = np.random.default_rng(0)
    g = gan.Generator(gan.GeneratorConfig(embedding_dim=embedding_dim), rng)
    if checkpoint:
        with np.load(checkpoint) as z:
            dim = int(z["meta.embedding_dim"])
            canvas = int(z["meta.canvas"]) if "meta.canvas" in z else 128
        if dim != embedding_dim:
            raise ValueError(f"checkpoint embedding dim {dim} != features {embedding_dim}")
        d = gan.Discriminator(canvas, embedding_dim, rng)
        try:
            nn.load_checkpoint(checkpoint, {"g": g, "d": d})
        except KeyError:
            nn.load_checkpoint(checkpoint, {"g": g})
    return g


def cmd_generate(args):
    from .audio import NormStats, encode_emotions, track_condition
    from .caption.fonts import FontMetrics
    from .dataset import extract_track_features
    from .gan import generate_cover
    from .svg_io import to_svg
    cache_dir = _cache_dir(args)
    try:
        emotions = encode_emotions([e for e in args.emotions.split(",") if e])
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        feats = extract_track_features(args.track)
    except Exception as exc:
        print(f"error: cannot read {args.track}: {exc}", file=sys.stderr)
        return EXIT_DATA
    stats_path = Path(args.norm) if args.norm else cache_dir / "norm_stats.json"
    if stats_path.exists():
        stats = NormStats.load(stats_path)
    else:
        from .dataset import normalize_over
        _, stats = normalize_over([f.to_vector() for f in feats])
    cond = track_condition(feats, stats, emotions)
    try:
        g = _load_generator(args.checkpoint, len(cond.audio_embedding))
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    scene = generate_cover(g, cond, args.seed)
    layout = texts = None
    if args.artist or args.title:
        layout = _caption_scene(scene, args.caption_checkpoint, args.seed)
        texts = (args.artist or "", args.title or "")
    svg = to_svg(scene, layout, texts, metrics=FontMetrics())
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


def _caption_scene(scene, checkpoint, seed):
    from . import nn
    from .caption.model import CaptionNet, caption_forward, prepare_input
    from .raster import render
    img = render(scene, 256)
    net = CaptionNet(np.random.default_rng(seed))
    if checkpoint:
        nn.load_checkpoint(checkpoint, {"caption": net})
    return caption_forward(net, prepare_input(img))


def cmd_caption(args):
    from .caption.fonts import FontMetrics, fit_font_size
    from .dataset import load_cover
    from .svg_io import parse_svg, SvgParseError
    from .raster import render
    path = Path(args.cover)
    try:
        if path.suffix.lower() == ".svg":
            scene = parse_svg(path.read_text())
            img = render(scene, 256)
        else:
            img = load_cover(path, 256)
    except (SvgParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    from .caption.model import CaptionNet, caption_forward, prepare_input
    from . import nn
    net = CaptionNet(np.random.default_rng(0))
    if args.checkpoint:
        nn.load_checkpoint(args.checkpoint, {"caption": net})
    layout = caption_forward(net, prepare_input(img))
    metrics = FontMetrics()
    artist_size, _ = fit_font_size(layout.artist_box, args.artist, metrics)
    title_size, _ = fit_font_size(layout.title_box, args.title, metrics)
    out = layout.to_dict()
    out["font_size"] = {"artist": artist_size, "title": title_size}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_export(args):
    from .scene import scene_from_dict
    from .svg_io import export_raster, to_svg
    try:
        with open(args.scene) as f:
            scene = scene_from_dict(json.load(f))
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: cannot load scene: {exc}", file=sys.stderr)
        return EXIT_DATA
    if args.svg:
        Path(args.svg).write_text(to_svg(scene))
        print(f"wrote {args.svg}")
    if args.png:
        export_raster(scene, args.size, args.png)
        print(f"wrote {args.png}")
    return EXIT_OK


def cmd_train_captioner(args):
    from . import nn
    from .caption.model import caption_train, synthetic_layout_dataset
    rng = np.random.default_rng(args.seed)
    inputs, targets = synthetic_layout_dataset(args.n_items, rng, size=args.size)
    try:
        result = caption_train(inputs, targets, epochs=args.epochs, lr=args.lr,
                               seed=args.seed,
                               progress=lambda e, g, c: print(
                                   f"epoch {e}: giou={g:.3f} color_mse={c:.5f}"))
    except FloatingPointError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    nn.save_checkpoint(args.out, {"caption": result.model},
                       meta={"input_size": args.size})
    print(f"checkpoint written to {args.out}; "
          f"final giou={result.giou_history[-1]:.3f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coverforge",
        description="Music-conditioned vector cover generation pipeline")
    parser.add_argument("--config", help="JSON file with default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract and cache audio features")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nfft", type=int, default=None)
    p.add_argument("--hop", type=int, default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the cover GAN")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--d-steps", type=int, default=5)
    p.add_argument("--canvas", type=int, default=128)
    p.add_argument("--spp", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache", default=None)
    p.add_argument("--out", default="covergan.npz")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate a cover for a track")
    p.add_argument("--track", required=True)
    p.add_argument("--emotions", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--caption-checkpoint", default=None)
    p.add_argument("--norm", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--artist", default=None)
    p.add_argument("--title", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("caption", help="predict caption layout for a cover")
    p.add_argument("--cover", required=True)
    p.add_argument("--artist", required=True)
    p.add_argument("--title", required=True)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("export", help="export a scene JSON to SVG/PNG")
    p.add_argument("--scene", required=True)
    p.add_argument("--svg", default=None)
    p.add_argument("--png", default=None)
    p.add_argument("--size", type=int, default=3000)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("train-captioner", help="train the caption layout network")
    p.add_argument("--out", default="captioner.npz")
    p.add_argument("--epochs", type=int, default=138)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--n-items", type=int, default=20)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_captioner)
    parser.subparser_map = dict(sub.choices)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if args.config:
        try:
            with open(args.config) as f:
                defaults = json.load(f)
        except (OSError, ValueError) as exc:
            print(f"error: bad config: {exc}", file=sys.stderr)
            return EXIT_USAGE
        sub = parser.subparser_map[args.command]
        for key, value in defaults.items():
            attr = key.replace("-", "_")
            # config supplies defaults; explicit flags still win
            if hasattr(args, attr) and sub.get_default(attr) == getattr(args, attr):
                setattr(args, attr, value)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
