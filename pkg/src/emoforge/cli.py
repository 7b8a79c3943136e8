"""Command-line entry points for every pipeline stage.

    emoforge make-fixtures --out work --seed 0
    emoforge attribute     --config work/config.yaml --out work/artifacts
    emoforge build-dataset --config work/config.yaml --out work/artifacts
    emoforge train         --config work/config.yaml --out work/artifacts --steps 200
    emoforge edit          --config work/config.yaml --out work/artifacts \
                           --image photo.png --emotion sadness --image-guidance 1.5
    emoforge evaluate      --config work/config.yaml --out work/artifacts
    emoforge review-serve  --config work/config.yaml --out work/artifacts --port 8765

Exit codes: 0 success, 1 runtime failure, 2 usage, 3 missing upstream
artifact (stage dependency).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from emoforge.labels import EMOTIONS, Emotion

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_STAGE_DEPENDENCY = 3

TREES_DIR = "trees"
DATASET_DIR = "dataset"
TRAIN_DIR = "train"
EDITS_DIR = "edits"
EVAL_DIR = "eval"
CHECKPOINT_NAME = "checkpoint.ckpt"


class StageDependencyError(RuntimeError):
    pass


def _load_config(args) -> "PipelineConfig":
    from emoforge.config import PipelineConfig

    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg.with_seed(args.seed)
    return cfg


def _suite(cfg):
    from emoforge.providers.registry import build_suite

    return build_suite(cfg.providers, d=cfg.embed_dim, seed=cfg.provider_seed)


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise StageDependencyError(
            f"missing upstream artifact {path}; run `emoforge {hint}` first"
        )
    return path


# --- commands ---------------------------------------------------------------


def cmd_make_fixtures(args) -> int:
    from emoforge import fixtures

    out = Path(args.out)
    seed = args.seed if args.seed is not None else 0
    fixtures.make_corpus(out / "corpus", seed, per_emotion=args.per_emotion)
    fixtures.make_sources(out / "sources", seed, count=args.sources)
    config = {
        "corpus_dir": "corpus",
        "sources_dir": "sources",
        "embed_dim": 32,
        "provider_seed": seed,
        "attribution": {"k": 2, "min_size": 2, "sim_cap": 0.999,
                        "emo_floor": 0.35},
        "n_candidates": 4,
        "auto_accept": True,
        "train": {"seed": seed},
    }
    import yaml

    (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=True),
                                     encoding="utf-8")
    print(f"fixture corpus, sources and config written under {out}")
    return EXIT_OK


def cmd_attribute(args) -> int:
    from emoforge.attribution import build_factor_tree, save_tree
    from emoforge.providers.images import load_png
    from emoforge.seeding import derive_seed

    cfg = _load_config(args)
    suite = _suite(cfg)
    corpus = Path(cfg.corpus_dir)
    _require(corpus, "make-fixtures (or point corpus_dir at a labeled corpus)")
    out = Path(args.out) / TREES_DIR
    empty: list[str] = []
    for emotion in EMOTIONS:
        emotion_dir = corpus / emotion.value
        images = [
            load_png(p) for p in sorted(emotion_dir.glob("*.png"))
        ] if emotion_dir.exists() else []
        tree = build_factor_tree(
            emotion, images, suite, cfg.attribution,
            derive_seed(cfg.provider_seed, "attribute", emotion.value),
        )
        save_tree(tree, out / f"{emotion.value}.json")
        print(f"{emotion.value}: {tree.n_factors} factors "
              f"({len(images)} corpus images)")
        if tree.is_empty:
            empty.append(emotion.value)
    if empty:
        print(f"error: empty factor trees for {', '.join(empty)}",
              file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _load_trees(out_root: Path) -> dict:
    from emoforge.attribution import load_tree

    trees_dir = _require(out_root / TREES_DIR, "attribute")
    trees = {}
    for emotion in EMOTIONS:
        path = trees_dir / f"{emotion.value}.json"
        if path.exists():
            trees[emotion] = load_tree(path)
    if not trees:
        raise StageDependencyError(f"no factor trees under {trees_dir}")
    return trees


def cmd_build_dataset(args) -> int:
    from emoforge.dataset import build_pairs, dataset_stats
    from emoforge.providers.images import load_png
    from emoforge.providers.images import SourceTag

    cfg = _load_config(args)
    suite = _suite(cfg)
    out_root = Path(args.out)
    trees = _load_trees(out_root)
    sources_dir = _require(Path(cfg.sources_dir), "make-fixtures")
    sources = [
        load_png(p, source_tag=SourceTag.COLLECTION_A)
        for p in sorted(sources_dir.glob("*.png"))
    ]
    if not sources:
        raise StageDependencyError(f"no source images under {sources_dir}")
    manifest = build_pairs(
        sources, trees, suite, out_root / DATASET_DIR,
        n_candidates=cfg.n_candidates,
        seed=cfg.provider_seed,
        auto_accept=args.auto_accept or cfg.auto_accept,
        templates=cfg.templates,
        image_guidance_scale=cfg.image_guidance_scale,
        conditioning_scale=cfg.conditioning_scale,
    )
    stats = dataset_stats(manifest)
    print(json.dumps(stats, indent=2))
    if manifest.unreviewed:
        print("note: manifest auto-accepted (watermarked unreviewed); "
              "use review-serve for real curation")
    return EXIT_OK


def cmd_train(args) -> int:
    from emoforge.dataset import load_manifest
    from emoforge.training import (
        ToyDenoiser, prepare_training_set, run_training, save_checkpoint,
    )
    from emoforge.seeding import derive_seed

    cfg = _load_config(args)
    suite = _suite(cfg)
    out_root = Path(args.out)
    dataset_dir = _require(out_root / DATASET_DIR, "build-dataset")
    manifest = load_manifest(dataset_dir)
    examples = prepare_training_set(manifest, suite)
    if not examples:
        print("error: manifest holds no accepted pairs (review them first?)",
              file=sys.stderr)
        return EXIT_STAGE_DEPENDENCY
    train_dir = out_root / TRAIN_DIR
    log_path = train_dir / "train_log.mjson"
    if log_path.exists():
        log_path.unlink()
    tcfg = cfg.train
    sched = tcfg.schedule()
    denoiser = ToyDenoiser(cfg.adapter.d_model, sched,
                           derive_seed(tcfg.seed, "denoiser"))
    state = run_training(examples, cfg.adapter, tcfg, args.steps,
                         denoiser=denoiser, log_path=log_path)
    ckpt = save_checkpoint(state, train_dir / CHECKPOINT_NAME)
    first_ldm, first_ins = state.loss_history[0][1:]
    last_ldm, last_ins = state.loss_history[-1][1:]
    lam = state.lambda_ins
    print(f"trained {args.steps} steps on {len(examples)} pairs")
    print(f"combined loss: {first_ldm + lam * first_ins:.4f} -> "
          f"{last_ldm + lam * last_ins:.4f}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_edit(args) -> int:
    from emoforge.editing import guidance_sweep
    from emoforge.providers.images import load_png, save_png
    from emoforge.training import load_checkpoint

    cfg = _load_config(args)
    suite = _suite(cfg)
    out_root = Path(args.out)
    trees = _load_trees(out_root)
    ckpt_path = _require(out_root / TRAIN_DIR / CHECKPOINT_NAME, "train")
    state = load_checkpoint(ckpt_path)
    emotion = Emotion.from_name(args.emotion)
    tree = trees.get(emotion)
    if tree is None or tree.is_empty:
        raise StageDependencyError(f"no factor tree for {emotion.value}")
    image = load_png(args.image)
    scales = args.image_guidance or [cfg.image_guidance_scale]
    results = guidance_sweep(
        image, emotion, state.adapter, tree, suite, scales,
        conditioning_scale=args.conditioning_scale or cfg.conditioning_scale,
    )
    edits_dir = out_root / EDITS_DIR / Path(args.image).stem
    lines = [json.dumps({"kind": "emoforge-edits", "image": str(args.image),
                         "emotion": emotion.value})]
    for res in results:
        name = f"{emotion.value}-sI{res.image_guidance_scale:g}.png"
        save_png(res.image, edits_dir / name)
        lines.append(json.dumps({
            "kind": "edit",
            "id": f"{Path(args.image).stem}-{emotion.value}"
                  f"-sI{res.image_guidance_scale:g}",
            "emotion": emotion.value,
            "source_png": str(args.image),
            "edited_png": str(edits_dir / name),
            "instruction": res.instruction,
            "image_guidance_scale": res.image_guidance_scale,
            "conditioning_scale": res.conditioning_scale,
        }))
        print(f"{name}: {res.instruction!r}")
    (edits_dir / "edits.mjson").write_text("\n".join(lines) + "\n",
                                           encoding="utf-8")
    return EXIT_OK


def _pairs_from_edits(edits_path: Path) -> list:
    from emoforge.evaluation import EvalPair
    from emoforge.providers.images import load_png

    pairs = []
    with edits_path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            if data.get("kind") != "edit":
                continue
            pairs.append(
                EvalPair(
                    pair_id=data["id"],
                    emotion=Emotion.from_name(data["emotion"]),
                    source=load_png(data["source_png"]),
                    edited=load_png(data["edited_png"]),
                )
            )
    return pairs


def cmd_evaluate(args) -> int:
    from emoforge.evaluation import (
        EvalPair, evaluate_pairs, render_table, save_report,
    )

    cfg = _load_config(args)
    suite = _suite(cfg)
    out_root = Path(args.out)
    if args.edits:
        pairs = _pairs_from_edits(_require(Path(args.edits), "edit"))
        label = "emoforge-edits"
    else:
        from emoforge.dataset import load_manifest

        dataset_dir = _require(out_root / DATASET_DIR, "build-dataset")
        manifest = load_manifest(dataset_dir)
        pairs = [
            EvalPair(
                pair_id=rec.target_id,
                emotion=rec.emotion,
                source=manifest.load_image(rec.source_id),
                edited=manifest.load_image(rec.target_id),
            )
            for rec in manifest.accepted()
        ]
        label = "emoforge-dataset"
    report = evaluate_pairs(pairs, suite)
    eval_dir = out_root / EVAL_DIR
    save_report(report, eval_dir / "report.mjson")
    table = render_table(report, label=label)
    (eval_dir / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_review_serve(args) -> int:
    from emoforge.dataset import load_manifest
    from emoforge.review import serve

    cfg = _load_config(args)
    out_root = Path(args.out)
    dataset_dir = _require(out_root / DATASET_DIR, "build-dataset")
    manifest = load_manifest(dataset_dir)
    ui_dir = Path(args.ui_dir) if args.ui_dir else None
    print(f"serving {len(manifest.pending())} pending pairs "
          f"on http://{args.host}:{args.port}")
    serve(manifest, args.port, host=args.host, ui_dir=ui_dir)
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emoforge",
        description="emotion-conditioned image editing pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="pipeline config YAML")
        p.add_argument("--seed", type=int, default=None,
                       help="root seed override")
        p.add_argument("--out", default="artifacts",
                       help="artifact directory (default: ./artifacts)")

    p = sub.add_parser("make-fixtures",
                       help="generate a synthetic corpus, sources and config")
    p.add_argument("--out", default="work")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-emotion", type=int, default=5)
    p.add_argument("--sources", type=int, default=12)
    p.set_defaults(func=cmd_make_fixtures)

    p = sub.add_parser("attribute", help="build per-emotion factor trees")
    common(p)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("build-dataset",
                       help="generate, gate and queue source-emotion-target pairs")
    common(p)
    p.add_argument("--auto-accept", action="store_true",
                   help="skip manual review (synthetic runs only; watermarks "
                        "the manifest as unreviewed)")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train the emotion adapter")
    common(p)
    p.add_argument("--steps", type=int, default=200)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", help="edit an image toward an emotion")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--emotion", required=True)
    p.add_argument("--image-guidance", type=float, nargs="*", default=None,
                   help="one output per scale, e.g. --image-guidance 2.0 1.5 1.0")
    p.add_argument("--conditioning-scale", type=float, default=None)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("evaluate", help="run the metric battery")
    common(p)
    p.add_argument("--edits", default=None,
                   help="evaluate an edits.mjson instead of the dataset")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("review-serve", help="HTTP review service")
    common(p)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", default=None,
                   help="static frontend build to serve at /")
    p.set_defaults(func=cmd_review_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    from emoforge.config import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageDependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_DEPENDENCY
    except Exception as exc:  # surface a clean one-liner, not a traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
