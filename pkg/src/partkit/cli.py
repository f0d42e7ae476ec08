"""Command-line entry points.

    partkit sprites   --out DIR --n 64 --seed 0
    partkit discover  --images DIR --parts M --variants K --seed S --out DICT
    partkit train     --dict DICT --images DIR --config CFG --out CKPT
    partkit generate  --ckpt CKPT --compose "0:1,1:2,..." --style "..." --seed N --out PNG
    partkit evaluate  --ckpt CKPT --dict DICT --images DIR --protocol {recon,comp}
                      --mix N --samples N --report out.json
    partkit sweep     --dict DICT --images DIR --config CFG --report out.json
    partkit serve     --dict DICT [--ckpt CKPT | --stub] --state-dir DIR
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import InputError, PartkitError


def _load_images(images_dir) -> list[tuple[str, "object"]]:
    from .features import load_image

    images_dir = Path(images_dir)
    paths = sorted(p for p in images_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not paths:
        raise InputError(f"no images found in {images_dir}")
    return [(p.stem, load_image(p)) for p in paths]


def cmd_sprites(args) -> int:
    from .sprites import make_corpus, save_corpus

    corpus = make_corpus(args.n, args.seed, correlated_prob=args.correlated)
    manifest = save_corpus(corpus, args.out)
    print(f"wrote {args.n} sprites and {manifest}")
    return 0


def cmd_discover(args) -> int:
    from .dictionary import ImageTag, PartDictionary, save_dictionary
    from .features import extract_features, get_extractor
    from .hierarchy import fit_hierarchy
    from .tagging import tag_features

    extractor = get_extractor(args.extractor, args.input_resolution, args.patch_size)
    images = _load_images(args.images)
    grids = [extract_features(image, extractor, image_id)
             for image_id, image in images]
    hierarchy = fit_hierarchy(grids, args.parts, args.variants, args.seed,
                              extractor.spec)
    grid_res = (args.grid_resolution, args.grid_resolution)
    tags = {}
    for grid in grids:
        comp, masks = tag_features(grid, hierarchy, grid_res)
        tags[grid.source_image_id] = ImageTag(comp, masks)
    path = save_dictionary(PartDictionary(hierarchy, tags), args.out)
    print(f"discovered M={args.parts} K={args.variants} over {len(images)} images")
    print(f"dictionary written to {path}")
    return 0


def _tagged_corpus_from_dictionary(dictionary, images_dir, grid_resolution=(16, 16)):
    from .training import TaggedExample

    images = dict(_load_images(images_dir))
    corpus = []
    for image_id, tag in sorted(dictionary.tags.items()):
        if image_id not in images:
            continue
        if tag.masks is None:
            raise InputError(f"dictionary entry {image_id} has no masks")
        corpus.append(TaggedExample(images[image_id], tag.composition,
                                    tag.masks, image_id))
    if not corpus:
        raise InputError("no dictionary-tagged images found under --images")
    return corpus


def cmd_train(args) -> int:
    from .backend import ToyBackend, ToyBackendConfig
    from .dictionary import load_dictionary
    from .training import TrainingConfig, train

    dictionary = load_dictionary(args.dict)
    config = TrainingConfig.from_json(args.config) if args.config \
        else TrainingConfig()
    if args.max_steps is not None:
        config.max_steps = args.max_steps
    corpus = _tagged_corpus_from_dictionary(dictionary, args.images,
                                            tuple(config.attn_resolution))
    backend = None
    if args.backend == "toy":
        backend = ToyBackend(ToyBackendConfig(
            image_size=config.image_resolution, seed=config.seed))
    out_dir = Path(args.out)
    state = train(corpus, dictionary.hierarchy, config, backend=backend,
                  out_dir=out_dir)
    print(f"trained {state.step} steps; final ldm={state.log[-1]['ldm']:.4f} "
          f"attn={state.log[-1]['attn']:.4f}")
    print(f"checkpoint written to {out_dir / 'final.pt'} "
          f"(id {state.checkpoint_id})")
    return 0


def cmd_generate(args) -> int:
    from .generation import GenerationRequest, generate, save_generation
    from .parts import PartComposition
    from .training import load_state

    state = load_state(args.ckpt)
    composition = PartComposition.from_spec_string(args.compose)
    request = GenerationRequest(composition, style_suffix=args.style,
                                seed=args.seed, steps=args.steps,
                                guidance=args.guidance)
    image, provenance = generate(request, state)
    out = save_generation(image, provenance, args.out)
    print(f"wrote {out} (checkpoint {provenance.checkpoint_id})")
    return 0


def cmd_evaluate(args) -> int:
    from .dictionary import load_dictionary
    from .evaluation import eval_composition, eval_reconstruction
    from .training import load_state

    dictionary = load_dictionary(args.dict)
    state = load_state(args.ckpt)
    corpus = _tagged_corpus_from_dictionary(dictionary, args.images)
    if args.protocol == "recon":
        report = eval_reconstruction(corpus, state, dictionary.hierarchy,
                                     args.samples, seed=args.seed,
                                     steps=args.steps, guidance=args.guidance)
    else:
        report = eval_composition(corpus, state, dictionary.hierarchy,
                                  args.samples, parts_mixed=args.mix,
                                  seed=args.seed, steps=args.steps,
                                  guidance=args.guidance)
    report.save(args.report)
    print(f"{report.protocol}: EMR={report.emr:.3f} CoSim={report.cosim:.3f} "
          f"over {report.n_samples} samples")
    print(f"report written to {args.report}")
    return 0


def cmd_sweep(args) -> int:
    from .dictionary import load_dictionary
    from .evaluation import DEFAULT_LAMBDA_SWEEP, lambda_sweep, render_sweep_table
    from .training import TrainingConfig

    dictionary = load_dictionary(args.dict)
    config = TrainingConfig.from_json(args.config) if args.config \
        else TrainingConfig()
    if args.max_steps is not None:
        config.max_steps = args.max_steps
    corpus = _tagged_corpus_from_dictionary(dictionary, args.images,
                                            tuple(config.attn_resolution))
    lambdas = [float(v) for v in args.lambdas.split(",")] if args.lambdas \
        else list(DEFAULT_LAMBDA_SWEEP)
    holdout = max(4, len(corpus) // 4)
    sweep = lambda_sweep(corpus[:-holdout], corpus[-holdout:],
                         dictionary.hierarchy, config, lambdas,
                         n_eval=min(args.samples, holdout), eval_seed=args.seed)
    Path(args.report).write_text(json.dumps(sweep, indent=2))
    print(render_sweep_table(sweep))
    print(f"report written to {args.report}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceSettings, create_app

    settings = ServiceSettings(
        dictionary_path=args.dict,
        checkpoint_path=args.ckpt,
        images_dir=args.images,
        state_dir=args.state_dir,
        stub=args.stub,
        ui_dir=args.ui_dir,
    )
    app = create_app(settings)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partkit",
                                     description="part-level concept toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sprites", help="emit a procedural toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--correlated", type=float, default=1.0)
    p.set_defaults(fn=cmd_sprites)

    p = sub.add_parser("discover", help="fit the part hierarchy on a corpus")
    p.add_argument("--images", required=True)
    p.add_argument("--parts", type=int, required=True)
    p.add_argument("--variants", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--extractor", default="patch-stats")
    p.add_argument("--input-resolution", type=int, default=64)
    p.add_argument("--patch-size", type=int, default=4)
    p.add_argument("--grid-resolution", type=int, default=16)
    p.set_defaults(fn=cmd_discover)

    p = sub.add_parser("train", help="train tokens + adapters on tagged images")
    p.add_argument("--dict", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="toy", choices=["toy"])
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="sample an image from a composition")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--compose", required=True,
                   help='composition like "0:12,1:87,2:3,3:41"')
    p.add_argument("--style", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--guidance", type=float, default=7.5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="EMR/CoSim evaluation protocols")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--protocol", choices=["recon", "comp"], default="recon")
    p.add_argument("--mix", type=int, default=2,
                   help="species count for the composition protocol")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep", help="attention-weight ablation harness")
    p.add_argument("--dict", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--lambdas", default=None,
                   help="comma-separated weights, default 0.1,0.01,0.001")
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("serve", help="HTTP facade for the UI")
    p.add_argument("--dict", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--images", default=None)
    p.add_argument("--state-dir", default="service_state")
    p.add_argument("--stub", action="store_true",
                   help="serve with the deterministic stub renderer")
    p.add_argument("--ui-dir", default=None, help="built frontend to mount at /ui")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PartkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
