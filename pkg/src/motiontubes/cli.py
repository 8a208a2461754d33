"""Command line driver.

Every stage reads and writes the documented file formats so it can be swapped
for external tooling::

    motiontubes synth --preset single --out scene/
    motiontubes run --scene scene/ --out run/
    motiontubes boundaries --scene scene/ --out bnd/
    motiontubes mops --boundaries bnd/ --scene scene/ --out props/
    motiontubes track --scene scene/ --out traj/
    motiontubes cluster --trajectories traj/trajectories.jsonl --proposals props/ --out clus/
    motiontubes tubes --scene scene/ --trajectories traj/trajectories.jsonl --clusters clus/clusters.json --out tubes/
    motiontubes rank --scene scene/ --tubes tubes/tubes.json --out ranked/
    motiontubes eval --ranked ranked/ranked.json --scene scene/ --out eval/
    motiontubes overlay --tube run/tubes/rank_00001 --scene scene/ --out overlay/

Exit codes: 0 success, 2 configuration error, 3 data error, 4 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import affinity, metrics, mops, objectness, pipeline, randomwalk, render, synthetic
from . import trajectories as trj
from . import tubes as tb
from . import videoio
from .config import ConfigError, PipelineConfig, load_config, parse_value, resolve

log = logging.getLogger("motiontubes")

EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 2, 3, 4


class DataError(Exception):
    pass


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    g = parent.add_argument_group("configuration")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--seed", type=int, help="random seed (overrides the config)")
    g.add_argument("--threads", type=int, default=1, help="worker cap within a stage")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    for f in fields(PipelineConfig):
        if f.name == "seed":
            continue
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar="V", help=argparse.SUPPRESS)
    return parent


def resolve_config(args) -> PipelineConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = parse_value(key.strip(), value)
    for f in fields(PipelineConfig):
        value = getattr(args, "cfg_" + f.name, None)
        if value is not None:
            overrides[f.name] = parse_value(f.name, value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = resolve(None, overrides)
    log.info("resolved config:\n%s", cfg.to_text())
    return cfg


def _scene(path) -> videoio.Scene:
    return videoio.load_scene(path)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg):
    config = synthetic.preset(args.preset, cfg.seed, args.frames, args.width, args.height)
    scene = synthetic.synthesize(config)
    path = videoio.save_scene(args.out, scene)
    print(path)


def cmd_run(args, cfg):
    scene = _scene(args.scene)
    result = pipeline.run_pipeline(scene, cfg, args.out, args.threads)
    for msg in result.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    top = result.ranked.items[0]
    print(f"{len(result.ranked)} tubes ranked; top tube frames {top.start}-{top.end} score {top.score:.4f}")
    if result.report is not None:
        agg = result.report.aggregates
        print(" ".join(f"{k}={agg[k]:.4f}" for k in ("abo", "coverage", "det50", "det70")))


def cmd_boundaries(args, cfg):
    scene = _scene(args.scene)
    motion, image = pipeline.boundary_maps(scene, cfg, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = {"motion": [], "image": []}
    for t in range(scene.num_frames):
        for kind, maps in (("motion", motion), ("image", image)):
            rel = f"{kind}_{t:05d}.pgm"
            videoio.save_strength(out / rel, maps[t])
            index[kind].append(rel)
    _write_json(out / "index.json", index)


def _load_boundary_dir(path):
    path = Path(path)
    index = json.loads((path / "index.json").read_text())
    motion = [videoio.load_strength(path / p) for p in index["motion"]]
    image = [videoio.load_strength(path / p) for p in index["image"]]
    return motion, image


def cmd_mops(args, cfg):
    motion, image = _load_boundary_dir(args.boundaries)
    pool = pipeline.generate_pool(motion, image, cfg, args.threads)
    if not any(p.source == "motion" for p in pool):
        print("warning: motion proposal pool is empty", file=sys.stderr)
    if args.scene:
        scene = _scene(args.scene)
        pool = pipeline.filter_pool(pool, pipeline.make_scorer(scene, cfg), cfg)
    mops.save_proposals(args.out, pool)


def cmd_track(args, cfg):
    scene = _scene(args.scene)
    if not scene.backward_flows:
        raise DataError("scene has no backward flows; they are required for tracking")
    ts = trj.link_trajectories(scene.flows, scene.backward_flows, trj.TrackParams(cfg.stride, cfg.theta_a, cfg.theta_r))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trj.save_trajectories(out / "trajectories.jsonl", ts)


def cmd_cluster(args, cfg):
    ts = trj.load_trajectories(args.trajectories)
    proposals = mops.load_proposals(args.proposals)
    params = affinity.AffinityParams(cfg.radius, cfg.lam, cfg.window, cfg.min_overlap, cfg.eps_a)
    A = affinity.build_affinity(ts, params)
    warn = lambda msg: print(f"warning: {msg}", file=sys.stderr)  # noqa: E731
    clusters, soft = pipeline.extend_proposals(proposals, ts, A, cfg, warn)
    clusters += pipeline.spectral_pool(A, cfg, warn)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    affinity.save_affinity(out / "affinity.txt", A)
    randomwalk.save_soft_labels(out / "soft_labels.json", soft)
    randomwalk.save_clusters(out / "clusters.json", clusters)


def cmd_tubes(args, cfg):
    scene = _scene(args.scene)
    ts = trj.load_trajectories(args.trajectories)
    clusters = randomwalk.load_clusters(args.clusters)
    motion, image = pipeline.boundary_maps(scene, cfg, args.threads)
    maps = image if cfg.superpixel_source == "image" or max(m.max() for m in motion) == 0 else motion
    sp = [tb.superpixels(m, tb.SuperpixelParams(cfg.theta_sp, cfg.min_area)) for m in maps]
    svs = tb.build_supervoxels(sp, scene.flows, cfg.theta_link)
    pool = pipeline.project_pool(clusters, ts, svs, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tb.save_supervoxels(out / "supervoxels", svs)
    paths = []
    for i, tube in enumerate(pool):
        rel = f"tube_{i:05d}"
        videoio.save_tube(out / rel, tube)
        paths.append(rel)
    _write_json(out / "tubes.json", paths)


def _load_tube_index(path):
    path = Path(path)
    if path.is_dir():
        path = path / "tubes.json"
    return path, [path.parent / p for p in json.loads(path.read_text())]


def cmd_rank(args, cfg):
    scene = _scene(args.scene)
    _, paths = _load_tube_index(args.tubes)
    pool = [videoio.load_tube(p) for p in paths]
    if not pool:
        raise DataError("tube pool is empty")
    scorer = objectness.ExternalScorer.load(args.scores) if args.scores else pipeline.make_scorer(scene, cfg)
    ranked = objectness.rank(pool, scorer, cfg.diversify, cfg.gamma, cfg.aggregate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rel = [os.path.relpath(paths[i], out) for i in ranked.ids]
    pipeline.write_ranked(out / "ranked.json", ranked, rel)


def cmd_eval(args, cfg):
    gt = list(_scene(args.scene).gt_tubes) if args.scene else []
    gt += [videoio.load_tube(p) for p in args.gt]
    if not gt:
        raise DataError("no ground truth: pass --scene with gt or --gt")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.ranked:
        report = metrics.evaluate(pipeline.load_ranked(args.ranked), gt, cfg.at_sizes)
        report.save_json(out / "eval.json")
        report.save_curve_csv(out / "curve.csv")
        print(" ".join(f"{k}={v:.4f}" for k, v in report.aggregates.items()))
    if args.proposals:
        report = metrics.evaluate_per_frame(mops.load_proposals(args.proposals), gt)
        report.save_json(out / "eval_frames.json")
        print(" ".join(f"{k}={v:.4f}" for k, v in report.aggregates.items()))


def cmd_overlay(args, cfg):
    tube = videoio.load_tube(args.tube)
    scene = _scene(args.scene)
    render.overlay(tube, scene.frames, args.out)


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = argparse.ArgumentParser(prog="motiontubes", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[parent], help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = add("synth", cmd_synth, "write a synthetic scene")
    p.add_argument("--preset", choices=("single", "two", "static"), default="single")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)

    p = add("run", cmd_run, "run the whole pipeline")
    p.add_argument("--scene", required=True)

    p = add("boundaries", cmd_boundaries, "motion and image boundary maps (8-bit PGM, lossy)")
    p.add_argument("--scene", required=True)

    p = add("mops", cmd_mops, "per-frame proposals from boundary maps")
    p.add_argument("--boundaries", required=True)
    p.add_argument("--scene", help="filter proposals by objectness using this scene's flow")

    p = add("track", cmd_track, "link flows into point trajectories")
    p.add_argument("--scene", required=True)

    p = add("cluster", cmd_cluster, "affinities, random-walker extension and spectral clusters")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--proposals", required=True)

    p = add("tubes", cmd_tubes, "supervoxels and cluster projection")
    p.add_argument("--scene", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--clusters", required=True)

    p = add("rank", cmd_rank, "score and rank tubes")
    p.add_argument("--scene", required=True)
    p.add_argument("--tubes", required=True)
    p.add_argument("--scores", help="external JSON box scores")

    p = add("eval", cmd_eval, "evaluate a ranked pool and/or per-frame proposals")
    p.add_argument("--ranked")
    p.add_argument("--proposals")
    p.add_argument("--scene")
    p.add_argument("--gt", action="append", default=[], help="ground-truth tube directory")

    p = add("overlay", cmd_overlay, "render a tube over the frames")
    p.add_argument("--tube", required=True)
    p.add_argument("--scene", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.StageError as exc:
        code = EXIT_DATA if isinstance(exc.cause, (videoio.FormatError, OSError)) else EXIT_STAGE
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (DataError, videoio.FormatError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
