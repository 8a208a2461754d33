"""End-to-end tube proposal pipeline.

boundaries -> per-frame proposals -> objectness filter -> trajectories ->
affinities -> random-walker extension (+ spectral pool) -> supervoxel
projection -> ranking -> evaluation.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import affinity, boundaries, metrics, mops, objectness, randomwalk, trajectories, tubes, videoio
from .config import PipelineConfig
from .videoio import Scene

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, what: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed on {what}: {cause}")
        self.stage = stage
        self.what = what
        self.cause = cause


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class PipelineResult:
    ranked: objectness.RankedList
    proposals: list
    trajectories: trajectories.TrajectorySet
    clusters: list
    supervoxels: tubes.SupervoxelSet
    report: metrics.EvalReport | None = None
    warnings: list = field(default_factory=list)


def make_scorer(scene: Scene, config: PipelineConfig):
    if config.scores_file:
        return objectness.ExternalScorer.load(config.scores_file)
    return objectness.CenterSurroundScorer([scene.motion_field(t) for t in range(scene.num_frames)])


def boundary_maps(scene: Scene, config: PipelineConfig, threads: int = 1):
    params = boundaries.BoundaryParams(config.boundary_scale, config.nms)
    motion = _map(lambda t: boundaries.motion_boundaries(scene.motion_field(t), params), range(scene.num_frames), threads)
    image = _map(lambda f: boundaries.image_boundaries(f, params), scene.frames, threads)
    return motion, image


def generate_pool(motion_maps, image_maps, config: PipelineConfig, threads: int = 1):
    """Motion proposals for frames with any motion boundary, plus static
    proposals when enabled."""
    params = mops.ProposalParams(config.num_seeds, config.eps, config.dedup_threshold, config.border_step)

    def frame_props(t):
        out = []
        if motion_maps[t].max() > 0:
            out += mops.generate_proposals(motion_maps[t], params, derive_seed(config.seed, t, 0), t, "motion")
        if config.static_proposals and config.keep_top_static > 0:
            out += mops.generate_proposals(image_maps[t], params, derive_seed(config.seed, t, 1), t, "static")
        return out

    per_frame = _map(frame_props, range(len(motion_maps)), threads)
    return [p for props in per_frame for p in props]


def filter_pool(pool, scorer, config: PipelineConfig):
    motion = [p for p in pool if p.source == "motion"]
    static = [p for p in pool if p.source == "static"]
    kept = objectness.filter_proposals(motion, scorer, config.keep_top) if motion else []
    if static and config.keep_top_static > 0:
        kept += objectness.filter_proposals(static, scorer, config.keep_top_static)
    kept.sort(key=lambda p: (p.frame_index, p.source != "motion"))
    return kept


def extend_proposals(proposals, ts, A, config: PipelineConfig, warn):
    """Random-walker extension of every proposal to a trajectory cluster."""
    marked, sources = [], []
    for i, p in enumerate(proposals):
        try:
            marked.append(randomwalk.mark_from_proposal(p, ts))
            sources.append(i)
        except ValueError as exc:
            warn(f"proposal {i} (frame {p.frame_index}) skipped: {exc}")
    diffused = randomwalk.diffuse_many(A, marked, config.iters)
    clusters, soft = [], {}
    for i, la in zip(sources, diffused):
        soft[i] = la
        c = randomwalk.cluster_from_labels(la, config.x_thresh, {"kind": "proposal", "proposal": i})
        if c is not None:
            clusters.append(c)
    return clusters, soft


def spectral_pool(A, config: PipelineConfig, warn):
    ks = [k for k in config.k_list if k <= A.n]
    if len(ks) < len(config.k_list):
        warn(f"k values above {A.n} trajectories skipped")
    if not ks:
        return []
    return [c for group in randomwalk.spectral_clusters(A, ks, seed=config.seed) for c in group]


def project_pool(clusters, ts, svs, config: PipelineConfig):
    projector = tubes.Projector(ts, svs)
    seen = {}
    pool = []
    for c in clusters:
        try:
            tube = projector.project(c.members, config.thresh)
        except tubes.EmptyProjection:
            continue
        key = (tube.start, tube.masks.shape, np.packbits(tube.masks).tobytes())
        if key in seen:
            continue
        seen[key] = len(pool)
        tube.meta = dict(c.source)
        pool.append(tube)
    return pool


def run_pipeline(scene: Scene, config: PipelineConfig, out_dir=None, threads: int = 1) -> PipelineResult:
    warnings_ = []

    def warn(msg):
        log.warning(msg)
        warnings_.append(msg)

    def stage(name, what, fn, *args):
        try:
            return fn(*args)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, what, exc) from exc

    if not scene.backward_flows:
        raise StageError("track", "scene", ValueError("backward flows are required"))
    log.info("resolved config:\n%s", config.to_text())

    motion_maps, image_maps = stage("boundaries", "all frames", boundary_maps, scene, config, threads)
    pool = stage("mops", "all frames", generate_pool, motion_maps, image_maps, config, threads)
    if not any(p.source == "motion" for p in pool):
        warn("no motion boundaries anywhere: motion proposal pool is empty, using static proposals only")
    scorer = stage("rank", "scorer", make_scorer, scene, config)
    proposals = stage("filter", "proposal pool", filter_pool, pool, scorer, config)

    ts = stage("track", "flows", trajectories.link_trajectories, scene.flows, scene.backward_flows,
               trajectories.TrackParams(config.stride, config.theta_a, config.theta_r))
    aparams = affinity.AffinityParams(config.radius, config.lam, config.window, config.min_overlap, config.eps_a)
    A = stage("affinity", "trajectories", affinity.build_affinity, ts, aparams)
    clusters, soft = stage("cluster", "proposals", extend_proposals, proposals, ts, A, config, warn)
    clusters += stage("cluster", "spectral embedding", spectral_pool, A, config, warn)

    sp_maps = motion_maps
    if config.superpixel_source == "image":
        sp_maps = image_maps
    elif max(m.max() for m in motion_maps) == 0:
        warn("no motion boundaries: superpixels computed from image boundaries")
        sp_maps = image_maps
    sp_params = tubes.SuperpixelParams(config.theta_sp, config.min_area)
    partitions = stage("tubes", "superpixels", lambda: _map(lambda m: tubes.superpixels(m, sp_params), sp_maps, threads))
    svs = stage("tubes", "supervoxels", tubes.build_supervoxels, partitions, scene.flows, config.theta_link)
    pool_tubes = stage("tubes", "projection", project_pool, clusters, ts, svs, config)
    if not pool_tubes:
        raise StageError("tubes", "projection", ValueError("every cluster projected to an empty tube"))

    ranked = stage("rank", "tube pool", objectness.rank, pool_tubes, scorer, config.diversify, config.gamma, config.aggregate)
    report = None
    if scene.gt_tubes:
        report = stage("eval", "ranked pool", metrics.evaluate, ranked.items, scene.gt_tubes, config.at_sizes)

    result = PipelineResult(ranked, proposals, ts, clusters, svs, report, warnings_)
    if out_dir is not None:
        stage("write", str(out_dir), write_outputs, Path(out_dir), result, soft, A, config)
    return result


def write_ranked(path, ranked: objectness.RankedList, tube_paths) -> None:
    entries = [
        {"tubePath": p, "score": float(s), "rank": r + 1}
        for r, (p, s) in enumerate(zip(tube_paths, ranked.scores))
    ]
    Path(path).write_text(json.dumps(entries, indent=2) + "\n")


def load_ranked(path):
    """Tubes of a ranked JSON file in rank order (paths relative to the file)."""
    path = Path(path)
    entries = sorted(json.loads(path.read_text()), key=lambda e: e["rank"])
    out = []
    for e in entries:
        tube = videoio.load_tube(path.parent / e["tubePath"])
        tube.score = float(e["score"])
        out.append(tube)
    return out


def write_outputs(out: Path, result: PipelineResult, soft, A, config: PipelineConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    mops.save_proposals(out / "proposals", result.proposals)
    trajectories.save_trajectories(out / "trajectories.jsonl", result.trajectories)
    affinity.save_affinity(out / "affinity.txt", A)
    randomwalk.save_soft_labels(out / "soft_labels.json", soft)
    randomwalk.save_clusters(out / "clusters.json", result.clusters)
    tubes.save_supervoxels(out / "supervoxels", result.supervoxels)
    paths = []
    for r, tube in enumerate(result.ranked.items):
        rel = f"tubes/rank_{r + 1:05d}"
        videoio.save_tube(out / rel, tube)
        paths.append(rel)
    write_ranked(out / "ranked.json", result.ranked, paths)
    files = ["proposals/index.json", "trajectories.jsonl", "trajectories.json", "affinity.txt", "soft_labels.json",
             "clusters.json", "supervoxels/supervoxels.json", "ranked.json"]
    if result.report is not None:
        result.report.save_json(out / "eval.json")
        result.report.save_curve_csv(out / "curve.csv")
        files += ["eval.json", "curve.csv"]
    manifest = {
        "config": config.to_dict(),
        "counts": {
            "proposals": len(result.proposals),
            "trajectories": result.trajectories.n,
            "affinities": A.nnz,
            "clusters": len(result.clusters),
            "supervoxels": result.supervoxels.count,
            "tubes": len(result.ranked),
        },
        "warnings": result.warnings,
        "files": files,
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "config.txt").write_text(config.to_text())
