"""Command-line entry point: ``diffdistill <subcommand> ...``.

Exit status: 0 on success, 1 on a data or validation error, 2 on a usage
error.  Diagnostics go to stderr; data goes to files under ``--out-dir``
(or ``$VLMP_OUT_DIR``) or to stdout.

Every JSON artifact carries a ``meta`` block and every CSV artifact starts
with a ``# meta: {...}`` line.  The block holds the tool version, the
resolved configuration (defaults included) and SHA-256 digests of the inputs.
No timestamps are recorded, so identical invocations give identical bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dfm import DfmConfig
from .dks import DksConfig
from .embeddings import validate
from .errors import DistillError, IoFailure
from .niah import (
    NiahConfig,
    NiahManifest,
    build_manifest,
    read_predictions,
    score,
    splice_embeddings,
    splice_index_map,
)
from .pipeline import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_TAU_GRID,
    CostProfile,
    DistillConfig,
    SamplingMode,
    budget,
    distill,
    estimate_cost,
    predictions_score_hook,
    run_sweep,
    stream_distill,
    sweep_csv,
    weights_csv,
)
from .profiler import frame_profile, patch_profile
from .synth import SynthSpec, gen_attention_dump, gen_embeddings
from .tensorfile import (
    load_query,
    load_tensor_file,
    load_video,
    write_query_pair,
    write_tensor_file,
    write_video,
)

GLOBAL_DEFAULTS = {"seed": 0, "strict": False, "renormalize": False, "out_dir": None,
                   "format": None, "jobs": 1}


# -- helpers ----------------------------------------------------------------------

def _digest(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return h.hexdigest()


def _video_inputs(manifest_path) -> dict:
    manifest_path = Path(manifest_path)
    out = {str(manifest_path): _digest(manifest_path)}
    meta = json.loads(manifest_path.read_text())
    for key in ("frame_file", "patch_file"):
        if meta.get(key):
            p = manifest_path.parent / meta[key]
            out[str(p)] = _digest(p)
    return out


def _meta(args, config: dict, inputs: dict) -> dict:
    return {"tool": "diffdistill", "version": __version__, "command": args.command_path,
            "config": config, "inputs": dict(sorted(inputs.items()))}


def _out_dir(args) -> Path | None:
    d = args.out_dir or os.environ.get("VLMP_OUT_DIR")
    if d is None:
        return None
    d = Path(d)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {d}: {exc}") from exc
    return d


def _emit(args, name: str, text: str) -> None:
    """Write ``text`` to <out-dir>/<name>, or to stdout when no output directory is set."""
    d = _out_dir(args)
    if d is None:
        sys.stdout.write(text)
        return
    path = d / name
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    print(f"wrote {path}", file=sys.stderr)


def _json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _csv_with_meta(meta: dict, body: str) -> str:
    return "# meta: " + json.dumps(meta, sort_keys=True) + "\n" + body


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _distill_config(args) -> DistillConfig:
    return DistillConfig(DksConfig(args.tau, args.k), DfmConfig(args.lam, args.alpha),
                         SamplingMode(args.mode))


def _query(args):
    return load_query(args.query, args.query_patch, renormalize=args.renormalize)


def _query_inputs(args) -> dict:
    out = {args.query: _digest(args.query)}
    if args.query_patch:
        out[args.query_patch] = _digest(args.query_patch)
    return out


# -- subcommands --------------------------------------------------------------------

def cmd_validate(args) -> int:
    report = {}
    for path in args.files:
        if path.endswith(".json"):
            container = load_video(path, renormalize=args.renormalize)
            violations = validate(container, check_patches=True)
        else:
            container = load_tensor_file(path, renormalize=args.renormalize, check=False)
            violations = [] if isinstance(container, np.ndarray) else validate(container)
        report[path] = [str(v) for v in violations]
        for v in violations:
            print(f"{path}: {v}", file=sys.stderr)
    inputs = {p: _digest(p) for p in args.files}
    _emit(args, "validate.json", _json({"meta": _meta(args, {}, inputs), "violations": report}))
    return 1 if any(report.values()) else 0


def cmd_distill(args) -> int:
    cfg = _distill_config(args)
    query = _query(args)
    videos = [load_video(v, renormalize=args.renormalize) for v in args.videos]
    fn = stream_distill if args.stream else distill

    def run(video):
        return fn(video, query, cfg)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            seqs = list(pool.map(run, videos))
    else:
        seqs = [run(v) for v in videos]
    config = {**cfg.to_dict(), "streaming": args.stream, "externalize": args.externalize}
    d = _out_dir(args)
    for path, seq in zip(args.videos, seqs):
        inputs = {**_video_inputs(path), **_query_inputs(args)}
        doc = seq.to_dict(include_vectors=not args.externalize)
        if args.externalize:
            if d is None:
                raise IoFailure("--externalize needs --out-dir (or VLMP_OUT_DIR)")
            tokens = f"{seq.video_id}.tokens.vlmp"
            write_tensor_file(seq.token_matrix(), d / tokens)
            doc["tokens_file"] = tokens
        doc["meta"] = _meta(args, config, inputs)
        _emit(args, f"{seq.video_id}.distilled.json", _json(doc))
        if args.dump_weights:
            target = Path(args.dump_weights)
            if len(seqs) > 1:
                target = target.with_name(f"{seq.video_id}.{target.name}")
            try:
                target.write_text(_csv_with_meta(doc["meta"], weights_csv(seq)))
            except OSError as exc:
                raise IoFailure(f"cannot write {target}: {exc}") from exc
        b = seq.budget
        print(f"{seq.video_id}: keyframes={b.keyframes} tokens {b.original_tokens} -> "
              f"{b.compressed_tokens} ({100 * b.reduction_ratio:.2f}% reduction)", file=sys.stderr)
    return 0


def cmd_budget(args) -> int:
    report = budget(args.n, args.m, args.k)
    profile = CostProfile(args.cost_a, args.cost_b)
    cost_before = estimate_cost(report.original_tokens, profile)
    cost_after = estimate_cost(report.compressed_tokens, profile)
    if args.format == "csv":
        meta = _meta(args, {"n": args.n, "m": args.m, "k": args.k}, {})
        row = report.to_dict() | {"cost_original": cost_before, "cost_compressed": cost_after}
        body = ",".join(row) + "\n" + ",".join(repr(v) for v in row.values()) + "\n"
        _emit(args, "budget.csv", _csv_with_meta(meta, body))
    elif args.format == "json":
        config = {"n": args.n, "m": args.m, "k": args.k, "cost_a": args.cost_a, "cost_b": args.cost_b}
        doc = {"meta": _meta(args, config, {}), "budget": report.to_dict(),
               "cost_original": cost_before, "cost_compressed": cost_after}
        _emit(args, "budget.json", _json(doc))
    else:
        _emit(args, "budget.txt",
              f"original={report.original_tokens}\n"
              f"compressed={report.compressed_tokens}\n"
              f"reduction={100 * report.reduction_ratio:.2f}%\n"
              f"cost_original={cost_before!r}\n"
              f"cost_compressed={cost_after!r}\n")
    return 0


def cmd_profile(args) -> int:
    dump = load_tensor_file(args.attention, check=False)
    video = load_video(args.video, renormalize=args.renormalize)
    lenient = not args.strict and args.lenient
    inputs = {args.attention: _digest(args.attention), **_video_inputs(args.video)}
    if args.level == "frame":
        prof = frame_profile(dump, video, window=args.window, n_pairs=args.pairs, seed=args.seed,
                             tolerance=args.mass_tolerance, lenient=lenient)
        config = {"level": "frame", "window": args.window, "pairs": args.pairs, "seed": args.seed,
                  "mass_tolerance": args.mass_tolerance, "random_pair_baseline": prof.baseline}
        body = prof.to_csv()
    else:
        prof = patch_profile(dump, video, k_top=args.k_top, tolerance=args.mass_tolerance,
                             lenient=lenient)
        config = {"level": "patch", "k_top": args.k_top, "mass_tolerance": args.mass_tolerance,
                  "keyframes": list(prof.keyframes), "empty": prof.empty}
        body = prof.to_csv()
    _emit(args, f"profile-{args.level}.csv", _csv_with_meta(_meta(args, config, inputs), body))
    return 0


def cmd_niah_build(args) -> int:
    catalog = json.loads(Path(args.catalog).read_text())
    if isinstance(catalog, dict):
        catalog = catalog["videos"]
    cfg = NiahConfig(tuple(args.lengths), args.cases_per_length, (args.needle_min, args.needle_max))
    manifest = build_manifest(catalog, cfg, seed=args.seed)
    doc = json.loads(manifest.to_json())
    doc["meta"] = _meta(args, manifest.config | {"seed": args.seed},
                        {args.catalog: _digest(args.catalog)})
    _emit(args, "niah-manifest.json", _json(doc))
    return 0


def _load_manifest(path) -> NiahManifest:
    try:
        return NiahManifest.from_json(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def cmd_niah_splice(args) -> int:
    manifest = _load_manifest(args.manifest)
    case = manifest.case(args.case_id)
    hay = load_video(args.haystack, renormalize=args.renormalize)
    needle = load_video(args.needle, renormalize=args.renormalize)
    spliced = splice_embeddings(hay, needle, case)
    d = _out_dir(args) or Path(".")
    sidecar = write_video(spliced, d, stem=case.case_id)
    inputs = {args.manifest: _digest(args.manifest), **_video_inputs(args.haystack),
              **_video_inputs(args.needle)}
    index_map = {"meta": _meta(args, {"case_id": case.case_id}, inputs),
                 "needle_span": spliced.metadata["needle_span"],
                 "frames": [[src, idx] for src, idx in splice_index_map(case)]}
    (d / f"{case.case_id}.index.json").write_text(_json(index_map))
    print(f"wrote {sidecar}", file=sys.stderr)
    return 0


def cmd_niah_score(args) -> int:
    manifest = _load_manifest(args.manifest)
    try:
        predictions = read_predictions(Path(args.predictions).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {args.predictions}: {exc}") from exc
    grid = score(manifest, predictions, buckets=args.buckets, strict=args.strict)
    if grid.missing:
        how = "counted as incorrect" if args.strict else "excluded"
        print(f"{len(grid.missing)} cases without predictions ({how})", file=sys.stderr)
    inputs = {args.manifest: _digest(args.manifest), args.predictions: _digest(args.predictions)}
    config = {"buckets": args.buckets, "strict": args.strict, "missing": len(grid.missing)}
    _emit(args, "niah-score.csv", _csv_with_meta(_meta(args, config, inputs), grid.to_csv()))
    return 0


def cmd_sweep(args) -> int:
    cfg = _distill_config(args)
    videos = [load_video(v, renormalize=args.renormalize) for v in args.videos]
    query = _query(args)
    hook = predictions_score_hook(args.predictions) if args.predictions else None
    rows = run_sweep(videos, [query], args.taus, args.alphas, cfg, hook, jobs=args.jobs)
    inputs = {**_query_inputs(args)}
    for v in args.videos:
        inputs.update(_video_inputs(v))
    if args.predictions:
        inputs[args.predictions] = _digest(args.predictions)
    config = {**cfg.to_dict(), "tau_grid": args.taus, "alpha_grid": args.alphas}
    _emit(args, "sweep.csv", _csv_with_meta(_meta(args, config, inputs), sweep_csv(rows)))
    return 0


def cmd_gen(args) -> int:
    recipe = SynthSpec(args.n_frames, args.m_patches, args.d_f, args.d_p, args.centers, args.blend,
                     args.seed)
    video, query = gen_embeddings(recipe, video_id=args.video_id)
    d = _out_dir(args) or Path(".")
    sidecar = write_video(video, d)
    meta = json.loads(sidecar.read_text())
    if recipe.d_f == recipe.d_p:
        write_tensor_file(query, d / f"{video.video_id}.query.vlmp")
        meta["query_file"] = f"{video.video_id}.query.vlmp"
    else:
        write_query_pair(query, d / f"{video.video_id}.query-frame.vlmp",
                         d / f"{video.video_id}.query-patch.vlmp")
        meta["query_file"] = f"{video.video_id}.query-frame.vlmp"
        meta["query_patch_file"] = f"{video.video_id}.query-patch.vlmp"
    if args.attention_top_frac is not None:
        dump = gen_attention_dump(recipe.n_frames, recipe.m_patches, args.attention_top_frac,
                                  args.attention_mass_frac, seed=args.seed,
                                  video_id=video.video_id)
        write_tensor_file(dump, d / f"{video.video_id}.attention.vlmp")
        meta["attention_file"] = f"{video.video_id}.attention.vlmp"
    meta["meta"] = _meta(args, {k: getattr(recipe, k) for k in recipe.__dataclass_fields__}, {})
    sidecar.write_text(_json(meta))
    print(f"wrote {sidecar}", file=sys.stderr)
    return 0


def cmd_manual(args) -> int:
    parser = build_parser()
    sections = [parser.format_help()]
    for name, sub in _subparsers(parser):
        sections.append(f"\n{'=' * 72}\n{name}\n{'=' * 72}\n{sub.format_help()}")
    sys.stdout.write("".join(sections))
    return 0


# -- parser -------------------------------------------------------------------------

def _global_options(required_defaults: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    default = (lambda k: GLOBAL_DEFAULTS[k]) if required_defaults else (lambda k: argparse.SUPPRESS)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=default("seed"), help="64-bit seed (default 0)")
    g.add_argument("--strict", action="store_true", default=default("strict"),
                   help="treat soft problems (missing predictions, mass tolerance) as errors")
    g.add_argument("--renormalize", action="store_true", default=default("renormalize"),
                   help="L2-renormalise embeddings on load instead of rejecting off-norm vectors")
    g.add_argument("--out-dir", default=default("out_dir"),
                   help="output directory (fallback: $VLMP_OUT_DIR; otherwise stdout)")
    g.add_argument("--format", choices=["json", "csv"], default=default("format"))
    g.add_argument("--jobs", type=int, default=default("jobs"),
                   help="videos processed in parallel; output is independent of this value")
    return p


def _distill_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--query", required=True, help="QUERY tensor file (frame space, or both spaces)")
    p.add_argument("--query-patch", help="separate one-row QUERY file for the patch space")
    p.add_argument("--tau", type=float, default=0.85, help="redundancy threshold (default 0.85)")
    p.add_argument("-k", "--k", type=int, default=32, help="maximum keyframes (default 32)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="redundancy weight in patch saliency (default 1)")
    p.add_argument("--alpha", type=float, default=1e-2, help="softmax temperature (default 1e-2)")
    p.add_argument("--mode", choices=[m.value for m in SamplingMode], default="dks",
                   help="keyframe sampling mode (default dks)")


def build_parser() -> argparse.ArgumentParser:
    glob_sub = _global_options(False)
    parser = argparse.ArgumentParser(
        prog="diffdistill", parents=[_global_options(True)],
        description="Keyframe selection and saliency-weighted merging for video token sequences.")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("validate", parents=[glob_sub], help="check tensor files or video sidecars")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("distill", parents=[glob_sub], help="distill one or more videos")
    p.add_argument("videos", nargs="+", help="video sidecar JSON files")
    _distill_options(p)
    p.add_argument("--stream", action="store_true", help="two-pass bounded-memory mode")
    p.add_argument("--externalize", action="store_true",
                   help="write token vectors to a TOKENS tensor file instead of inline JSON")
    p.add_argument("--dump-weights", metavar="CSV", help="write per-frame merge weights as CSV")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("budget", parents=[glob_sub], help="token budget for N frames, M patches, K keyframes")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--cost-a", type=float, default=1.0, help="per-token cost coefficient")
    p.add_argument("--cost-b", type=float, default=0.0, help="quadratic cost coefficient")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("profile", parents=[glob_sub], help="attention concentration profiles")
    p.add_argument("level", choices=["frame", "patch"])
    p.add_argument("--attention", required=True, help="ATTENTION tensor file")
    p.add_argument("--video", required=True, help="video sidecar JSON")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--pairs", type=int, default=1000, help="random pairs for the baseline")
    p.add_argument("--k-top", type=int, default=32)
    p.add_argument("--mass-tolerance", type=float, default=1e-3)
    p.add_argument("--lenient", action="store_true",
                   help="warn instead of failing when attention mass is off 1")
    p.set_defaults(func=cmd_profile)

    niah = sub.add_parser("niah", help="VideoNIAH benchmark manifests, splicing and scoring")
    nsub = niah.add_subparsers(dest="niah_command", metavar="ACTION")
    nsub.required = True
    p = nsub.add_parser("build", parents=[glob_sub], help="build a case manifest from a catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--lengths", type=_ints, default=list(NiahConfig().lengths))
    p.add_argument("--cases-per-length", type=int, default=600)
    p.add_argument("--needle-min", type=int, default=30)
    p.add_argument("--needle-max", type=int, default=120)
    p.set_defaults(func=cmd_niah_build)
    p = nsub.add_parser("splice", parents=[glob_sub], help="splice a needle into a haystack")
    p.add_argument("--manifest", required=True)
    p.add_argument("--case-id", required=True)
    p.add_argument("--haystack", required=True)
    p.add_argument("--needle", required=True)
    p.set_defaults(func=cmd_niah_splice)
    p = nsub.add_parser("score", parents=[glob_sub], help="depth x length accuracy grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True, help="JSON lines {case_id, answer}")
    p.add_argument("--buckets", type=int, default=10)
    p.set_defaults(func=cmd_niah_score)

    p = sub.add_parser("sweep", parents=[glob_sub], help="tau x alpha hyperparameter grid")
    p.add_argument("videos", nargs="+")
    _distill_options(p)
    p.add_argument("--taus", type=_floats, default=list(DEFAULT_TAU_GRID))
    p.add_argument("--alphas", type=_floats, default=list(DEFAULT_ALPHA_GRID))
    p.add_argument("--predictions", help="JSON lines {tau, alpha, video_id, correct}")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen", parents=[glob_sub], help="write a synthetic video, query and sidecar")
    p.add_argument("--n-frames", type=int, required=True)
    p.add_argument("--m-patches", type=int, default=4)
    p.add_argument("--d-f", type=int, default=16)
    p.add_argument("--d-p", type=int, default=8)
    p.add_argument("--centers", type=int, default=1)
    p.add_argument("--blend", type=float, default=0.0)
    p.add_argument("--video-id", default=None)
    p.add_argument("--attention-top-frac", type=float, default=None,
                   help="also write an attention dump with this top-frame fraction")
    p.add_argument("--attention-mass-frac", type=float, default=0.9)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("manual", help="print the full manual for every subcommand")
    p.set_defaults(func=cmd_manual)
    return parser


def _subparsers(parser: argparse.ArgumentParser, prefix: str = ""):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, sub in action.choices.items():
                yield f"{prefix}{name}", sub
                yield from _subparsers(sub, f"{prefix}{name} ")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    args.command_path = args.command + (f" {args.niah_command}" if args.command == "niah" else "")
    try:
        return args.func(args)
    except DistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
