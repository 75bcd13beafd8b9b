"""Command-line pipeline: synth, merge, refine, evaluate, orient, convert.

Every subcommand is a pure function of its input files, flags, and seed;
outputs are written atomically (temp file + rename), so a failed run never
leaves partial files. Exit codes: 0 success, 2 I/O or parse error,
3 invalid configuration, 4 internal error.

A config file (flat ``key = value`` lines, ``#`` comments) can preload any
flag value; explicit flags win. Keys are the long flag names with dashes
replaced by underscores.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io as hio
from .core import StrandSet
from .errors import (ConfigError, EmptyGroundTruth, EmptyTarget,
                     FileFormatError, StrandKitError)
from .merge import MergeThresholds, merge_until_stable
from .metrics import MatchThresholds, evaluate, reports_to_json
from .orientation import (GaborParams, load_gray, orient_map,
                          save_orientation_map)
from .refine import RefineConfig, run_stage3
from .synth import (FragmentGroundTruth, HairstyleSpec, Style,
                    adjacency_recovery, fragment, generate,
                    sample_oriented_cloud)

_FLOAT = "float"
_INT = "int"
_STR = "str"

# dest -> (flag, type, default, help); defaults live here, not in argparse,
# so a config file can fill anything the command line left unset
_REFINE_OPTS = {
    "iterations": ("--iterations", _INT, 2000, "refinement iterations"),
    "learning_rate": ("--learning-rate", _FLOAT, 0.05, "Adam step size, mm"),
    "lambda_smooth": ("--lambda-smooth", _FLOAT, 0.1, "smoothness weight"),
    "lambda_dir": ("--lambda-dir", _FLOAT, 0.25, "direction term weight, mm^2/rad"),
    "theta_s": ("--theta-s", _FLOAT, 20.0, "smoothness angle threshold, degrees"),
    "split_length": ("--split-length", _FLOAT, 5.0, "segment split threshold, mm"),
    "merge_every": ("--merge-every", _INT, 1000, "iterations between merge rounds"),
    "mask_threshold": ("--mask-threshold", _FLOAT, 0.5, "final mask filter"),
    "sample_spacing": ("--sample-spacing", _FLOAT, 1.0, "data-term sampling, mm"),
    "d_start": ("--d-start", _FLOAT, 2.0, "schedule start distance, mm"),
    "theta_start": ("--theta-start", _FLOAT, 20.0, "schedule start angle, degrees"),
    "d_end": ("--d-end", _FLOAT, 4.0, "schedule end distance, mm"),
    "theta_end": ("--theta-end", _FLOAT, 40.0, "schedule end angle, degrees"),
}


def _add_opts(parser: argparse.ArgumentParser, opts: dict) -> None:
    for dest, (flag, typ, _default, help_) in opts.items():
        parser.add_argument(flag, dest=dest, type=str, default=None, help=help_)


def _coerce(raw: str, typ: str, key: str):
    try:
        if typ == _INT:
            return int(raw)
        if typ == _FLOAT:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _resolve(args, opts: dict, config: dict) -> dict:
    """default < config file < explicit flag, with type coercion."""
    out = {}
    for dest, (_flag, typ, default, _help) in opts.items():
        raw = getattr(args, dest, None)
        if raw is not None:
            out[dest] = _coerce(raw, typ, dest)
        elif dest in config:
            out[dest] = _coerce(config[dest], typ, dest)
        else:
            out[dest] = default
    return out


def load_config(path) -> dict:
    """Flat `key = value` file; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for num, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{num}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            if not key or not value:
                raise ConfigError(f"{path}:{num}: empty key or value")
            out[key] = value
    return out


def _write_text(path, text: str) -> None:
    hio._atomic_write(path, text.encode("ascii"))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

_SYNTH_OPTS = {
    "style": ("--style", _STR, "straight", "straight|wavy|curly|helix"),
    "strands": ("--strands", _INT, 100, "strand count"),
    "joints": ("--joints", _INT, 60, "joints per strand"),
    "scalp_radius": ("--scalp-radius", _FLOAT, 80.0, "scalp hemisphere radius, mm"),
    "length_mean": ("--length-mean", _FLOAT, 150.0, "strand length mean, mm"),
    "length_std": ("--length-std", _FLOAT, 20.0, "strand length std, mm"),
    "curl_radius": ("--curl-radius", _FLOAT, 10.0, "curl radius, mm"),
    "curl_pitch": ("--curl-pitch", _FLOAT, 20.0, "curl rise per turn, mm"),
    "min_len": ("--min-len", _FLOAT, 5.0, "fragment min piece length, mm"),
    "max_len": ("--max-len", _FLOAT, 15.0, "fragment max piece length, mm"),
    "gap": ("--gap", _FLOAT, 1.0, "fragment gap, mm"),
    "jitter": ("--jitter", _FLOAT, 0.1, "fragment joint jitter sigma, mm"),
    "cloud_spacing": ("--cloud-spacing", _FLOAT, 1.0, "cloud sample spacing, mm"),
    "cloud_noise": ("--cloud-noise", _FLOAT, 0.0, "cloud position noise sigma, mm"),
}


def cmd_synth(args, config) -> int:
    opt = _resolve(args, _SYNTH_OPTS, config)
    try:
        style = Style(opt["style"])
    except ValueError:
        raise ConfigError(f"unknown style {opt['style']!r}") from None
    spec = HairstyleSpec(style=style, strand_count=opt["strands"],
                         joints_per_strand=opt["joints"],
                         scalp_radius=opt["scalp_radius"],
                         length_mean=opt["length_mean"], length_std=opt["length_std"],
                         curl_radius=opt["curl_radius"], curl_pitch=opt["curl_pitch"],
                         seed=args.seed)
    hair = generate(spec)
    out_set = hair
    if args.do_fragment:
        gt = fragment(hair, opt["min_len"], opt["max_len"], opt["gap"],
                      opt["jitter"], seed=args.seed)
        out_set = gt.fragments
        if args.adjacency_out:
            lines = [f"{a} {b}" for a, b in gt.adjacency]
            _write_text(args.adjacency_out, "\n".join(lines) + "\n" if lines else "")
    hio.write_native(args.out, out_set)
    if args.cloud_out:
        cloud = sample_oriented_cloud(hair, opt["cloud_spacing"],
                                      opt["cloud_noise"], seed=args.seed)
        hio.write_oriented_cloud(args.cloud_out, cloud)
    print(f"wrote {len(out_set)} strands to {args.out}")
    return 0


_MERGE_OPTS = {
    "d_m": ("--d-m", _FLOAT, 2.0, "distance threshold, mm"),
    "theta_m": ("--theta-m", _FLOAT, 20.0, "angle threshold, degrees"),
    "max_passes": ("--max-passes", _INT, 100, "merge pass cap"),
}


def cmd_merge(args, config) -> int:
    opt = _resolve(args, _MERGE_OPTS, config)
    try:
        thresholds = MergeThresholds(opt["d_m"], np.deg2rad(opt["theta_m"]))
        if opt["max_passes"] < 1:
            raise ValueError("max_passes must be >= 1")
    except ValueError as e:
        raise ConfigError(str(e)) from None
    strands = hio.read_native(args.input)
    merged, log = merge_until_stable(strands, thresholds, opt["max_passes"])
    hio.write_native(args.out, merged)
    log_path = args.log_out or f"{args.out}.log"
    lines = ["# pass survivor absorbed jx jy jz ax ay az bx by bz"]
    for k, events in enumerate(log.passes):
        for ev in events:
            nums = " ".join(f"{v:.9g}" for v in
                            (*ev.new_joint, *ev.a_position, *ev.b_position))
            lines.append(f"{k} {ev.survivor} {ev.absorbed} {nums}")
    _write_text(log_path, "\n".join(lines) + "\n")
    print(f"{len(strands)} strands -> {len(merged)} after {len(log.passes)} passes "
          f"({log.num_merges} merges)")
    if args.adjacency:
        pairs = _read_adjacency(args.adjacency)
        gt = FragmentGroundTruth(fragments=strands, adjacency=pairs)
        frac, recovered, total = adjacency_recovery(gt, log)
        print(f"adjacency recovery {frac:.4f} ({recovered}/{total})")
    return 0


def _read_adjacency(path) -> tuple[tuple[int, int], ...]:
    pairs = []
    with open(path, "r", encoding="ascii") as fh:
        for num, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ConfigError(f"{path}:{num}: expected 'frag_a frag_b'")
            pairs.append((int(parts[0]), int(parts[1])))
    return tuple(pairs)


def cmd_refine(args, config) -> int:
    opt = _resolve(args, _REFINE_OPTS, config)
    try:
        cfg = RefineConfig(
            lambda_smooth=opt["lambda_smooth"],
            theta_s=np.deg2rad(opt["theta_s"]),
            learning_rate=opt["learning_rate"],
            iterations=opt["iterations"],
            split_length=opt["split_length"],
            schedule_start=MergeThresholds(opt["d_start"], np.deg2rad(opt["theta_start"])),
            schedule_end=MergeThresholds(opt["d_end"], np.deg2rad(opt["theta_end"])),
            merge_every=opt["merge_every"],
            mask_threshold=opt["mask_threshold"],
            lambda_dir=opt["lambda_dir"],
            sample_spacing=opt["sample_spacing"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    strands = hio.read_native(args.input)
    target = hio.read_oriented_cloud(args.target)
    if cfg.iterations == 0:
        hio.write_native(args.out, strands)
        print("0 iterations: copied input")
        return 0

    def log_loss(iteration, total, data, smooth):
        if iteration % 100 == 0:
            print(f"{iteration} {total:.6g} {data:.6g} {smooth:.6g}")

    refined = run_stage3(strands, target, cfg, callback=log_loss,
                         workers=args.threads)
    hio.write_native(args.out, refined)
    print(f"refined {len(strands)} -> {len(refined)} strands")
    return 0


_EVAL_OPTS = {
    "thresholds": ("--thresholds", _STR, "2/20,4/40", "mm/deg pairs, comma separated"),
    "spacing": ("--spacing", _FLOAT, 1.0, "resampling spacing, mm"),
}


def cmd_evaluate(args, config) -> int:
    opt = _resolve(args, _EVAL_OPTS, config)
    try:
        pairs = []
        for part in opt["thresholds"].split(","):
            mm, deg = part.strip().split("/")
            pairs.append(MatchThresholds(float(mm), np.deg2rad(float(deg))))
        if opt["spacing"] <= 0:
            raise ValueError("spacing must be positive")
    except (ValueError, IndexError) as e:
        raise ConfigError(f"bad thresholds or spacing: {e}") from None
    pred = hio.read_native(args.pred)
    gt = hio.read_native(args.gt)
    reports = evaluate(pred, gt, pairs, opt["spacing"],
                       with_sc=not args.no_sc, workers=args.threads)
    print(f"{'thr mm/deg':>10}  {'precision':>9}  {'recall':>9}  {'f1':>9}  {'sc':>9}")
    for r in reports:
        thr = f"{r.thresholds.d_tau:g}/{np.rad2deg(r.thresholds.theta_tau):g}"
        sc = "-" if r.strand_consistency is None else f"{r.strand_consistency:.4f}"
        print(f"{thr:>10}  {r.precision:9.4f}  {r.recall:9.4f}  {r.f1:9.4f}  {sc:>9}")
    prefix = args.out or f"{args.pred}.report"
    _write_text(prefix + ".json", reports_to_json(reports) + "\n")
    blocks = ["\n".join(r.record_lines()) for r in reports]
    _write_text(prefix + ".txt", "\n\n".join(blocks) + "\n")
    return 0


_ORIENT_OPTS = {
    "angles": ("--angles", _INT, 32, "number of probe orientations"),
    "sigma": ("--sigma", _FLOAT, 2.0, "Gabor envelope sigma, px"),
    "wavelength": ("--wavelength", _FLOAT, 4.0, "Gabor wavelength, px"),
    "aspect": ("--aspect", _FLOAT, 0.5, "Gabor envelope aspect"),
    "kernel_size": ("--kernel-size", _INT, 9, "Gabor kernel size, px (odd)"),
}


def cmd_orient(args, config) -> int:
    opt = _resolve(args, _ORIENT_OPTS, config)
    image = load_gray(args.input)
    try:
        params = GaborParams(opt["sigma"], opt["wavelength"], opt["aspect"],
                             opt["kernel_size"])
        omap = orient_map(image, opt["angles"], params)
    except StrandKitError as e:
        raise ConfigError(str(e)) from None
    save_orientation_map(args.out, omap)
    print(f"wrote {omap.width}x{omap.height} orientation map to {args.out}")
    return 0


_CONVERT_OPTS = {
    "in_format": ("--in-format", _STR, "", "hair|usc|native (default: by extension)"),
    "out_format": ("--out-format", _STR, "", "hair|native (default: by extension)"),
    "unit_scale": ("--unit-scale", _FLOAT, 0.0, "mm per file unit (required for usc)"),
}

_EXT_FORMAT = {".hair": "hair", ".data": "usc", ".usc": "usc",
               ".strands": "native", ".txt": "native"}


def _sniff(path, explicit: str, what: str) -> str:
    if explicit:
        return explicit
    import os
    ext = os.path.splitext(str(path))[1].lower()
    if ext in _EXT_FORMAT:
        return _EXT_FORMAT[ext]
    raise ConfigError(f"cannot infer {what} format from {path!r}; "
                      f"pass --{what}-format")


def cmd_convert(args, config) -> int:
    opt = _resolve(args, _CONVERT_OPTS, config)
    in_fmt = _sniff(args.input, opt["in_format"], "in")
    out_fmt = _sniff(args.out, opt["out_format"], "out")
    scale = opt["unit_scale"]
    if in_fmt == "usc" and scale <= 0:
        raise ConfigError("reading USC files requires --unit-scale (mm per unit)")
    if in_fmt == "hair":
        strands = hio.read_hair(args.input, scale if scale > 0 else 1.0)
    elif in_fmt == "usc":
        strands, dropped = hio.read_usc(args.input, scale)
        if dropped:
            print(f"warning: dropped {dropped} degenerate strands", file=sys.stderr)
    else:
        strands = hio.read_native(args.input)
    if out_fmt == "hair":
        hio.write_hair(args.out, strands)
    elif out_fmt == "native":
        hio.write_native(args.out, strands)
    else:
        raise ConfigError(f"cannot write format {out_fmt!r}")
    print(f"converted {len(strands)} strands: {in_fmt} -> {out_fmt}")
    return 0


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strandkit",
                                description="hair strand reconstruction toolkit")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for spatial queries (output-invariant)")
    p.add_argument("--seed", type=int, default=0, help="global random seed")
    p.add_argument("--config", default=None, help="flat key=value config file")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic hairstyle")
    _add_opts(sp, _SYNTH_OPTS)
    sp.add_argument("-o", "--out", required=True, help="output strand file")
    sp.add_argument("--fragment", dest="do_fragment", action="store_true",
                    help="emit fragmented strands instead of whole ones")
    sp.add_argument("--adjacency-out", default=None,
                    help="ground-truth adjacency sidecar (with --fragment)")
    sp.add_argument("--cloud-out", default=None,
                    help="write an oriented point cloud of the hairstyle")
    sp.set_defaults(func=cmd_synth)

    mp = sub.add_parser("merge", help="merge strand fragments")
    _add_opts(mp, _MERGE_OPTS)
    mp.add_argument("-i", "--input", required=True)
    mp.add_argument("-o", "--out", required=True)
    mp.add_argument("--log-out", default=None,
                    help="merge event sidecar file (default: <out>.log)")
    mp.add_argument("--adjacency", default=None,
                    help="ground-truth adjacency file; prints recovery")
    mp.set_defaults(func=cmd_merge)

    rp = sub.add_parser("refine", help="refine strands against a point cloud")
    _add_opts(rp, _REFINE_OPTS)
    rp.add_argument("-i", "--input", required=True)
    rp.add_argument("-t", "--target", required=True, help="oriented cloud file")
    rp.add_argument("-o", "--out", required=True)
    rp.set_defaults(func=cmd_refine)

    ep = sub.add_parser("evaluate", help="score a reconstruction")
    _add_opts(ep, _EVAL_OPTS)
    ep.add_argument("--pred", required=True)
    ep.add_argument("--gt", required=True)
    ep.add_argument("--no-sc", action="store_true",
                    help="omit strand consistency (predictions without topology)")
    ep.add_argument("-o", "--out", default=None,
                    help="report file prefix (default: <pred>.report)")
    ep.set_defaults(func=cmd_evaluate)

    op = sub.add_parser("orient", help="orientation map from an image")
    _add_opts(op, _ORIENT_OPTS)
    op.add_argument("-i", "--input", required=True)
    op.add_argument("-o", "--out", required=True)
    op.set_defaults(func=cmd_orient)

    cp = sub.add_parser("convert", help="convert between hair file formats")
    _add_opts(cp, _CONVERT_OPTS)
    cp.add_argument("-i", "--input", required=True)
    cp.add_argument("-o", "--out", required=True)
    cp.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else {}
        return args.func(args, config)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (FileFormatError, EmptyTarget, EmptyGroundTruth, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StrandKitError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
