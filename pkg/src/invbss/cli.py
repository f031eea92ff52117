"""Command line entry point: ``synth``, ``featurize``, ``bss`` and ``report``.

Every command writes into an output directory a ``manifest.json`` listing
the files it produced (with SHA-256 digests) and a ``config.ini`` echo of
the parsed configuration.  Exit status 0 means the command ran to the
end, whatever the verdict; operational failures exit with 1 and usage
errors with 2.
"""
import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time

import numpy as np

from . import __version__
from .audiofeatures import featurize, reduce_dimension
from .config import ConfigError, dump_config, load_config, thread_count
from .errors import BSSError, DimensionMismatchError
from .generators import (SceneSpec, default_voices, mix_scene, read_ground_truth, read_wav,
                         write_ground_truth, write_wav)
from .invariants import build_multiplets, write_multiplets_csv
from .manifold import write_chart_csv, write_source_map_csv
from .pipeline import analyze_series, match_sources
from .separability import linearity_test, report_json
from .trajectory import load_series, save_series

log = logging.getLogger("invbss")

MANIFEST = "manifest.json"


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command, files, extra=None):
    """Record ``files`` (names relative to ``out_dir``) with their digests."""
    entries = {name: {"sha256": sha256(os.path.join(out_dir, name)),
                      "bytes": os.path.getsize(os.path.join(out_dir, name))}
               for name in sorted(files)}
    doc = {"command": command, "tool": "invbss", "version": __version__, "files": entries}
    if extra:
        doc.update(extra)
    with open(os.path.join(out_dir, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def read_manifest(run_dir):
    path = os.path.join(run_dir, MANIFEST)
    if not os.path.exists(path):
        raise BSSError(f"missing manifest file: {path}")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for name in doc.get("files", {}):
        if not os.path.exists(os.path.join(run_dir, name)):
            raise BSSError(f"file listed in manifest is missing: {os.path.join(run_dir, name)}")
    return doc


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _prepare(args):
    cfg = load_config(args.config, args.set or ())
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "config.ini"), dump_config(cfg))
    return cfg


# ---------------------------------------------------------------- synth


def cmd_synth(args):
    import dataclasses
    cfg = _prepare(args)
    syn = cfg.synth
    if args.duration is not None:
        syn = dataclasses.replace(syn, duration_s=float(args.duration))
    if args.seed is not None:
        syn = dataclasses.replace(syn, seed=int(args.seed))
    if len(syn.pitches_hz) != 2:
        raise ConfigError("synth.pitches_hz must list two pitches")
    voices = tuple(dataclasses.replace(v, pitch_hz=p)
                   for v, p in zip(default_voices(syn.seed), syn.pitches_hz))
    spec = SceneSpec(voices=voices, relative_gain_db=(0.0, syn.relative_gain_db),
                     duration_s=syn.duration_s, sample_rate=cfg.features.sample_rate,
                     peak=syn.peak)
    log.info("synthesizing %.1f s scene", syn.duration_s)
    scene = mix_scene(spec)
    write_wav(os.path.join(args.out, "scene.wav"), scene.pcm, scene.sample_rate)
    write_ground_truth(os.path.join(args.out, "ground_truth.csv"), scene)
    write_manifest(args.out, "synth", ["scene.wav", "ground_truth.csv", "config.ini"],
                   {"energy_offset_db": round(scene.energy_db(1), 6),
                    "clipped_fraction": scene.clipped_fraction,
                    "duration_s": syn.duration_s, "seed": syn.seed})
    log.info("wrote %s", os.path.join(args.out, "scene.wav"))
    return 0


# ---------------------------------------------------------------- featurize


def _find_truth(path, explicit):
    if explicit:
        return explicit
    folder = os.path.dirname(os.path.abspath(path))
    man = os.path.join(folder, MANIFEST)
    if os.path.exists(man):
        with open(man, encoding="utf-8") as fh:
            doc = json.load(fh)
        for name in doc.get("files", {}):
            if name.startswith("ground_truth"):
                return os.path.join(folder, name)
    return None


def cmd_featurize(args):
    cfg = _prepare(args)
    threads = thread_count(cfg, args.threads)
    rate, pcm = read_wav(args.input)
    if rate != cfg.features.sample_rate:
        raise BSSError(f"{args.input}: sample rate {rate} Hz, expected {cfg.features.sample_rate}")
    feats = featurize(pcm.astype(float) / 32767.0, cfg.features, workers=threads)
    files = ["config.ini", "features.csv"]
    save_series(feats, os.path.join(args.out, "features.csv"))
    log.info("%d feature frames at %.3f s", len(feats.samples), feats.dt)
    if cfg.reduce.enabled and not args.no_reduce:
        r = cfg.reduce
        traj, model = reduce_dimension(feats, r.target_dim, r.neighborhoods, r.n_global,
                                       r.overlap, r.max_residual, r.seed)
        save_series(traj, os.path.join(args.out, "trajectory.csv"))
        _write_text(os.path.join(args.out, "reduction.json"), report_json(model))
        files += ["trajectory.csv", "reduction.json"]
    truth = _find_truth(args.input, args.truth)
    if truth:
        shutil.copyfile(truth, os.path.join(args.out, "ground_truth.csv"))
        files.append("ground_truth.csv")
    write_manifest(args.out, "featurize", files, {"input": os.path.basename(args.input),
                                                  "input_sha256": sha256(args.input)})
    return 0


# ---------------------------------------------------------------- bss


def run_bss(series, cfg, workers=1):
    """Analysis plus the report document; no file output."""
    analysis = analyze_series(series, cfg.cells, cfg.search, workers=workers,
                              clock=time.perf_counter)
    result = analysis.search
    doc = {"tool": {"name": "invbss", "version": __version__},
           "input": {"n_samples": int(len(series.samples)), "n_channels": int(series.n_channels),
                     "dt": float(series.dt)},
           "cells": analysis.cell_stats(),
           "frames": analysis.frame_diagnostics()}
    doc.update(result.to_dict())
    lin = None
    if cfg.linearity.enabled and result.source_map is not None:
        try:
            lin = linearity_test(result.source_map, analysis.velocity, analysis.index,
                                 cfg.linearity.threshold, cfg.linearity.factorization_threshold,
                                 gradient_smoothing=cfg.linearity.gradient_smoothing)
        except BSSError as exc:
            doc["linearity_note"] = str(exc)
    doc["linearity"] = lin.to_dict() if lin is not None else None
    doc["linear"] = bool(lin.linear) if lin is not None else None
    doc["direction_cov"] = lin.direction_cov if lin is not None else None
    return analysis, doc


def cmd_bss(args):
    cfg = _prepare(args)
    threads = thread_count(cfg, args.threads)
    series = load_series(args.input)
    log.info("analysing %d samples of %d channels", len(series.samples), series.n_channels)
    t0 = time.perf_counter()
    analysis, doc = run_bss(series, cfg, workers=threads)
    doc["input"]["name"] = os.path.basename(args.input)
    doc["input"]["sha256"] = sha256(args.input)
    # the runtime section (thread count) must not change the report bytes
    doc["config"] = dump_config(cfg, runtime=False)
    result = analysis.search
    out = args.out
    files = ["config.ini", "report.json"]
    grouping = result.grouping or (result.candidates[0].grouping if result.candidates else None)
    if grouping is not None:
        try:
            field = build_multiplets(analysis.invariants, grouping)
            write_multiplets_csv(field, os.path.join(out, "multiplets.csv"))
            files.append("multiplets.csv")
        except BSSError as exc:
            log.warning("no multiplet table: %s", exc)
    if result.source_map is not None:
        write_source_map_csv(result.source_map, os.path.join(out, "source_map.csv"), series.t0)
        files.append("source_map.csv")
        for name, chart in zip("AB", result.charts):
            write_chart_csv(chart, os.path.join(out, f"chart_{name}.csv"))
            files.append(f"chart_{name}.csv")
    truth = _find_truth(args.input, args.truth)
    if truth:
        shutil.copyfile(truth, os.path.join(out, "ground_truth.csv"))
        files.append("ground_truth.csv")
    doc["files"] = sorted(files)
    _write_text(os.path.join(out, "report.json"), report_json(doc))
    timings = dict(analysis.timings)
    timings["total"] = time.perf_counter() - t0
    timings["threads"] = threads
    _write_text(os.path.join(out, "timings.json"), json.dumps(timings, indent=2, sort_keys=True) + "\n")
    files.append("timings.json")
    write_manifest(out, "bss", files, {"verdict": result.verdict})
    log.info("verdict: %s", result.verdict)
    return 0


# ---------------------------------------------------------------- report


def _read_source_map(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2, missing_values="",
                         filling_values=np.nan)
    return header, data


def evaluate_run(run_dir):
    """Spearman pairing of the recovered coordinates with the ground truth of a run."""
    header, data = _read_source_map(os.path.join(run_dir, "source_map.csv"))
    t_truth, truth = read_ground_truth(os.path.join(run_dir, "ground_truth.csv"))
    t = data[:, 0]
    sigma = data[:, 1:]
    ok = np.all(np.isfinite(sigma), axis=1) & (t >= t_truth[0]) & (t <= t_truth[-1])
    ref = np.column_stack([np.interp(t[ok], t_truth, truth[:, j]) for j in range(truth.shape[1])])
    pairs, rho = match_sources(sigma[ok], ref)
    names = header[1:]
    rows = [{"coordinate": names[i], "source": int(src) + 1, "spearman": float(r)}
            for i, (src, r) in enumerate(pairs)]
    paired = {i for i, _ in enumerate(pairs)}
    cross = max((abs(rho[i, j]) for i in paired for j in range(rho.shape[1])
                 if j != pairs[i][0]), default=0.0)
    return {"pairs": rows, "cross_max": float(cross), "n_samples": int(ok.sum()),
            "matrix": rho.tolist()}, t[ok], sigma[ok], ref


def cmd_report(args):
    run = args.run_dir
    man = read_manifest(run)
    lines = [f"run: {run}", f"command: {man.get('command')}"]
    if man.get("command") == "bss":
        with open(os.path.join(run, "report.json"), encoding="utf-8") as fh:
            rep = json.load(fh)
        c = rep["cells"]
        lines.append(f"cells: {c['retained']} retained, {c['dropped']} dropped, "
                     f"{c['singular']} singular, {c['degenerate']} degenerate")
        fr = rep["frames"]
        lines.append(f"frames: whitening error {fr['max_whitening_error']:.2e}, "
                     f"off-diagonal {fr['max_relative_offdiagonal']:.2e}")
        for cand in rep["candidates"]:
            ta, tb, fa = cand["test_a"], cand["test_b"], cand["factorization"]
            parts = [f"  {cand['label']}:"]
            if ta:
                parts.append(f"manifold {ta['residual_fraction']:.4f}/{tb['residual_fraction']:.4f}")
            if fa:
                parts.append(f"factorization {fa['statistic']:.4f} (threshold {fa['threshold']})")
            if cand.get("note"):
                parts.append(cand["note"])
            lines.append(" ".join(parts))
        lines.append(f"verdict: {rep['verdict']}")
        if rep.get("linearity") is not None:
            lines.append(f"linear: {rep['linear']} (direction CoV {rep['direction_cov']})")
        files = man["files"]
        if "ground_truth.csv" in files and "source_map.csv" in files:
            ev, t, sigma, ref = evaluate_run(run)
            lines.append("evaluation against ground truth (Spearman):")
            for row in ev["pairs"]:
                lines.append(f"  {row['coordinate']} ~ source {row['source']}: {row['spearman']:+.4f}")
            lines.append(f"  largest cross-pair |rho|: {ev['cross_max']:.4f}")
            _write_text(os.path.join(run, "evaluation.json"),
                        json.dumps(ev, indent=2, sort_keys=True) + "\n")
            with open(os.path.join(run, "scatter.csv"), "w", encoding="utf-8") as fh:
                head = ["t"] + [f"sigma{i + 1}" for i in range(sigma.shape[1])]
                head += [f"truth{j + 1}" for j in range(ref.shape[1])]
                fh.write(",".join(head) + "\n")
                for k in range(len(t)):
                    vals = [t[k], *sigma[k], *ref[k]]
                    fh.write(",".join(repr(float(v)) for v in vals) + "\n")
    else:
        for name, entry in man["files"].items():
            lines.append(f"  {name}  {entry['sha256'][:16]}  {entry['bytes']} bytes")
    text = "\n".join(lines) + "\n"
    _write_text(os.path.join(run, "summary.txt"), text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="invbss", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"invbss {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_input=True):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, help="worker cap for parallel stages")
        if needs_input:
            sp.add_argument("input")
            sp.add_argument("--truth", help="ground-truth CSV to attach to the run")

    s = sub.add_parser("synth", help="synthesize the two-voice scene")
    common(s, needs_input=False)
    s.add_argument("--duration", type=float, help="scene length in seconds")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("featurize", help="mel features and 2-D trajectory of a WAV file")
    common(f)
    f.add_argument("--no-reduce", action="store_true", help="stop after the mel features")
    f.set_defaults(func=cmd_featurize)

    b = sub.add_parser("bss", help="separability analysis of a trajectory file")
    common(b)
    b.set_defaults(func=cmd_bss)

    r = sub.add_parser("report", help="summarize a run directory")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return 2
    except DimensionMismatchError as exc:
        log.error("intrinsic dimension %s: %s", exc.intrinsic_dim, exc)
        return 1
    except (BSSError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
