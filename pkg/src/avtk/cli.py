"""Command-line entry point: synth, train, eval, groups, uncmap, gradcheck.

Exit codes: 0 ok, 2 config/argument, 3 I/O, 4 numeric divergence,
5 artifact mismatch.  All timestamped output is confined to lines
prefixed '#', so artifacts are byte-reproducible given config + seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checks, grouping, model, storage, synthdata, uncertainty
from .model import ConfigError, DivergenceError, ModelConfig
from .synthdata import DataError, DatasetConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_MISMATCH = 5


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def load_run_config(path):
    """JSON run config with 'model' and 'data' sections; unknown keys rejected."""
    if path is None:
        return {}, {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read config: {e}")
    except json.JSONDecodeError as e:
        raise CliError(EXIT_CONFIG, f"malformed config JSON: {e}")
    unknown = set(raw) - {"model", "data"}
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown config sections: {sorted(unknown)}")
    return raw.get("model", {}), raw.get("data", {})


def _build_model_config(model_dict, **overrides):
    d = dict(model_dict)
    d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ModelConfig.from_dict(d)
    except (ConfigError, TypeError) as e:
        raise CliError(EXIT_CONFIG, f"bad model config: {e}")


def _build_data_config(data_dict):
    known = set(DatasetConfig.__dataclass_fields__)
    unknown = set(data_dict) - known
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown data config keys: {sorted(unknown)}")
    return DatasetConfig(**data_dict)


def _sync_model_to_manifest(mc: ModelConfig, manifest):
    return ModelConfig.from_dict({**mc.to_dict(),
                                  "image_size": manifest["canvas"],
                                  "num_frames": manifest["num_frames"],
                                  "num_classes": manifest["num_classes"],
                                  "audio_dim": manifest["audio_dim"]})


# -- commands ------------------------------------------------------------------


def cmd_synth(args):
    _, data_dict = load_run_config(args.config)
    dcfg = _build_data_config(data_dict)
    try:
        mix = tuple(float(x) for x in args.mix.split(","))
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad --mix value: {args.mix}")
    try:
        samples, manifest = synthdata.generate_dataset(args.seed, args.clips, mix, dcfg)
    except DataError as e:
        raise CliError(EXIT_CONFIG, str(e))
    try:
        synthdata.save_dataset(args.out, samples, manifest)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write dataset: {e}")
    counts = {t: manifest["types"].count(t) for t in synthdata.CLIP_TYPES}
    for t in synthdata.CLIP_TYPES:
        print(f"{t}\t{counts[t]}")
    print(f"total\t{args.clips}")
    return EXIT_OK


def _load_split(data_dir, split):
    try:
        return synthdata.load_dataset(data_dir, split)
    except KeyError:
        raise CliError(EXIT_CONFIG, f"unknown split {split!r}")
    except (OSError, storage.TensorFileError) as e:
        raise CliError(EXIT_IO, f"cannot load dataset: {e}")


def cmd_train(args):
    model_dict, _ = load_run_config(args.config)
    try:
        manifest = synthdata.load_manifest(args.data)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read dataset manifest: {e}")
    mc = _build_model_config(model_dict, seed=args.seed, steps=args.steps, lr=args.lr)
    mc = _sync_model_to_manifest(mc, manifest)
    try:
        ablate = model.normalize_ablation(args.ablate)
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, str(e))

    train_samples, _, _ = _load_split(args.data, "train")
    val_samples, _, _ = _load_split(args.data, "val")
    os.makedirs(args.out, exist_ok=True)
    log_lines = []

    def log(line):
        log_lines.append(line)
        if line.startswith("#"):
            print(line)

    try:
        params, history = model.train(train_samples, mc, ablate=ablate,
                                      val_samples=val_samples,
                                      early_stop_jf=args.early_stop_jf, log=log)
    except DivergenceError as e:
        raise CliError(EXIT_DIVERGED, str(e))

    storage.save_checkpoint(os.path.join(args.out, "checkpoint"), params)
    with open(os.path.join(args.out, "checkpoint", "config.json"), "w") as fh:
        json.dump({"model": mc.to_dict(), "ablate": sorted(ablate)}, fh,
                  indent=2, sort_keys=True)
    with open(os.path.join(args.out, "loss.csv"), "w") as fh:
        fh.write(history.loss_csv())
    report = model.evaluate_model(params, mc, val_samples, ablate=ablate)
    with open(os.path.join(args.out, "val_report.json"), "w") as fh:
        fh.write(report.to_json())
    print(report.table())
    return EXIT_OK


def _load_checkpoint(path):
    try:
        arrays = storage.load_checkpoint(path)
        with open(os.path.join(path, "config.json")) as fh:
            meta = json.load(fh)
    except (OSError, storage.TensorFileError) as e:
        raise CliError(EXIT_IO, f"cannot load checkpoint: {e}")
    try:
        mc = ModelConfig.from_dict(meta["model"])
    except ConfigError as e:
        raise CliError(EXIT_MISMATCH, f"checkpoint config invalid: {e}")
    expect = model.init_params(mc, np.random.default_rng(0))
    if set(expect) != set(arrays):
        raise CliError(EXIT_MISMATCH, "checkpoint parameters do not match config")
    for k in expect:
        if expect[k].data.shape != arrays[k].shape:
            raise CliError(EXIT_MISMATCH,
                           f"checkpoint shape mismatch for {k}: {arrays[k].shape}")
    from .autodiff import Tensor
    params = {k: Tensor(v) for k, v in arrays.items()}
    return params, mc, frozenset(meta.get("ablate", []))


def cmd_eval(args):
    params, mc, ablate = _load_checkpoint(args.checkpoint)
    samples, types, ids = _load_split(args.data, args.split)
    if not samples:
        raise CliError(EXIT_CONFIG, f"empty split {args.split!r}")
    report = model.evaluate_model(params, mc, samples, types=types, ids=ids,
                                  ablate=ablate)
    if args.report:
        try:
            with open(args.report, "w") as fh:
                fh.write(report.to_json())
        except OSError as e:
            raise CliError(EXIT_IO, f"cannot write report: {e}")
    print(report.table())
    return EXIT_OK


def _clip_from_split(args):
    samples, _, ids = _load_split(args.data, None)
    if not 0 <= args.clip < len(samples):
        raise CliError(EXIT_CONFIG, f"clip index {args.clip} out of range")
    return samples[args.clip]


def cmd_groups(args):
    params, mc, ablate = _load_checkpoint(args.checkpoint)
    clip = _clip_from_split(args)
    level = args.level - 1
    if not 0 <= level < len(mc.dims):
        raise CliError(EXIT_CONFIG, f"level {args.level} out of range")
    if not 0 <= args.frame < clip.frames.shape[0]:
        raise CliError(EXIT_CONFIG, f"frame {args.frame} out of range")
    result = model.forward(model.detach_params(params), mc, clip, ablate=ablate)
    if not result.assignments[level]:
        raise CliError(EXIT_CONFIG, "grouping disabled for this checkpoint (no-sgsm)")
    ga = result.assignments[level][args.frame]
    print(grouping.format_assignment(ga))
    if args.out_pgm:
        grid = mc.grid(level)
        label_map = ga.labels.reshape(grid, grid)
        denom = max(ga.num_groups - 1, 1)
        try:
            storage.write_pgm(args.out_pgm, label_map / denom)
        except OSError as e:
            raise CliError(EXIT_IO, f"cannot write PGM: {e}")
    return EXIT_OK


def cmd_uncmap(args):
    params, mc, ablate = _load_checkpoint(args.checkpoint)
    clip = _clip_from_split(args)
    result = model.forward(model.detach_params(params), mc, clip, ablate=ablate)
    delta = np.asarray(result.delta_norm.data)
    try:
        os.makedirs(args.out, exist_ok=True)
        for t in range(delta.shape[0]):
            img = uncertainty.uncertainty_image(delta[t])
            storage.write_pgm(os.path.join(args.out, f"frame_{t:02d}.pgm"), img)
            print(f"frame {t}\tmean_delta_norm {float(delta[t].mean()):.6f}")
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write uncertainty maps: {e}")
    return EXIT_OK


def cmd_gradcheck(args):
    results = checks.run_suite(seed=args.seed, corrupt=args.corrupt,
                               full_model_coords=args.coords)
    ok = True
    for name, (err, tol) in results.items():
        status = "PASS" if err < tol else "FAIL"
        if name == "corrupted_adjoint":
            status = "PASS(expected-fail)" if err >= tol else "FAIL(should-have-failed)"
        ok = ok and status.startswith("PASS")
        print(f"{name}\tmax_rel_err={err:.3e}\ttol={tol:.0e}\t{status}")
    return EXIT_OK if ok else EXIT_DIVERGED


# -- argument parsing ----------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="avtk",
                                description="audio-visual segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--clips", type=int, default=100)
    s.add_argument("--mix", default="0.4,0.3,0.3")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train a model on a dataset directory")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ablate", default="none",
                   help="none | no-sgsm | no-cst | no-ue (comma-separated combos allowed)")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--early-stop-jf", type=float, dest="early_stop_jf")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--report")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("groups", help="dump the group assignment for one frame")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--clip", type=int, required=True)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--level", type=int, default=1, help="1-based feature level")
    s.add_argument("--out-pgm", dest="out_pgm")
    s.set_defaults(fn=cmd_groups)

    s = sub.add_parser("uncmap", help="export per-frame uncertainty maps as PGM")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--clip", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_uncmap)

    s = sub.add_parser("gradcheck", help="finite-difference verification suite")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--coords", type=int, default=None,
                   help="sample this many coordinates per tensor in the full-model check")
    s.add_argument("--corrupt", action="store_true",
                   help="also run the deliberately-broken adjoint self-test")
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
