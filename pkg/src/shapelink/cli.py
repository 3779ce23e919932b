"""Command-line entry point.

Every run reads one JSON config (``--config``), applies ``--override
key=value`` edits (dotted keys, JSON values), writes its outputs under
``--out`` with fixed file names and records a ``manifest.json`` that
``shapelink replay`` can re-execute.

Exit codes: 0 success, 2 configuration error, 3 file/IO error, 4 numerical
failure.
"""

import argparse
import dataclasses
import json
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .channel import BlockFadingConfig
from .constellation import (
    ShapingSpec, entropy, load_constellation, make_apsk32, make_qam32, save_constellation,
    shaped_baseline, symbol_distribution,
)
from .errors import (
    AlistParseError, ConfigError, DivergenceError, EncodingSetupError, EqualizerError, SaturationError,
)
from .fec import builtin_codes, load_code
from .metrics import (
    CodedSystem, UncodedSystem, ber_sweep, capacity_curve, gap_to_capacity, write_ber_csv,
    write_capacity_csv,
)
from .receiver import ReceiverConfig
from .shaping_code import build_shaping_code
from .training import (
    TrainConfig, TrainIddConfig, load_checkpoint, report, save_checkpoint, train_idd, train_non_idd,
    write_history_csv,
)
from .transmitter import Link

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4
BUILTIN_CONSTELLATIONS = {"apsk32": make_apsk32, "qam32": make_qam32}


# -- config plumbing -------------------------------------------------------

def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip(), val


def apply_override(cfg, key, val):
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        if isinstance(node, list):
            node = node[int(p)]
        else:
            node = node.setdefault(p, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = val
    else:
        node[last] = val


def load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def build_dataclass(cls, cfg, where):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(cfg) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {unknown}")
    try:
        return cls(**cfg)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def resolve_constellation(spec, S=(), p0=None):
    """Built-in name (relabeled and rescaled when shaping applies) or a JSON path."""
    if spec in BUILTIN_CONSTELLATIONS:
        c = BUILTIN_CONSTELLATIONS[spec]()
        if S:
            c = shaped_baseline(c, ShapingSpec(S, p0))
        return c
    return load_constellation(spec)


def manifest(command, cfg, seed, outputs):
    return {"command": command, "config": cfg, "seed": seed, "outputs": sorted(outputs),
            "versions": {"shapelink": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()}}


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- subcommands -----------------------------------------------------------

def cmd_train(cfg, out, seed, threads, mode=None, resume=None, checkpoint_every=0):
    cfg = dict(cfg)
    mode = mode or cfg.pop("mode", "non-idd")
    cfg.pop("mode", None)
    if seed is not None:
        cfg["seed"] = seed
    if mode == "non-idd":
        tc = build_dataclass(TrainConfig, cfg, "train")
        driver, S = train_non_idd, tc.S
    elif mode == "idd":
        tc = build_dataclass(TrainIddConfig, cfg, "train-idd")
        # surfaces frame geometry errors before any work is done
        Link(load_code(tc.code), make_apsk32(), build_shaping_code(tc.k_s, tc.n_s), tc.S)
        driver, S = train_idd, tc.S
    else:
        raise ConfigError(f"train: mode must be 'non-idd' or 'idd', got {mode!r}")
    state = None
    if resume:
        state, _ = load_checkpoint(resume)
    ckpt = os.path.join(out, "checkpoint.json")

    def on_step(st):
        if checkpoint_every and st.step % checkpoint_every == 0:
            save_checkpoint(st, tc, ckpt)

    state = driver(tc, state, on_step=on_step)
    save_checkpoint(state, tc, ckpt)
    c = state.params.constellation(S)
    save_constellation(c, os.path.join(out, "constellation.json"))
    write_history_csv(state.history, os.path.join(out, "loss.csv"))
    rep = report(state, S)
    rep["mode"] = mode
    if mode == "idd":
        rep["ebn0_db"] = list(tc.ebn0_db)
    write_json(rep, os.path.join(out, "report.json"))
    return {"mode": mode, **dataclasses.asdict(tc)}, ["checkpoint.json", "constellation.json", "loss.csv",
                                                     "report.json"]


def _system(sc, default_rate, where):
    sc = dict(sc)
    if sc.get("uncoded"):
        return UncodedSystem(resolve_constellation(sc.get("constellation", "apsk32")),
                             int(sc.get("symbols_per_frame", 1000)))
    code = load_code(sc["code"]) if "code" in sc else None
    if code is None:
        raise ConfigError(f"{where}: missing 'code'")
    shaping = sc.get("shaping")
    S = tuple(sc.get("S", ()))
    shp = build_shaping_code(*shaping) if shaping else None
    c = resolve_constellation(sc.get("constellation", "apsk32"), S, shp.p0 if shp else None)
    link = Link(code, c, shp, S, sc.get("seed1", 1), sc.get("seed2", 2))
    rcfg = build_dataclass(ReceiverConfig, sc.get("receiver", {}), f"{where}.receiver")
    ch = sc.get("channel", {"type": "awgn"})
    fading = None
    if ch.get("type", "awgn") == "fading":
        fading = build_dataclass(BlockFadingConfig, {k: v for k, v in ch.items() if k != "type"},
                                 f"{where}.channel")
    elif ch.get("type") != "awgn":
        raise ConfigError(f"{where}.channel.type must be 'awgn' or 'fading'")
    return CodedSystem(link, rcfg, fading, sc.get("rate", default_rate))


def cmd_ber(cfg, out, seed, threads):
    cfg = dict(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    cfg["seed"] = seed
    systems = cfg.get("systems")
    if not systems:
        raise ConfigError("ber: 'systems' must list at least one system")
    grid = cfg.get("ebn0_db")
    if not grid:
        raise ConfigError("ber: 'ebn0_db' grid is empty")
    paired = cfg.get("paired", True)
    path = os.path.join(out, "ber.csv")
    rows = []
    for i, sc in enumerate(systems):
        name = sc.get("name", f"system{i}")
        system = _system(sc, cfg.get("rate"), f"ber.systems[{i}]")
        pts = ber_sweep(system, grid, int(cfg.get("min_errors", 100)), int(float(cfg.get("max_bits", 1e8))),
                        int(cfg.get("frames_per_batch", 50)), seed if paired else seed + 1000 * i, threads)
        rows.append((name, pts))
    write_ber_csv(rows, path)
    return cfg, ["ber.csv"]


def cmd_capacity(cfg, out, seed, threads):
    cfg = dict(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    cfg["seed"] = seed
    S = tuple(cfg.get("S", ()))
    p0 = cfg.get("p0")
    if S and p0 is None:
        raise ConfigError("capacity: 'p0' is required when 'S' is given")
    c = resolve_constellation(cfg.get("constellation", "apsk32"), S, p0)
    dist = symbol_distribution(c.m, ShapingSpec(S, p0)) if S else None
    samples = int(float(cfg.get("samples", 100_000)))
    grid = cfg.get("snr_db", list(np.arange(0.0, 20.01, 1.0)))
    rows = capacity_curve(c, dist, grid, samples, seed)
    write_capacity_csv(rows, os.path.join(out, "capacity.csv"))
    outputs = ["capacity.csv"]
    if cfg.get("rate_target") is not None:
        R = float(cfg["rate_target"])
        gap, snr = gap_to_capacity(c, dist, R, int(float(cfg.get("gap_samples", samples))), seed,
                                   return_snr=True)
        with open(os.path.join(out, "gap.csv"), "w") as fh:
            fh.write("rate_target,snr_db,gap_db\n")
            fh.write(f"{R!r},{snr!r},{gap!r}\n")
        outputs.append("gap.csv")
    return cfg, outputs


def cmd_export(cfg, out, seed, threads):
    """Write a constellation (built-in name, trained checkpoint or JSON file) to JSON."""
    src = cfg.get("source", "apsk32")
    if src.endswith(".json") and os.path.exists(src):
        with open(src) as fh:
            obj = json.load(fh)
        if "params" in obj:
            state, ckcfg = load_checkpoint(src)
            c = state.params.constellation(tuple(ckcfg.get("S", ())))
        else:
            c = load_constellation(src)
    else:
        S = tuple(cfg.get("S", ()))
        c = resolve_constellation(src, S, cfg.get("p0"))
    save_constellation(c, os.path.join(out, "constellation.json"))
    return cfg, ["constellation.json"]


def cmd_import(cfg, out, seed, threads):
    """Validate a constellation file and summarize it."""
    if "path" not in cfg:
        raise ConfigError("import: 'path' is required")
    c = load_constellation(cfg["path"])
    S = tuple(cfg.get("S", ()))
    dist = symbol_distribution(c.m, ShapingSpec(S, cfg["p0"])) if S else None
    save_constellation(c, os.path.join(out, "constellation.json"))
    write_json({"m": c.m, "M": c.M, "mean_energy": c.mean_energy(dist),
                "entropy_bits": entropy(dist) if dist is not None else float(c.m)},
               os.path.join(out, "summary.json"))
    return cfg, ["constellation.json", "summary.json"]


def cmd_codes(cfg, out, seed, threads):
    rows = []
    for name in sorted(["hamming74", *builtin_codes()]):
        H = load_code(name)
        rows.append({"name": name, "n": H.n, "k": H.k, "rate": H.k / H.n, "checks": H.n_checks})
    if out:
        write_json(rows, os.path.join(out, "codes.json"))
    for r in rows:
        print(f"{r['name']:16s} n={r['n']:5d} k={r['k']:5d} rate={r['rate']:.4f}")
    return cfg, ["codes.json"] if out else []


COMMANDS = {"train": cmd_train, "train-idd": cmd_train, "ber": cmd_ber, "capacity": cmd_capacity,
            "export": cmd_export, "import": cmd_import, "codes": cmd_codes}


def run(command, cfg, out, seed=None, threads=1, resume=None, checkpoint_every=0):
    if out:
        os.makedirs(out, exist_ok=True)
    if command in ("train", "train-idd"):
        mode = "idd" if command == "train-idd" else None
        used, outputs = cmd_train(cfg, out, seed, threads, mode, resume, checkpoint_every)
    else:
        used, outputs = COMMANDS[command](cfg, out, seed, threads)
    if out:
        write_json(manifest(command, used, used.get("seed", seed), outputs + ["manifest.json"]),
                   os.path.join(out, "manifest.json"))
    return used


def build_parser():
    p = argparse.ArgumentParser(prog="shapelink", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["replay"]:
        sp = sub.add_parser(name)
        if name == "replay":
            sp.add_argument("manifest", help="manifest.json of an earlier run")
        else:
            sp.add_argument("--config", help="JSON run config")
            sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=None if name == "codes" else "out")
        sp.add_argument("--threads", type=int, default=1)
        if name in ("train", "train-idd"):
            sp.add_argument("--resume", help="checkpoint.json to continue from")
            sp.add_argument("--checkpoint-every", type=int, default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            with open(args.manifest) as fh:
                man = json.load(fh)
            run(man["command"], man["config"], args.out, args.seed, args.threads)
            return 0
        cfg = load_config(args.config)
        for item in args.override:
            apply_override(cfg, *parse_override(item))
        run(args.command, cfg, args.out, args.seed, args.threads,
            getattr(args, "resume", None), getattr(args, "checkpoint_every", 0))
        return 0
    except (ConfigError, AlistParseError, EncodingSetupError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, SaturationError, EqualizerError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
