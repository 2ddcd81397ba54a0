"""Command-line front end: ``ccatl synth|run|grid|report``.

Settings resolve as flags > ``CCATL_*`` environment variables > config file
(or manifest) > built-in defaults.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from .cca import LINEAR, RBF
from .data import DataError, SynthConfig, save_csv, synth_generate
from .pipeline import (EXIT_INPUT, EXIT_OK, AVERAGE, ConfigError, ExperimentConfig,
                       read_accuracy_matrix, run_experiment, run_grid)
from .transfer import BASELINES

log = logging.getLogger("ccatl")

ENV_PREFIX = "CCATL_"
SYNTH_SECTION = "synth"
MAIN_SECTION = "experiment"
PAIR_PREFIX = "pair "


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _opt_int(s):
    return None if str(s).strip().lower() in ("", "none", "auto") else int(s)


def _opt_float(s):
    return None if str(s).strip().lower() in ("", "none", "auto") else float(s)


def _csv_list(s):
    if isinstance(s, (list, tuple)):
        return tuple(s)
    return tuple(x.strip() for x in str(s).split(",") if x.strip())


def _baselines(s):
    items = _csv_list(s)
    if items == ("all",):
        return BASELINES
    return items


def _widths(s):
    return tuple(int(x) for x in _csv_list(s))


# field -> (flag, parser); every entry is also reachable as CCATL_<FIELD>
OPTIONS = {
    "source": ("--source", str),
    "target": ("--target", str),
    "transfer_id": ("--transfer-id", str),
    "label_col": ("--label-col", str),
    "na_token": ("--na-token", str),
    "drop_cols": ("--drop-cols", _csv_list),
    "baselines": ("--baselines", _baselines),
    "k_impute": ("--k-impute", int),
    "k_classify": ("--k-classify", int),
    "rho": ("--rho", float),
    "kappa": ("--kappa", float),
    "kernel": ("--kernel", str),
    "gamma": ("--gamma", _opt_float),
    "mmd_kernel": ("--mmd-kernel", str),
    "dcca_epochs": ("--dcca-epochs", int),
    "dcca_lr": ("--dcca-lr", float),
    "dcca_lambda": ("--dcca-lambda", float),
    "dcca_widths": ("--dcca-widths", _widths),
    "latent_dim": ("--latent-dim", _opt_int),
    "supervised": ("--supervised", _bool),
    "seed": ("--seed", int),
    "out": ("--out", str),
    "force": ("--force", _bool),
}

SYNTH_OPTIONS = {f.name: f.type for f in fields(SynthConfig)}
_SYNTH_PARSE = {"int": int, "float": float, int: int, float: float}


def _synth_value(name, raw):
    return _SYNTH_PARSE[SYNTH_OPTIONS[name]](raw) if isinstance(raw, str) else raw


# --------------------------------------------------------------------------
# Layered configuration
# --------------------------------------------------------------------------

def _parse_layer(raw: dict, origin: str) -> dict:
    out = {}
    for key, val in raw.items():
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise ConfigError(f"{origin}: unknown option {key!r}")
        try:
            out[key] = OPTIONS[key][1](val)
        except ValueError as exc:
            raise ConfigError(f"{origin}: bad value for {key}: {exc}") from exc
    return out


def _parse_synth(raw: dict, origin: str) -> dict:
    out = {}
    for key, val in raw.items():
        key = key.replace("-", "_")
        if key not in SYNTH_OPTIONS:
            raise ConfigError(f"{origin}: unknown synth option {key!r}")
        try:
            out[key] = _synth_value(key, val)
        except ValueError as exc:
            raise ConfigError(f"{origin}: bad value for {key}: {exc}") from exc
    return out


def read_config_file(path) -> tuple:
    """Parse an INI file into ``(experiment, synth, pairs)`` layers.

    ``[experiment]`` holds run options, ``[synth]`` synthetic-data options and
    every ``[pair NAME]`` section one grid cell overriding ``[experiment]``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read(path, encoding="utf-8")
    exp, synth, pairs = {}, None, []
    for sec in cp.sections():
        body = dict(cp[sec])
        if sec == MAIN_SECTION:
            exp = _parse_layer(body, f"{path}[{sec}]")
        elif sec == SYNTH_SECTION:
            synth = _parse_synth(body, f"{path}[{sec}]")
        elif sec.startswith(PAIR_PREFIX):
            layer = _parse_layer(body, f"{path}[{sec}]")
            layer.setdefault("transfer_id", sec[len(PAIR_PREFIX):].strip())
            pairs.append(layer)
        else:
            raise ConfigError(f"{path}: unknown section [{sec}]")
    return exp, synth, pairs


def env_layer(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    raw = {}
    for key in OPTIONS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            raw[key] = environ[name]
    return _parse_layer(raw, "environment")


def flag_layer(ns) -> dict:
    out = {}
    for key, (flag, _) in OPTIONS.items():
        val = getattr(ns, key, None)
        if val is not None:
            out[key] = val
    return out


def synth_flag_layer(ns) -> dict:
    return {k: getattr(ns, "synth_" + k) for k in SYNTH_OPTIONS
            if getattr(ns, "synth_" + k, None) is not None}


def build_config(*layers, synth: dict = None) -> ExperimentConfig:
    merged = {}
    for layer in layers:
        merged.update(layer)
    if synth is not None:
        merged["synth"] = SynthConfig(**synth)
    return ExperimentConfig(**merged)


def _check_kernel(cfg: ExperimentConfig):
    for k in (cfg.kernel, cfg.mmd_kernel):
        if k not in (LINEAR, RBF):
            raise ConfigError(f"kernel must be {LINEAR} or {RBF}, got {k!r}")


def load_manifest(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    try:
        return [ExperimentConfig.from_dict(c) for c in data["configs"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed manifest {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _add_run_flags(p):
    for key, (flag, parse) in OPTIONS.items():
        if key == "force":
            p.add_argument("--force", action="store_const", const=True, default=None,
                           help="allow a source with fewer rows than the target")
            continue
        p.add_argument(flag, dest=key, type=parse, default=None)
    p.add_argument("--config", help="INI file with [experiment], [synth] and [pair NAME] sections")
    p.add_argument("--manifest", help="rerun the configs recorded in a manifest.json")
    p.add_argument("--synth", action="store_true", help="use generated data instead of files")
    _add_synth_flags(p)


def _add_synth_flags(p):
    for name, typ in SYNTH_OPTIONS.items():
        p.add_argument("--synth-" + name.replace("_", "-"), dest="synth_" + name,
                       type=_SYNTH_PARSE[typ], default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccatl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    ps = sub.add_parser("synth", help="write a synthetic source/target CSV pair")
    _add_synth_flags(ps)
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--label-col", default=None)
    ps.add_argument("--na-token", default=None)

    pr = sub.add_parser("run", help="run the baselines on one transfer pair")
    _add_run_flags(pr)

    pg = sub.add_parser("grid", help="run several transfer pairs and aggregate")
    _add_run_flags(pg)
    pg.add_argument("--pair", nargs=2, action="append", metavar=("SOURCE", "TARGET"),
                    default=None, help="add a transfer pair (repeatable)")
    pg.add_argument("--synth-seeds", type=_widths, default=None,
                    help="comma-separated seeds, one synthetic pair each")
    pg.add_argument("--jobs", type=int, default=None)

    pp = sub.add_parser("report", help="print or merge accuracy matrices")
    pp.add_argument("dirs", nargs="+", help="run or grid output directories")
    pp.add_argument("--out", default=None, help="write the merged matrix to this CSV")
    return ap


# --------------------------------------------------------------------------
# Verbs
# --------------------------------------------------------------------------

def _base_layers(ns):
    """Return ``(file_layer, synth_layer, pair_layers, manifest_configs)``."""
    file_layer, synth_layer, pairs, manifest = {}, None, [], None
    if ns.manifest:
        manifest = load_manifest(ns.manifest)
    if ns.config:
        file_layer, synth_layer, pairs = read_config_file(ns.config)
    flags = synth_flag_layer(ns)
    if ns.synth or flags:
        synth_layer = {**(synth_layer or {}), **flags}
    return file_layer, synth_layer, pairs, manifest


def _from_manifest(cfg: ExperimentConfig, env, flags) -> ExperimentConfig:
    over = {**env, **flags}
    return replace(cfg, **over) if over else cfg


def cmd_synth(ns) -> int:
    cfg = SynthConfig(**synth_flag_layer(ns))
    src, tgt = synth_generate(cfg)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    kw = {}
    if ns.label_col:
        kw["label_column"] = ns.label_col
    if ns.na_token:
        kw["na_token"] = ns.na_token
    save_csv(src, out / "source.csv", **kw)
    save_csv(tgt, out / "target.csv", **kw)
    print(f"wrote {out / 'source.csv'} ({src.n_rows} rows) and {out / 'target.csv'} "
          f"({tgt.n_rows} rows)")
    return EXIT_OK


def cmd_run(ns) -> int:
    file_layer, synth_layer, pairs, manifest = _base_layers(ns)
    env, flags = env_layer(), flag_layer(ns)
    if manifest is not None:
        if len(manifest) != 1:
            raise ConfigError("manifest holds several configs; use `ccatl grid --manifest`")
        cfg = _from_manifest(manifest[0], env, flags)
    else:
        if pairs:
            raise ConfigError("[pair] sections are only valid for `ccatl grid`")
        cfg = build_config(file_layer, env, flags, synth=synth_layer)
    _check_kernel(cfg)
    code, oc = run_experiment(cfg)
    _report_outcome(oc, Path(cfg.out))
    return code


def cmd_grid(ns) -> int:
    file_layer, synth_layer, pairs, manifest = _base_layers(ns)
    env, flags = env_layer(), flag_layer(ns)
    out = flags.get("out") or env.get("out") or file_layer.get("out") or "ccatl-grid"
    if manifest is not None:
        cfgs = [_from_manifest(c, env, {k: v for k, v in flags.items() if k != "out"})
                for c in manifest]
    else:
        cells = list(pairs)
        for s, t in ns.pair or ():
            cells.append({"source": s, "target": t})
        for seed in ns.synth_seeds or ():
            cells.append({"synth_seed": seed})
        if not cells:
            raise ConfigError("grid needs --pair, --synth-seeds, [pair] sections or --manifest")
        cfgs = []
        for cell in cells:
            cell = dict(cell)
            synth = synth_layer
            if "synth_seed" in cell:
                synth = {**(synth_layer or {}), "seed": cell.pop("synth_seed")}
            elif "source" in cell:
                synth = None
            cfgs.append(build_config(file_layer, cell, env, flags, synth=synth))
    for c in cfgs:
        _check_kernel(c)
    jobs = ns.jobs if ns.jobs is not None else int(os.environ.get(ENV_PREFIX + "JOBS", "1"))
    code, outcomes = run_grid(cfgs, out, jobs=jobs)
    for oc in outcomes:
        _report_outcome(oc, Path(out))
    return code


def _report_outcome(oc, out: Path):
    if oc.fatal:
        log.error("%s: %s", oc.transfer_id, oc.fatal["message"])
        print(json.dumps(oc.fatal, sort_keys=True), file=sys.stderr)
    for b, e in oc.errors.items():
        log.error("%s/%s: %s", oc.transfer_id, b, e["message"])
    if (out / "summary.txt").is_file():
        log.info("reports written to %s", out)


def cmd_report(ns) -> int:
    rows = {}
    for d in ns.dirs:
        path = Path(d) / "accuracy.csv"
        if not path.is_file():
            raise FileNotFoundError(f"no accuracy.csv in {d}")
        for tid, cells in read_accuracy_matrix(path).items():
            if tid != AVERAGE:
                rows[tid] = cells
    baselines = [b for b in BASELINES if any(b in c for c in rows.values())]
    header = ["transfer_id"] + baselines
    lines = [header]
    sums = {b: [] for b in baselines}
    for tid, cells in rows.items():
        line = [tid]
        for b in baselines:
            if b not in cells:
                line.append("")
                continue
            v = cells[b]
            line.append("ERROR" if v is None else f"{v[0]!r}±{v[1]!r}")
            if v is not None:
                sums[b].append(v)
        lines.append(line)
    avg = [AVERAGE]
    for b in baselines:
        vs = sums[b]
        avg.append("ERROR" if not vs else
                   f"{sum(m for m, _ in vs) / len(vs)!r}±{sum(s for _, s in vs) / len(vs)!r}")
    lines.append(avg)
    if ns.out:
        with open(ns.out, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(lines)
    width = max(len(r[0]) for r in lines)
    for r in lines:
        cells = [c if i == 0 else _short(c) for i, c in enumerate(r)]
        print(cells[0].ljust(width) + " " + " ".join(c.rjust(13) for c in cells[1:]))
    return EXIT_OK


def _short(cell: str) -> str:
    if "±" not in cell:
        return cell
    m, s = cell.split("±")
    return f"{float(m):.3f}±{float(s):.3f}"


VERBS = {"synth": cmd_synth, "run": cmd_run, "grid": cmd_grid, "report": cmd_report}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return VERBS[ns.verb](ns)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        rec = {"stage": "config", "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
