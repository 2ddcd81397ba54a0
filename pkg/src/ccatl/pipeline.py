"""Experiment runner: the nine-baseline grid, divergence reports and run manifests."""
from __future__ import annotations

import csv
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .cca import LINEAR, RBF, KernelSpec, NumericalError
from .data import (DEFAULT_LABEL, NA_TOKEN, DataError, SynthConfig, harmonize, load_csv,
                   synth_generate)
from .dcca import DEFAULT_WIDTHS, DccaTrainConfig
from .divergence import POST_CCA, PRE_CCA, divergence_report, write_reports_csv
from .evaluation import EvalResult, evaluate_baseline, write_results_csv
from .pairing import write_pairs_csv
from .serialize import save_model, write_trace_csv
from .transfer import BASELINES, CCA_BASELINES, ORIGINAL, TransferSettings, fit_transfer

log = logging.getLogger(__name__)

EXIT_OK, EXIT_PARTIAL, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3
AVERAGE = "Average"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    source: str = None
    target: str = None
    synth: SynthConfig = None
    transfer_id: str = None
    label_col: str = DEFAULT_LABEL
    na_token: str = NA_TOKEN
    drop_cols: tuple = ()
    baselines: tuple = BASELINES
    k_impute: int = 5
    k_classify: int = 1
    rho: float = 1e-4
    kappa: float = 1e-3
    kernel: str = LINEAR
    gamma: float = None
    mmd_kernel: str = RBF
    dcca_epochs: int = 200
    dcca_lr: float = 1e-2
    dcca_lambda: float = 1e-3
    dcca_widths: tuple = DEFAULT_WIDTHS
    latent_dim: int = None
    supervised: bool = True
    seed: int = 0
    out: str = "ccatl-out"
    force: bool = False

    def __post_init__(self):
        if not self.baselines:
            raise ConfigError("baselines must be non-empty")
        bad = [b for b in self.baselines if b not in BASELINES]
        if bad:
            raise ConfigError(f"unknown baselines {bad}; choose from {list(BASELINES)}")
        if self.synth is None and not (self.source and self.target):
            raise ConfigError("give --source and --target, or use synthetic data")
        if self.k_impute < 1 or self.k_classify < 1:
            raise ConfigError("k values must be >= 1")

    @property
    def name(self) -> str:
        if self.transfer_id:
            return self.transfer_id
        if self.synth is not None:
            return f"synth{self.synth.seed}"
        return f"{Path(self.source).stem}->{Path(self.target).stem}"

    def settings(self) -> TransferSettings:
        return TransferSettings(
            k_impute=self.k_impute, k_classify=self.k_classify, rho=self.rho, kappa=self.kappa,
            kernel=KernelSpec(self.kernel, self.gamma if self.kernel == RBF else None),
            dcca=DccaTrainConfig(self.dcca_epochs, self.dcca_lr, self.dcca_lambda, self.seed,
                                 tuple(self.dcca_widths)),
            latent_dim=self.latent_dim, supervised=self.supervised)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drop_cols"] = list(self.drop_cols)
        d["baselines"] = list(self.baselines)
        d["dcca_widths"] = list(self.dcca_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if d.get("synth") is not None and not isinstance(d["synth"], SynthConfig):
            d["synth"] = SynthConfig(**d["synth"])
        for k in ("drop_cols", "baselines", "dcca_widths"):
            if k in d and d[k] is not None:
                d[k] = tuple(d[k])
        return cls(**d)


class StageError(Exception):
    """Failure carrying an exit code and a machine-readable record."""

    def __init__(self, code: int, record: dict):
        super().__init__(record.get("message"))
        self.code = code
        self.record = record


def _error_record(stage, exc, **extra) -> dict:
    rec = {"stage": stage, "error": type(exc).__name__, "message": str(exc)}
    rec.update(extra)
    return rec


def _classify(exc) -> int:
    if isinstance(exc, (NumericalError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERICAL
    return EXIT_INPUT


def load_pair(cfg: ExperimentConfig) -> tuple:
    if cfg.synth is not None:
        return synth_generate(cfg.synth)
    out = []
    for role, path in (("source", cfg.source), ("target", cfg.target)):
        try:
            out.append(load_csv(path, cfg.label_col, na_token=cfg.na_token, drop=cfg.drop_cols))
        except FileNotFoundError as exc:
            raise StageError(EXIT_INPUT, _error_record("load", exc, role=role, path=str(path)))
        except DataError as exc:
            raise StageError(EXIT_INPUT, _error_record("load", exc, role=role, path=str(path)))
    src, tgt = out
    if src.n_rows < tgt.n_rows and not cfg.force:
        raise StageError(EXIT_INPUT, {
            "stage": "load", "error": "ConfigError",
            "message": f"source has {src.n_rows} rows but target has {tgt.n_rows}; "
                       "transfer runs from the larger dataset (use --force to override)"})
    return src, tgt


@dataclass
class PairOutcome:
    transfer_id: str
    results: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    divergences: list = field(default_factory=list)
    fatal: dict = None
    code: int = EXIT_OK


def _latents(fitted):
    p = fitted.pairs
    return fitted.project(p.source_rows, "source"), fitted.project(p.target_rows, "target")


def execute(cfg: ExperimentConfig, out_dir: Path = None) -> PairOutcome:
    """Run every configured baseline on one transfer pair.

    Per-baseline failures are recorded in ``errors`` and the other baselines
    still run. Artefacts (models, pairing audits, DCCA traces) go to
    ``out_dir`` when given.
    """
    outcome = PairOutcome(cfg.name)
    try:
        source, target = load_pair(cfg)
    except StageError as exc:
        outcome.fatal, outcome.code = exc.record, exc.code
        return outcome
    settings = cfg.settings()
    mmd_kernel = KernelSpec(cfg.mmd_kernel)
    for base in cfg.baselines:
        stage = "evaluate"
        try:
            outcome.results[base] = evaluate_baseline(source, target, base, settings, cfg.seed)
            if base == ORIGINAL:
                continue
            stage = "fit_full"
            s, t = harmonize(source, target)
            fitted = fit_transfer(s, t, base, settings, cfg.seed)
            if out_dir is not None:
                write_pairs_csv(fitted.pairs, out_dir / f"pairs_{base}.csv",
                                fitted.unified.source.row_ids, fitted.unified.target.row_ids)
            if base in CCA_BASELINES:
                stage = "divergence"
                p = fitted.pairs
                outcome.divergences.append((base, divergence_report(
                    p.source_rows, p.target_rows, PRE_CCA, mmd_kernel, cfg.seed)))
                zs, zt = _latents(fitted)
                outcome.divergences.append((base, divergence_report(
                    zs, zt, POST_CCA, mmd_kernel, cfg.seed)))
                if out_dir is not None:
                    save_model(fitted.model, out_dir / f"model_{base}.npz")
                    if base.endswith("DCCA"):
                        write_trace_csv(fitted.model, out_dir / f"trace_{base}.csv")
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            log.warning("%s/%s failed in %s: %s", cfg.name, base, stage, exc)
            outcome.errors[base] = _error_record(stage, exc, baseline=base)
            outcome.code = max(outcome.code, _classify(exc))
    return outcome


# --------------------------------------------------------------------------
# Output files
# --------------------------------------------------------------------------

def _atomic_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def format_cell(r: EvalResult) -> str:
    return r.cell()


def parse_cell(cell: str):
    if not cell or cell.startswith("ERROR"):
        return None
    m, _, s = cell.partition("±")
    return float(m), float(s)


def write_accuracy_matrix(outcomes, baselines, path: Path, average: bool = False):
    """Rows are transfer pairs, columns baselines, cells ``mean±std``."""
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["transfer_id"] + list(baselines))
        cols = {b: [] for b in baselines}
        for oc in outcomes:
            row = [oc.transfer_id]
            for b in baselines:
                if b in oc.results:
                    r = oc.results[b]
                    row.append(format_cell(r))
                    cols[b].append((r.mean_accuracy, r.std_dev))
                else:
                    row.append("ERROR")
            w.writerow(row)
        if average:
            row = [AVERAGE]
            for b in baselines:
                if cols[b]:
                    arr = np.array(cols[b])
                    row.append(f"{float(arr[:, 0].mean())!r}±{float(arr[:, 1].mean())!r}")
                else:
                    row.append("ERROR")
            w.writerow(row)
    tmp.replace(path)


def read_accuracy_matrix(path) -> dict:
    with open(path, newline="") as fh:
        return {r["transfer_id"]: {k: parse_cell(v) for k, v in r.items() if k != "transfer_id"}
                for r in csv.DictReader(fh)}


def _summary(outcomes, baselines) -> str:
    lines = ["accuracy (mean ± sd over folds)", ""]
    width = max([len(o.transfer_id) for o in outcomes] + [10])
    lines.append(" ".join(["pair".ljust(width)] + [b.rjust(13) for b in baselines]))
    for oc in outcomes:
        cells = []
        for b in baselines:
            r = oc.results.get(b)
            cells.append((f"{r.mean_accuracy:.3f}±{r.std_dev:.3f}" if r else "ERROR").rjust(13))
        lines.append(" ".join([oc.transfer_id.ljust(width)] + cells))
    divs = [(oc.transfer_id, b, d) for oc in outcomes for b, d in oc.divergences]
    if divs:
        lines += ["", "divergence", ""]
        lines.append(f"{'pair'.ljust(width)} {'baseline':>9} {'stage':>9} {'mmd':>10} "
                     f"{'proxy_a':>8} {'coral':>10}")
        for tid, b, d in divs:
            lines.append(f"{tid.ljust(width)} {b:>9} {d.stage:>9} {d.mmd:10.4g} "
                         f"{d.proxy_a:8.3f} {d.coral:10.4g}")
    errs = [(oc.transfer_id, b, e) for oc in outcomes for b, e in oc.errors.items()]
    errs += [(oc.transfer_id, "*", oc.fatal) for oc in outcomes if oc.fatal]
    if errs:
        lines += ["", "errors", ""]
        lines += [f"{tid} {b}: {e['error']}: {e['message']}" for tid, b, e in errs]
    return "\n".join(lines) + "\n"


def _dist_version(name):
    try:
        return metadata.version(name)
    except metadata.PackageNotFoundError:
        return None


def manifest(cfgs) -> dict:
    out = {"ccatl": __version__, "python": platform.python_version(), "backend": backend(),
           "configs": [c.to_dict() for c in cfgs]}
    for dep in ("numpy", "scipy", "numba"):
        out[dep] = _dist_version(dep)
    return out


def _write_outputs(outcomes, cfgs, out: Path, average: bool):
    baselines = list(dict.fromkeys(b for c in cfgs for b in c.baselines))
    write_accuracy_matrix(outcomes, baselines, out / "accuracy.csv", average)
    write_results_csv([(oc.transfer_id, oc.results[b]) for oc in outcomes
                       for b in baselines if b in oc.results], out / "results.csv")
    write_reports_csv([(oc.transfer_id, b, d) for oc in outcomes for b, d in oc.divergences],
                      out / "divergence.csv")
    _atomic_text(out / "summary.txt", _summary(outcomes, baselines))
    _atomic_text(out / "manifest.json", json.dumps(manifest(cfgs), indent=2, sort_keys=True) + "\n")
    errors = {oc.transfer_id: {"fatal": oc.fatal, "baselines": oc.errors}
              for oc in outcomes if oc.fatal or oc.errors}
    if errors:
        _atomic_text(out / "errors.json", json.dumps(errors, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig) -> tuple:
    """Run one transfer pair and write its reports to ``cfg.out``.

    Returns ``(exit_code, outcome)``.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    oc = execute(cfg, out)
    if oc.fatal:
        _atomic_text(out / "error.json", json.dumps(oc.fatal, indent=2, sort_keys=True) + "\n")
        return oc.code, oc
    _write_outputs([oc], [cfg], out, average=False)
    return oc.code, oc


def _grid_cell(args):
    cfg, out = args
    out.mkdir(parents=True, exist_ok=True)
    return execute(cfg, out)


def run_grid(cfgs, out, jobs: int = 1) -> tuple:
    """Run several transfer pairs and aggregate them, adding an ``Average`` row.

    Returns ``(exit_code, outcomes)``; the code is 1 when any cell failed.
    """
    cfgs = list(cfgs)
    if not cfgs:
        raise ConfigError("grid needs at least one configuration")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        raise ConfigError("transfer ids in a grid must be unique")
    work = [(c, out / _safe(c.name)) for c in cfgs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_grid_cell, work))
    else:
        outcomes = [_grid_cell(w) for w in work]
    _write_outputs(outcomes, cfgs, out, average=True)
    failed = any(oc.fatal or oc.errors for oc in outcomes)
    return (EXIT_PARTIAL if failed else EXIT_OK), outcomes


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)
