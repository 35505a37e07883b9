"""Command-line driver: simulate, stats, fit, sweep, assess, convert-sb.

Every command reads one JSON configuration, validates it against a schema
(unknown keys are rejected) and writes its artifacts plus ``manifest.json``
into the output directory.  Artifacts are byte-identical across reruns with
the same configuration and seed; wall-clock data goes to ``metadata.json``
only.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__
from .assessment import (
    DEFAULT_THRESHOLDS,
    assess,
    match_classes,
    save_report,
    sweep_k,
    write_classification,
)
from .em import (
    DegenerateFitError,
    DlcModel,
    DlcSpec,
    concomitant_design,
    e_step,
    fit,
    observed_loglik,
    save_model,
)
from .events import EventDataError, EventHistory, load_covariates, load_events, write_events
from .glm import SolverError, predict_class_probs
from .sbrem import SbModel, fit_sbrem, save_sbrem, sb_to_dlc
from .simulate import (
    DESIGN_BETA,
    DESIGN_CLASS_IDS,
    DESIGN_COL_CUT,
    DESIGN_ROW_CUT,
    GenSpec,
    GenSpecError,
    block_pattern,
    generate,
    sb_pattern,
)
from .stack import AGGREGATORS, build_stack, concomitant_features
from .stats import KINDS, StatisticError, StatisticSpec, compute_stats, resolve_specs

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


_STAT = {
    "oneOf": [
        {"type": "string", "enum": list(KINDS)},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string", "enum": list(KINDS)},
                "covariate": {"type": "string"},
                "direction": {"enum": ["send", "receive"]},
                "normalize": {"type": "boolean"},
                "standardize": {"enum": ["none", "interval"]},
                "scale": {"type": "number"},
                "aggregate": {"enum": ["min", "product"]},
                "label": {"type": "string"},
            },
        },
    ]
}

_NUM_LIST = {"type": "array", "items": {"type": "number"}}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["events"],
            "properties": {
                "events": {"type": "string"},
                "columns": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: {"type": "string"} for k in ("sender", "receiver", "time")},
                },
                "delimiter": {"type": "string", "minLength": 1, "maxLength": 1},
                "actors": {"type": "array", "items": {"type": "string"}},
                "riskset": {"enum": ["full", "observed", "explicit"]},
                "dyads": {"type": "array", "items": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2}},
                "burn_in_end": {"type": ["number", "null"]},
                "origin": {"type": "number"},
                "grid_width": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "actor_covariates": {"type": "string"},
                "dyad_covariates": {"type": "string"},
                "covariate_defaults": {"type": "object", "additionalProperties": {"type": "number"}},
            },
        },
        "statistics": {"type": "array", "items": _STAT, "minItems": 1},
        "concomitant": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["statistic"],
                "properties": {"statistic": _STAT, "aggregate": {"enum": sorted(AGGREGATORS)}},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "integer", "minimum": 1},
                "class_mode": {"enum": ["directed", "symmetric"]},
                "max_iter": {"type": "integer", "minimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "n_starts": {"type": "integer", "minimum": 1},
                "ridge": {"type": "number", "minimum": 0},
            },
        },
        "assessment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "thresholds": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, "minItems": 1},
                "bic_n": {"enum": ["units", "events"]},
                "weights": {"enum": ["posterior", "prior"]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["k_values"],
            "properties": {"k_values": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}},
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["four_region"]},
                "n_actors": {"type": "integer", "minimum": 2},
                "layout": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["row_cut", "col_cut", "class_ids"],
                    "properties": {
                        "row_cut": {"type": ["integer", "array"]},
                        "col_cut": {"type": ["integer", "array"]},
                        "class_ids": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 1}}},
                    },
                },
                "class_map": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "sb_membership": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "beta": {"type": "object", "additionalProperties": _NUM_LIST},
                "statistics": {"type": "array", "items": _STAT},
                "n_events": {"type": "integer", "minimum": 1},
                "n_replications": {"type": "integer", "minimum": 1},
                "burn_in_events": {"type": "integer", "minimum": 0},
            },
        },
        "sbrem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "C": {"type": "integer", "minimum": 1},
                "n_starts": {"type": "integer", "minimum": 1},
                "max_sweeps": {"type": "integer", "minimum": 1},
            },
        },
    },
}


def validate_config(config: Any) -> None:
    """Raise ConfigError naming the offending path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {err.message}")


def load_config(path: str | Path | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    try:
        config = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {str(p)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {str(p)!r} is not valid JSON: {exc}") from None
    validate_config(config)
    return config, p.parent


@dataclass
class Run:
    """Resolved command context."""

    command: str
    config: dict
    base: Path
    out: Path
    seed: int
    threads: int
    outputs: list[str]

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base / p

    def provenance(self) -> dict:
        return {"version": __version__, "command": self.command, "seed": self.seed, "config": self.config}

    def write_json(self, name: str, doc: dict) -> Path:
        p = self.out / name
        p.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
        self.outputs.append(name)
        return p

    def record(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def finish(self, started: float) -> None:
        files = []
        for name in self.outputs:
            digest = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
            files.append({"file": name, "sha256": digest})
        manifest = {"provenance": self.provenance(), "outputs": files}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
        meta = {
            "command": self.command,
            "version": __version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "elapsed_seconds": round(time.time() - started, 3),
        }
        (self.out / "metadata.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")


# ---- shared pipeline pieces ----------------------------------------------------------------


def _load_history(run: Run) -> EventHistory:
    d = run.config.get("data")
    if d is None:
        raise ConfigError("config error at data: required for this command")
    dyads = d.get("dyads")
    return load_events(
        run.path(d["events"]),
        d.get("columns"),
        delimiter=d.get("delimiter", ","),
        extra_actors=d.get("actors", ()),
        riskset=d.get("riskset", "full"),
        dyads=[tuple(x) for x in dyads] if dyads is not None else None,
        burn_in_end=d.get("burn_in_end"),
        origin=d.get("origin", 0.0),
        grid_width=d.get("grid_width"),
    )


def _load_covariates(run: Run, history: EventHistory):
    d = run.config.get("data", {})
    if "actor_covariates" not in d and "dyad_covariates" not in d:
        return None
    return load_covariates(
        history,
        run.path(d["actor_covariates"]) if "actor_covariates" in d else None,
        run.path(d["dyad_covariates"]) if "dyad_covariates" in d else None,
        defaults=d.get("covariate_defaults"),
        delimiter=d.get("delimiter", ","),
    )


def _rate_specs(run: Run) -> list[StatisticSpec]:
    if "statistics" not in run.config:
        raise ConfigError("config error at statistics: required for this command")
    return resolve_specs(run.config["statistics"])


def _model_spec(run: Run, specs, feature_names, K: int | None = None) -> DlcSpec:
    m = run.config.get("model", {})
    return DlcSpec(
        K=K if K is not None else m.get("K", 1),
        rate_statistics=tuple(specs),
        concomitant_features=tuple(feature_names),
        class_mode=m.get("class_mode", "directed"),
        max_iter=m.get("max_iter", 500),
        tol=m.get("tol", 1e-6),
        n_starts=m.get("n_starts", 10),
        seed=run.seed,
        ridge=m.get("ridge", 1e-8),
    )


def _prepare(run: Run):
    """History, stack and concomitant features for the configured model."""
    history = _load_history(run)
    covariates = _load_covariates(run, history)
    specs = _rate_specs(run)
    stack = build_stack(history, compute_stats(history, specs, covariates),
                        run.config.get("model", {}).get("class_mode", "directed"))
    entries = run.config.get("concomitant", [])
    W, names = None, ()
    if entries:
        cspecs = [StatisticSpec.parse(e["statistic"]) for e in entries]
        if any(s.name == "intercept" for s in cspecs):
            raise ConfigError("config error at concomitant: the intercept is added automatically")
        snaps = compute_stats(history, cspecs, covariates)
        W = concomitant_features(snaps, stack.group_of_dyad, [e.get("aggregate", "median") for e in entries])
        names = tuple(s.column for s in cspecs)
    return history, stack, W, names, specs


def _assessment(run: Run):
    a = run.config.get("assessment", {})
    return tuple(a.get("thresholds", DEFAULT_THRESHOLDS)), a.get("bic_n", "units"), a.get("weights", "posterior")


# ---- commands ------------------------------------------------------------------------------


def _gen_spec(run: Run, seed: int) -> GenSpec:
    sim = dict(run.config.get("simulation", {}))
    preset = sim.get("preset")
    n = sim.get("n_actors", 10 if preset else None)
    if n is None:
        raise ConfigError("config error at simulation/n_actors: required without a preset")
    if "class_map" in sim:
        cmap = np.asarray(sim["class_map"]) - 1
    elif "sb_membership" in sim:
        memb = np.asarray(sim["sb_membership"]) - 1
        if memb.size != n:
            raise ConfigError("config error at simulation/sb_membership: one block per actor is required")
        cmap = sb_pattern(memb)
    elif "layout" in sim:
        lay = sim["layout"]
        cmap = block_pattern(n, lay["row_cut"], lay["col_cut"], np.asarray(lay["class_ids"]) - 1)
    elif preset == "four_region":
        cmap = block_pattern(n, DESIGN_ROW_CUT, DESIGN_COL_CUT, DESIGN_CLASS_IDS)
    else:
        raise ConfigError("config error at simulation: give class_map, sb_membership, layout or a preset")
    beta = sim.get("beta")
    if beta is None:
        if preset != "four_region":
            raise ConfigError("config error at simulation/beta: required without a preset")
        beta = {k: list(v) for k, v in DESIGN_BETA.items()}
    return GenSpec(
        n_actors=n,
        class_map=cmap,
        beta=beta,
        statistics=sim.get("statistics", ["inertia", "reciprocity"]),
        n_events=sim.get("n_events", 2000),
        seed=seed,
        burn_in_events=sim.get("burn_in_events", 0),
    )


def write_truth(history: EventHistory, class_map: np.ndarray, path: Path) -> None:
    rs = history.riskset
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dyad", "sender", "receiver", "true_class"])
        for d in range(len(rs)):
            w.writerow([d, history.actors[rs.senders[d]], history.actors[rs.receivers[d]], int(class_map[d]) + 1])


def read_truth(path: Path, history: EventHistory) -> np.ndarray:
    """True 0-based class per riskset dyad, matched by actor labels."""
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            table[(row["sender"], row["receiver"])] = int(row["true_class"]) - 1
    rs = history.riskset
    try:
        return np.array([table[(history.actors[s], history.actors[r])] for s, r in zip(rs.senders, rs.receivers)])
    except KeyError as exc:
        raise EventDataError(f"truth file has no class for dyad {exc.args[0]}") from None


def cmd_simulate(run: Run) -> None:
    n_rep = run.config.get("simulation", {}).get("n_replications", 1)
    width = max(3, len(str(n_rep - 1)))
    for rep in range(n_rep):
        history, cmap = generate(_gen_spec(run, run.seed + rep))
        tag = f"{rep:0{width}d}"
        write_events(history, run.record(f"events_{tag}.csv"))
        write_truth(history, cmap, run.record(f"truth_{tag}.csv"))


def cmd_stats(run: Run) -> None:
    history = _load_history(run)
    covariates = _load_covariates(run, history)
    specs = _rate_specs(run)
    snaps = compute_stats(history, specs, covariates)
    snaps.to_long_csv(run.record("statistics.csv"))
    build_stack(history, snaps, run.config.get("model", {}).get("class_mode", "directed")).to_csv(run.record("stack.csv"))


def cmd_fit(run: Run) -> None:
    history, stack, W, names, specs = _prepare(run)
    thresholds, bic_n, weights = _assessment(run)
    model, diag = fit(stack, W, _model_spec(run, specs, names), feature_names=names, n_jobs=run.threads)
    save_model(model, run.record("model.json"), {"provenance": run.provenance()})
    run.write_json("diagnostics.json", diag.to_dict())
    report = assess(model, stack, thresholds, bic_n=bic_n, weights=weights)
    save_report(report, run.record("report.json"), {"provenance": run.provenance()})
    write_classification(model, history, run.record("classification.csv"))


def cmd_sweep(run: Run) -> None:
    if "sweep" not in run.config:
        raise ConfigError("config error at sweep: required for this command")
    history, stack, W, names, specs = _prepare(run)
    thresholds, bic_n, _ = _assessment(run)
    result = sweep_k(stack, W, _model_spec(run, specs, names), run.config["sweep"]["k_values"], thresholds,
                     feature_names=names, bic_n=bic_n, n_jobs=run.threads)
    for K, model in sorted(result.models.items()):
        save_model(model, run.record(f"model_K{K}.json"), {"provenance": run.provenance()})
    save_report(result.rows, run.record("sweep.json"), {"winners": result.winners, "provenance": run.provenance()})
    table = run.record("sweep.txt")
    table.write_text(result.table() + "\n", encoding="utf-8")


def cmd_assess(run: Run, model_path: str, truth: str | None, thresholds: list[float] | None) -> None:
    try:
        doc = json.loads(Path(model_path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise EventDataError(f"model file {model_path!r} not found") from None
    model = DlcModel.from_dict(doc)
    if thresholds is not None:
        run.config.setdefault("assessment", {})["thresholds"] = thresholds
        validate_config(run.config)
    if "statistics" not in run.config:
        run.config["statistics"] = [s.to_dict() for s in model.spec.rate_statistics]
    run.config.setdefault("model", {}).setdefault("class_mode", model.spec.class_mode)
    history, stack, W, names, _ = _prepare(run)
    if tuple(stack.names) != tuple(model.stat_names):
        raise EventDataError(f"model statistics {list(model.stat_names)} do not match data statistics {list(stack.names)}")
    if model.model_type != "sbrem" and tuple(names) != tuple(model.feature_names):
        raise EventDataError(f"model concomitant features {list(model.feature_names)} do not match {list(names)}")
    ths, bic_n, weights = _assessment(run)
    if model.model_type == "sbrem":
        if model.posteriors.shape[0] != stack.n_groups:
            raise EventDataError("converted block model and data have different riskset sizes")
        post = e_step(model.beta, model.gamma, stack, priors=model.priors)
        ll = observed_loglik(model.beta, model.gamma, stack, priors=model.priors)
        priors = model.priors
    else:
        post = e_step(model.beta, model.gamma, stack, W)
        ll = observed_loglik(model.beta, model.gamma, stack, W)
        if model.K > 1:
            priors = predict_class_probs(model.gamma, concomitant_design(W, stack.n_groups))
        else:
            priors = np.ones((stack.n_groups, 1))
    model.posteriors, model.priors, model.loglik = post, priors, ll
    model.group_of_dyad = stack.group_of_dyad
    report = assess(model, stack, ths, bic_n=bic_n, weights=weights)
    extra = {"provenance": run.provenance(), "model_path": str(model_path)}
    if truth is not None:
        true = read_truth(run.path(truth), history)
        extra["truth"] = match_classes(true, model.hard_classes[stack.group_of_dyad])
    save_report(report, run.record("assessment.json"), extra)
    write_classification(model, history, run.record("classification.csv"))


def cmd_convert_sb(run: Run, model_path: str | None) -> None:
    history, stack, _, _, specs = _prepare(run)
    if stack.mode != "directed":
        raise ConfigError("config error at model/class_mode: block models need directed classes")
    if model_path is not None:
        sb = SbModel.from_dict(json.loads(Path(model_path).read_text(encoding="utf-8")))
        if tuple(sb.stat_names) != tuple(stack.names):
            raise EventDataError(f"block model statistics {list(sb.stat_names)} do not match {list(stack.names)}")
    else:
        cfg = run.config.get("sbrem", {})
        sb = fit_sbrem(stack, history.riskset, cfg.get("C", 2), n_actors=history.n_actors,
                       n_starts=cfg.get("n_starts", 20), max_sweeps=cfg.get("max_sweeps", 50), seed=run.seed)
        save_sbrem(sb, run.record("sb_model.json"), {"provenance": run.provenance(), "actors": list(history.actors)})
    _, cmap, dlc = sb_to_dlc(sb, history.riskset, stack)
    dlc.spec = DlcSpec(K=dlc.K, rate_statistics=tuple(specs), n_starts=1, seed=run.seed)
    save_model(dlc, run.record("dlc_model.json"), {"provenance": run.provenance()})
    thresholds, bic_n, _ = _assessment(run)
    save_report(assess(dlc, stack, thresholds, bic_n=bic_n), run.record("report.json"), {"provenance": run.provenance()})
    write_classification(dlc, history, run.record("classification.csv"))


# ---- entry point ---------------------------------------------------------------------------


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, GenSpecError, StatisticError)):
        return EXIT_CONFIG
    if isinstance(exc, (EventDataError, FileNotFoundError, KeyError)):
        return EXIT_DATA
    if isinstance(exc, (SolverError, DegenerateFitError, FloatingPointError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, ValueError):
        return EXIT_DATA
    raise exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlcrem", description="Dyadic latent class relational event models.")
    parser.add_argument("--version", action="version", version=f"dlcrem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--threads", type=int, help="worker cap for multi-start fitting")
        p.add_argument("--output", help="output directory (overrides the configured one)")
        return p

    common(sub.add_parser("simulate", help="generate event sequences with known dyad classes"))
    common(sub.add_parser("stats", help="compute statistics and the regression stack"))
    common(sub.add_parser("fit", help="fit one model and assess it"))
    common(sub.add_parser("sweep", help="fit and compare several class counts"))
    p = common(sub.add_parser("assess", help="assess a saved model against event data"))
    p.add_argument("--model", required=True, help="model document from fit, sweep or convert-sb")
    p.add_argument("--truth", help="truth file with dyad classes for recovery scoring")
    p.add_argument("--threshold", type=float, action="append", help="percentile threshold in (0, 1); repeatable")
    p = common(sub.add_parser("convert-sb", help="fit (or load) a block model and convert it to a class model"))
    p.add_argument("--model", help="saved block model document to convert instead of fitting")
    return parser


def _error_document(exc: BaseException, code: int) -> dict:
    return {"error": {"type": type(exc).__name__, "module": type(exc).__module__, "message": str(exc), "exit_code": code}}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    out = None
    try:
        if args.command == "assess" and args.threshold:
            bad = [t for t in args.threshold if not 0.0 < t < 1.0]
            if bad:
                raise ConfigError(f"argument error: threshold must lie in (0, 1), got {bad[0]}")
        if args.output is not None:
            # lets early configuration errors still land in the output directory
            out = Path(args.output)
        config, base = load_config(args.config)
        seed = args.seed if args.seed is not None else config.get("seed", 1)
        threads = args.threads if args.threads is not None else config.get("threads", 1)
        if threads < 1:
            raise ConfigError("argument error: --threads must be at least 1")
        out = Path(args.output or config.get("output") or ".")
        if not out.is_absolute() and args.output is None and args.config is not None:
            out = base / out
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write-test"
            probe.write_text("", encoding="utf-8")
            probe.unlink()
        except OSError as exc:
            out = None
            raise ConfigError(f"output directory is not writable: {exc}") from None
        run = Run(args.command, config, base, out, seed, threads, [])
        if args.command == "simulate":
            cmd_simulate(run)
        elif args.command == "stats":
            cmd_stats(run)
        elif args.command == "fit":
            cmd_fit(run)
        elif args.command == "sweep":
            cmd_sweep(run)
        elif args.command == "assess":
            cmd_assess(run, args.model, args.truth, args.threshold)
        else:
            cmd_convert_sb(run, args.model)
        run.finish(started)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code and error document
        code = _exit_code(exc)
        doc = _error_document(exc, code)
        print(json.dumps(doc, sort_keys=True), file=sys.stderr)
        if out is not None:
            try:
                out.mkdir(parents=True, exist_ok=True)
                (out / "error.json").write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
            except OSError:
                pass
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
