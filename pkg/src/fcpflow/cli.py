"""Command-line front end: ``fcpflow {train,generate,predict,evaluate}``.

Settings resolve as flags > ``--config`` JSON > defaults, and the effective
configuration is written to the output directory. Exit codes: 0 success,
1 runtime or numeric failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import data as D
from . import metrics as M
from .errors import CheckpointError, ConfigurationError, ContractError, FCPFlowError, ParseError, SpecError
from .training import TrainConfig, fit, load_checkpoint, save_checkpoint

log = logging.getLogger("fcpflow")

DEFAULTS = {
    "seed": 0,
    "samples": 100,
    "quantiles": [0.05, 0.5, 0.95],
    "split": 0.8,
    "conditions": None,
    "unconditional": False,
    "write_ensemble": True,
    **{f.name: f.default for f in fields(TrainConfig)},
}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fcpflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with default settings")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int)

    tr = sub.add_parser("train", help="fit a model on a profile CSV")
    common(tr)
    tr.add_argument("--data", required=True)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--blocks", type=int)
    tr.add_argument("--hidden", type=int)
    tr.add_argument("--alpha", type=float)
    tr.add_argument("--unconditional", action="store_true", default=None)
    tr.add_argument(
        "--conditions",
        help="comma list of daily-total, annual-total, previous-day or c_* column names",
    )

    gen = sub.add_parser("generate", help="sample profiles from a checkpoint")
    common(gen)
    gen.add_argument("--checkpoint", required=True)
    gen.add_argument("--samples", type=int, help="profiles per condition row (total if unconditional)")
    gen.add_argument("--conditions", help="CSV with condition rows, or literal comma-separated values")

    pr = sub.add_parser("predict", help="probabilistic next-day forecasts")
    common(pr)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True, help="day-pair CSV (or raw CSV with household/date)")
    pr.add_argument("--samples", type=int)
    pr.add_argument("--quantiles", help="comma-separated levels in (0, 1)")

    ev = sub.add_parser("evaluate", help="score generated profiles or forecast ensembles")
    common(ev)
    ev.add_argument("--data", required=True, help="real profiles (generation) or truth.csv (forecast)")
    grp = ev.add_mutually_exclusive_group(required=True)
    grp.add_argument("--generated", help="generated profile CSV")
    grp.add_argument("--ensemble", help="ensemble CSV written by predict")
    ev.add_argument("--quantiles")
    return p


def _resolve(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                cfg.update(json.load(fh))
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file is not valid JSON: {exc.msg}") from None
    for key, val in vars(args).items():
        if val is not None and key not in ("config", "command"):
            cfg[key] = val
    if isinstance(cfg.get("quantiles"), str):
        try:
            cfg["quantiles"] = [float(q) for q in cfg["quantiles"].split(",")]
        except ValueError:
            raise UsageError(f"bad --quantiles {cfg['quantiles']!r}") from None
    if any(not 0 < q < 1 for q in cfg["quantiles"]):
        raise UsageError("quantiles must lie in (0, 1)")
    return cfg


def _need_file(path, what):
    if not path or not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _prepare_out(cfg):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
    return out


def _fmt(v: float) -> str:
    return repr(float(v))


# --- train ---------------------------------------------------------------


def _apply_condition_spec(ds: D.ProfileDataset, spec: list[str]) -> D.ProfileDataset:
    if spec == ["previous-day"]:
        return D.window_day_pairs(ds)
    if "previous-day" in spec:
        raise SpecError("previous-day conditioning cannot be combined with other conditions")
    return D.derive_conditions(ds, spec)


def _condition_spec(cfg, ds) -> list[str]:
    if cfg["unconditional"]:
        return []
    spec = cfg["conditions"]
    if spec is None:
        return list(ds.condition_labels)
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    return list(spec)


def cmd_train(cfg) -> None:
    _need_file(cfg["data"], "data file")
    train_cfg = TrainConfig(**{f.name: cfg[f.name] for f in fields(TrainConfig)})
    out = _prepare_out(cfg)
    raw = D.load_csv(cfg["data"])
    spec = _condition_spec(cfg, raw)
    ds = _apply_condition_spec(raw, spec) if spec else raw.without_conditions()
    train, test = D.split(ds, cfg["split"], cfg["seed"])
    scaler = D.fit_scaler(train)
    model, train_log = fit(D.apply_scaler(train, scaler), train_cfg)
    model.meta.update({"condition_spec": spec, "condition_labels": list(ds.condition_labels),
                       "resolution": ds.resolution})
    D.save_csv(train, os.path.join(out, "train.csv"))
    D.save_csv(test, os.path.join(out, "test.csv"))
    D.write_manifest(os.path.join(out, "manifest.json"), train, scaler)
    train_log.to_csv(os.path.join(out, "training_log.csv"))
    save_checkpoint(model, os.path.join(out, "checkpoint.json"))
    log.info("trained %d epochs, final mean nll %.4f", len(train_log.records), train_log.nll[-1])


# --- generate ------------------------------------------------------------


def _conditions_from_source(source, model) -> np.ndarray:
    labels = model.meta.get("condition_labels") or (model.scaler.condition_labels if model.scaler else [])
    if os.path.isfile(source):
        ds = D.load_csv(source, allow_negative=True)
        if all(lab in ds.condition_labels for lab in labels):
            idx = [ds.condition_labels.index(lab) for lab in labels]
            return ds.conditions[:, idx]
        spec = model.meta.get("condition_spec") or []
        if spec:
            if ds.T != model.T:
                raise ContractError(f"condition file has T={ds.T}, checkpoint has T={model.T}")
            return _apply_condition_spec(ds, spec).conditions
        raise ContractError(f"condition file lacks columns {labels}")
    try:
        values = [float(v) for v in source.split(",")]
    except ValueError:
        raise UsageError(f"--conditions is neither a file nor a list of numbers: {source!r}") from None
    return np.array([values])


def _seed_for(seed: int, row: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(row)])


def cmd_generate(cfg) -> None:
    _need_file(cfg["checkpoint"], "checkpoint")
    model = load_checkpoint(cfg["checkpoint"])
    S = int(cfg["samples"])
    if S < 1:
        raise UsageError("--samples must be positive")
    if model.B:
        if not cfg.get("conditions"):
            raise UsageError(f"checkpoint expects {model.B} conditions; pass --conditions")
        cond_raw = _conditions_from_source(cfg["conditions"], model)
        if cond_raw.shape[1] != model.B:
            raise ContractError(f"conditions have {cond_raw.shape[1]} columns, checkpoint expects {model.B}")
    else:
        cond_raw = np.zeros((1, 0))
    out = _prepare_out(cfg)
    scaler = model.scaler
    cond_scaled = scaler.transform_conditions(cond_raw)[0] if (scaler and model.B) else cond_raw
    header = (["source_row", "sample"] if model.B else ["sample"]) + [f"x_{t}" for t in range(model.T)]
    labels = model.meta.get("condition_labels", [f"c_{j}" for j in range(model.B)])
    header += list(labels)
    with open(os.path.join(out, "samples.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(cond_raw.shape[0]):
            x = model.sample(cond_scaled[i:i + 1] if model.B else None, n=S, seed=_seed_for(cfg["seed"], i))
            if scaler is not None:
                x = scaler.inverse_profiles(x)
            for k, row in enumerate(x):
                lead = [i, k] if model.B else [k]
                w.writerow(lead + [_fmt(v) for v in row] + [_fmt(v) for v in cond_raw[i]])


# --- predict -------------------------------------------------------------


def cmd_predict(cfg) -> None:
    _need_file(cfg["checkpoint"], "checkpoint")
    _need_file(cfg["data"], "data file")
    model = load_checkpoint(cfg["checkpoint"])
    if model.meta.get("condition_spec") != ["previous-day"] or model.B != model.T:
        raise ContractError("predict needs a checkpoint trained with previous-day conditioning (B = T)")
    ds = D.load_csv(cfg["data"])
    if ds.B != model.T:
        ds = D.window_day_pairs(ds)
    taus = list(cfg["quantiles"])
    S = int(cfg["samples"])
    out = _prepare_out(cfg)
    cond_scaled = model.scaler.transform_conditions(ds.conditions)[0]
    xcols = [f"x_{t}" for t in range(model.T)]
    with open(os.path.join(out, "quantiles.csv"), "w", newline="") as fq, \
            open(os.path.join(out, "truth.csv"), "w", newline="") as ft:
        wq = csv.writer(fq, lineterminator="\n")
        wq.writerow(["pair_id", "t", "tau", "value"])
        wt = csv.writer(ft, lineterminator="\n")
        wt.writerow(["pair_id", "household", "date"] + xcols)
        fe = open(os.path.join(out, "ensemble.csv"), "w", newline="") if cfg["write_ensemble"] else None
        try:
            we = csv.writer(fe, lineterminator="\n") if fe else None
            if we:
                we.writerow(["pair_id", "sample"] + xcols)
            for i in range(ds.N):
                ens = model.sample(cond_scaled[i:i + 1], n=S, seed=_seed_for(cfg["seed"], i))
                ens = model.scaler.inverse_profiles(ens)
                qs = M.empirical_quantiles(ens, taus)
                for t in range(model.T):
                    for tau in taus:
                        wq.writerow([i, t, tau, _fmt(qs[tau][t])])
                hh = ds.household[i] if ds.household is not None else ""
                day = ds.date[i] if ds.date is not None else ""
                wt.writerow([i, hh, day] + [_fmt(v) for v in ds.profiles[i]])
                if we:
                    for k, row in enumerate(ens):
                        we.writerow([i, k] + [_fmt(v) for v in row])
        finally:
            if fe:
                fe.close()


# --- evaluate ------------------------------------------------------------


def _read_grouped(path) -> dict:
    groups: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "pair_id" not in reader.fieldnames:
            raise ParseError(f"{path}: expected a pair_id column")
        xcols = sorted((c for c in reader.fieldnames if c.startswith("x_")), key=lambda c: int(c[2:]))
        for r, row in enumerate(reader, start=1):
            try:
                groups.setdefault(int(row["pair_id"]), []).append([float(row[c]) for c in xcols])
            except (TypeError, ValueError):
                raise ParseError(f"{path}: row {r}: bad value") from None
    return {k: np.array(v) for k, v in groups.items()}


def cmd_evaluate(cfg) -> None:
    _need_file(cfg["data"], "data file")
    if cfg.get("generated"):
        _need_file(cfg["generated"], "generated file")
        real = D.load_csv(cfg["data"], allow_negative=True).profiles
        gen = D.load_csv(cfg["generated"], allow_negative=True).profiles
        if real.shape[1] != gen.shape[1]:
            raise ContractError(f"profile lengths differ: {real.shape[1]} vs {gen.shape[1]}")
        report = M.generation_report(real, gen)
    else:
        _need_file(cfg["ensemble"], "ensemble file")
        truth = _read_grouped(cfg["data"])
        ens = _read_grouped(cfg["ensemble"])
        if set(truth) != set(ens):
            raise ContractError("truth and ensemble files cover different pair ids")
        ids = sorted(truth)
        truths = np.vstack([truth[i][0] for i in ids])
        if truths.shape[1] != ens[ids[0]].shape[1]:
            raise ContractError("truth and ensemble profile lengths differ")
        report = M.forecast_report(truths, [ens[i] for i in ids], tuple(cfg["quantiles"]))
    out = _prepare_out(cfg)
    report.to_csv(os.path.join(out, "metrics.csv"))
    report.to_json(os.path.join(out, "metrics.json"))
    for k, v in report.values().items():
        print(f"{k}\t{v:.6g}")


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "predict": cmd_predict, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        COMMANDS[args.command](cfg)
    except (UsageError, OSError, ParseError, CheckpointError, ConfigurationError) as exc:
        print(f"fcpflow {args.command}: {exc}", file=sys.stderr)
        return 2
    except FCPFlowError as exc:
        print(f"fcpflow {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
