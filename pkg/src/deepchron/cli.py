"""Command-line entry point: synth, dfc, train, compare, gradcheck.

Exit codes: 0 success, 1 usage, 2 data error (including partial failure),
3 verification failure. Every command that takes ``--out`` writes
``run_manifest.json`` there.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .chronnectome import InsufficientDataError, WindowSpec, compute_dfc, read_dfc_csv, read_scan_csv, write_dfc_csv
from .datagen import PRESETS, SyntheticSpec, generate_corpus, write_corpus
from .evaluation import METRIC_NAMES, SubjectRecord, fold_metrics, make_folds, run_protocol
from .gradcheck import gradcheck
from .methods import LSTM_METHODS, METHOD_ORDER, LstmMethod, build_method, display_name
from .recurrent_nets import VARIANTS, save_checkpoint
from .training import TrainConfig, config_echo, format_log_line

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- run manifest ------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)   # path -> sha256
    outputs: list = field(default_factory=list)
    status: str = "ok"
    errors: list = field(default_factory=list)
    version: str = __version__

    def to_json(self, out_dir=None) -> dict:
        outputs = self.outputs
        if out_dir is not None:
            # relative to the output directory, so identical runs in different places match
            outputs = [os.path.relpath(p, out_dir) for p in outputs]
        return {"command": self.command, "config": self.config, "seed": self.seed,
                "inputs": self.inputs, "outputs": sorted(outputs), "status": self.status,
                "errors": self.errors, "version": self.version}

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "run_manifest.json"
        atomic_write(path, json.dumps(self.to_json(out_dir), indent=1, sort_keys=True) + "\n")
        return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def fmt_number(x) -> str:
    """Shortest round-trip repr with a compact exponent: 1e-06 -> 1e-6."""
    return re.sub(r"e([+-])0*(\d)", lambda m: "e" + ("-" if m.group(1) == "-" else "") + m.group(2),
                  repr(x))


def recipe_line(cfg: TrainConfig, hidden: int) -> str:
    pairs = [("lr0", cfg.lr0), ("decay", cfg.decay_rate), ("batch", cfg.batch_size),
             ("max_epochs", cfg.max_epochs), ("patience", cfg.patience_epochs),
             ("dropout", cfg.dropout_rate), ("l1", cfg.l1_coeff), ("hidden", hidden)]
    return ", ".join(f"{k}={fmt_number(v)}" for k, v in pairs)


# --- corpus loading -----------------------------------------------------------------------

def read_json(path, what: str) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON in {what}: {exc.msg}") from exc


def load_corpus(manifest_path) -> tuple[dict, list[tuple[str, int, list]]]:
    """Returns the manifest and ``[(subject_id, label, [scan paths])]``."""
    manifest = read_json(manifest_path, "corpus manifest")
    base = Path(manifest_path).parent
    try:
        subjects = [(s["id"], int(s["label"]), [base / p for p in s["scans"]])
                    for s in manifest["subjects"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{manifest_path}: malformed subject entry ({exc})") from exc
    if not subjects:
        raise DataError(f"{manifest_path}: no subjects")
    return manifest, subjects


def load_dataset(manifest_path, dfc_index=None, window: WindowSpec = WindowSpec()) -> list[SubjectRecord]:
    """Subjects with raw scans and dFC sequences; dFC comes from ``dfc_index`` if given."""
    _, subjects = load_corpus(manifest_path)
    dfc_paths = {}
    if dfc_index is not None:
        index = read_json(dfc_index, "dFC index")
        base = Path(dfc_index).parent
        dfc_paths = {e["scan"]: base / e["path"] for e in index["scans"] if "path" in e}
    records = []
    for sid, label, paths in subjects:
        scans, dfcs = [], []
        for p in paths:
            try:
                ts = read_scan_csv(p, sid, Path(p).stem)
            except (OSError, ValueError) as exc:
                raise DataError(f"{p}: {exc}") from exc
            scans.append(ts)
            if dfc_index is not None:
                if ts.scan_id not in dfc_paths:
                    raise DataError(f"{dfc_index}: no dFC for scan {ts.scan_id}")
                dfcs.append(read_dfc_csv(dfc_paths[ts.scan_id], sid, ts.scan_id))
            else:
                dfcs.append(compute_dfc(ts, window))
        records.append(SubjectRecord(sid, label, dfcs, scans))
    return records


# --- synth --------------------------------------------------------------------------------

def load_spec(args) -> SyntheticSpec:
    if args.spec:
        obj = read_json(args.spec, "synthetic spec")
        if not isinstance(obj, dict):
            raise DataError(f"{args.spec}: spec must be a JSON object")
        preset = obj.pop("preset", None)
        try:
            if preset is not None:
                if preset not in PRESETS:
                    raise DataError(f"{args.spec}: unknown preset {preset!r}")
                obj.pop("name", None)
                spec = PRESETS[preset](**obj)
            else:
                spec = SyntheticSpec.from_json(obj)
        except TypeError as exc:
            raise DataError(f"{args.spec}: {exc}") from exc
        except ValueError as exc:
            raise DataError(f"{args.spec}: {exc}") from exc
    else:
        spec = PRESETS[args.preset]()
    if args.seed is not None:
        spec.seed = args.seed
    if args.subjects_per_class is not None:
        spec.subjects_per_class = args.subjects_per_class
    return spec


def corpus_hash(out_dir, manifest_path) -> str:
    h = hashlib.sha256()
    paths = sorted(Path(out_dir, "scans").glob("*.csv")) + [Path(manifest_path)]
    for p in paths:
        h.update(p.name.encode())
        h.update(bytes.fromhex(sha256_file(p)))
    return h.hexdigest()


def cmd_synth(args) -> int:
    spec = load_spec(args)
    out = Path(args.out)
    manifest_path = write_corpus(spec, generate_corpus(spec), out)
    digest = corpus_hash(out, manifest_path)
    run = RunManifest("synth", {"spec": spec.to_json(), "corpus_sha256": digest}, spec.seed,
                      {args.spec: sha256_file(args.spec)} if args.spec else {},
                      [str(manifest_path)])
    run.write(out)
    print(f"wrote {2 * spec.subjects_per_class} subjects to {out} (sha256 {digest})")
    return EXIT_OK


# --- dfc ----------------------------------------------------------------------------------

def cmd_dfc(args) -> int:
    _, subjects = load_corpus(args.manifest)
    out = Path(args.out)
    (out / "dfc").mkdir(parents=True, exist_ok=True)
    spec = WindowSpec(args.window, args.stride)
    entries, errors, outputs = [], [], []
    inputs = {args.manifest: sha256_file(args.manifest)}
    for sid, label, paths in subjects:
        for p in paths:
            scan_id = Path(p).stem
            try:
                inputs[str(p)] = sha256_file(p)
                ts = read_scan_csv(p, sid, scan_id)
                dfc = compute_dfc(ts, spec)
            except (OSError, ValueError, InsufficientDataError) as exc:
                msg = f"{scan_id}: {exc}"
                errors.append(msg)
                print(f"error: {msg}", file=sys.stderr)
                entries.append({"subject": sid, "scan": scan_id, "error": str(exc)})
                continue
            rel = Path("dfc") / f"{scan_id}.csv"
            write_dfc_csv(out / rel, dfc)
            outputs.append(str(out / rel))
            entries.append({"subject": sid, "label": label, "scan": scan_id, "path": rel.as_posix(),
                            "windows": dfc.num_windows, "links": dfc.link_dim,
                            "degenerate_windows": len({t for t, _ in dfc.degenerate})})
    index = out / "dfc_index.json"
    atomic_write(index, json.dumps({"window": args.window, "stride": args.stride,
                                    "corpus_manifest": str(Path(args.manifest).resolve()),
                                    "scans": entries}, indent=1, sort_keys=True) + "\n")
    outputs.append(str(index))
    run = RunManifest("dfc", {"window": args.window, "stride": args.stride}, None, inputs, outputs,
                      "partial" if errors else "ok", errors)
    run.write(out)
    print(f"{len(entries) - len(errors)} of {len(entries)} scans converted")
    return EXIT_DATA if errors else EXIT_OK


# --- train --------------------------------------------------------------------------------

def train_config_from(args) -> TrainConfig:
    return TrainConfig(lr0=args.lr, decay_rate=args.decay, batch_size=args.batch, max_epochs=args.epochs,
                       patience_epochs=args.patience, l1_coeff=args.l1, dropout_rate=args.dropout)


def dataset_inputs(args) -> dict:
    inputs = {args.manifest: sha256_file(args.manifest)}
    if args.dfc:
        inputs[args.dfc] = sha256_file(args.dfc)
    return inputs


def cmd_train(args) -> int:
    cfg = train_config_from(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = {"model": args.model, "hidden": args.hidden, "fold": args.fold, "folds": args.folds,
            "window": args.window, "stride": args.stride, "train": config_echo(cfg),
            "recipe": recipe_line(cfg, args.hidden)}
    if not 0 <= args.fold < args.folds:
        raise UsageError(f"--fold must be in [0, {args.folds})")
    run = RunManifest("train", echo, args.seed, dataset_inputs(args))
    data = load_dataset(args.manifest, args.dfc, WindowSpec(args.window, args.stride))
    plan = make_folds({s.subject_id: s.label for s in data}, args.folds, seed=args.seed)
    fold = plan.folds[args.fold]
    by_id = {s.subject_id: s for s in data}
    log_lines = []
    method = LstmMethod(args.model, cfg, args.hidden, log_fn=lambda e: log_lines.append(format_log_line(e)))
    method.fit([by_id[s] for s in fold.train], [by_id[s] for s in fold.val],
               seed=args.seed * 1000 + args.fold)
    test = [by_id[s] for s in fold.test]
    preds = method.predict(test)
    metrics = fold_metrics([p for p, _ in preds], [sc for _, sc in preds], [s.label for s in test])
    metrics.update(fold=args.fold, stop_reason=method.report.stop_reason,
                   best_epoch=method.report.best_epoch, epochs_run=method.report.epochs_run)

    ckpt = out / "checkpoint.json"
    save_checkpoint(ckpt, method.params)
    atomic_write(out / "train_log.jsonl", "".join(line + "\n" for line in log_lines))
    atomic_write(out / "fold_metrics.json", json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    atomic_write(out / "fold_plan.json", json.dumps(plan.to_json(), indent=1, sort_keys=True) + "\n")
    run.outputs = [str(out / n) for n in ("checkpoint.json", "train_log.jsonl", "fold_metrics.json",
                                          "fold_plan.json")]
    run.config["checkpoint_sha256"] = sha256_file(ckpt)
    run.write(out)
    print(f"fold {args.fold}: " + " ".join(f"{k}={metrics[k]:.3f}" for k in METRIC_NAMES))
    return EXIT_OK


# --- compare ------------------------------------------------------------------------------

def method_list(spec: str) -> list[str]:
    if spec == "all":
        return list(METHOD_ORDER)
    names = [m.strip() for m in spec.split(",") if m.strip()]
    known = set(METHOD_ORDER) | {"oracle"}
    bad = [m for m in names if m not in known]
    if bad:
        raise UsageError(f"unknown method(s): {', '.join(bad)}")
    # keep table order regardless of how they were listed
    return sorted(names, key=lambda m: METHOD_ORDER.index(m) if m in METHOD_ORDER else len(METHOD_ORDER))


def expand_units(methods: list[str], hiddens: list[int]) -> list[tuple[str, str, int]]:
    """(row key, method, hidden); LSTM rows repeat per hidden size when sweeping."""
    units = []
    for m in methods:
        if m in LSTM_METHODS and len(hiddens) > 1:
            units.extend((f"{m}-h{h}", m, h) for h in hiddens)
        else:
            units.append((m, m, hiddens[0]))
    return units


def write_roc_csv(path, roc) -> None:
    lines = ["fpr,tpr,threshold"] + [f"{fpr!r},{tpr!r},{thr!r}" for fpr, tpr, thr in roc]
    atomic_write(path, "\n".join(lines) + "\n")


def _run_unit(key, method_name, hidden, cfg, k_status, data, plan, seed, out) -> dict:
    """One method under the shared plan; writes its own files and returns a summary."""
    log_lines: list[str] = []
    method = build_method(method_name, cfg, hidden, k_status,
                          log_fn=lambda e: log_lines.append(format_log_line(e)))
    method.name = key
    label = display_name(method_name, hidden)
    outputs, checkpoints = [], {}

    def on_fold(i, _metrics):
        if isinstance(method, LstmMethod):
            ckpt = out / "checkpoints" / f"{key}_fold{i}.json"
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(ckpt, method.params)
            checkpoints[ckpt.name] = sha256_file(ckpt)
            log = out / "logs" / f"{key}_fold{i}.jsonl"
            atomic_write(log, "".join(line + "\n" for line in log_lines))
            log_lines.clear()
            outputs.extend([str(ckpt), str(log)])

    try:
        report = run_protocol(data, method, plan, seed=seed, on_fold=on_fold)
    except Exception as exc:  # a failed method marks its row, the others still run
        return {"key": key, "label": label, "error": f"{type(exc).__name__}: {exc}", "outputs": outputs}
    metrics_path = out / "metrics" / f"{key}.json"
    atomic_write(metrics_path, report.dumps() + "\n")
    roc_path = out / "roc" / f"{key}.csv"
    write_roc_csv(roc_path, report.roc)
    outputs.extend([str(metrics_path), str(roc_path)])
    return {"key": key, "mean": report.mean, "std": report.std, "roc": report.roc,
            "checkpoints": checkpoints, "outputs": outputs, "label": label}


def format_cell(mean: float, std: float) -> str:
    return f"{100 * mean:.1f}({100 * std:.1f})"


def render_table(rows: list[dict]) -> tuple[str, str]:
    """Text and CSV renderings; rows are method summaries in table order."""
    header = ["Method"] + [m.upper() for m in METRIC_NAMES]
    body = []
    for r in rows:
        if "error" in r:
            body.append([r["label"]] + ["failed"] * len(METRIC_NAMES))
        else:
            body.append([r["label"]] + [format_cell(r["mean"][m], r["std"][m]) for m in METRIC_NAMES])
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    text = "\n".join("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
                     for row in [header] + body)
    lines = []
    for row in [header] + body:
        lines.append(",".join(row))
    return text + "\n", "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    methods = method_list(args.methods)
    try:
        hiddens = [int(h) for h in str(args.hidden).split(",")]
    except ValueError as exc:
        raise UsageError(f"--hidden must be an integer or comma list: {args.hidden}") from exc
    cfg = train_config_from(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = {"methods": methods, "hidden": hiddens, "folds": args.folds, "k_status": args.k_status,
            "window": args.window, "stride": args.stride, "jobs": args.jobs, "train": config_echo(cfg),
            "recipe": recipe_line(cfg, hiddens[0])}
    run = RunManifest("compare", echo, args.seed, dataset_inputs(args))
    data = load_dataset(args.manifest, args.dfc, WindowSpec(args.window, args.stride))
    plan = make_folds({s.subject_id: s.label for s in data}, args.folds, seed=args.seed)
    atomic_write(out / "fold_plan.json", json.dumps(plan.to_json(), indent=1, sort_keys=True) + "\n")

    units = expand_units(methods, hiddens)
    jobs = [(key, m, h, cfg, args.k_status, data, plan, args.seed, out) for key, m, h in units]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_unit, *zip(*jobs)))
    else:
        results = []
        for job in jobs:
            print(f"running {job[0]} ...", flush=True)
            results.append(_run_unit(*job))

    text, csv_text = render_table(results)
    atomic_write(out / "table.txt", text)
    atomic_write(out / "table.csv", csv_text)
    outputs = [str(out / n) for n in ("table.txt", "table.csv", "fold_plan.json")]
    curves = {}
    for r in results:
        outputs.extend(r["outputs"])
        if "error" in r:
            run.errors.append(f"{r['key']}: {r['error']}")
            continue
        curves[r["label"]] = (r["roc"], r["mean"]["auc"])
        if not args.no_figures:
            from .plotting import roc_figure
            outputs.extend(str(p) for p in roc_figure({r["label"]: curves[r["label"]]},
                                                      out / "roc" / r["key"]))
    if curves and not args.no_figures:
        from .plotting import roc_figure
        outputs.extend(str(p) for p in roc_figure(curves, out / "roc_all"))
    run.config["checkpoint_sha256"] = {k: v for r in results for k, v in r.get("checkpoints", {}).items()}
    run.outputs = outputs
    run.status = "partial" if run.errors else "ok"
    run.write(out)
    print(text, end="")
    for e in run.errors:
        print(f"error: {e}", file=sys.stderr)
    return EXIT_DATA if run.errors else EXIT_OK


# --- gradcheck ----------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    variants = list(VARIANTS) if args.model == "all" else [args.model]
    worst = 0.0
    report = {}
    for v in variants:
        errs = gradcheck(v, hidden=args.hidden, input_dim=args.input_dim, seq_len=args.seq_len,
                         seed=args.seed, eps=args.eps, corrupt=args.corrupt)
        report[v] = errs
        for name, err in errs.items():
            flag = "ok" if err < GRADCHECK_TOL else "FAIL"
            print(f"{v}\t{name}\t{err:.3e}\t{flag}")
            worst = max(worst, err)
    passed = worst < GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'pass' if passed else 'fail'}, tolerance {GRADCHECK_TOL:g})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write(out / "gradcheck.json", json.dumps(report, indent=1, sort_keys=True) + "\n")
        RunManifest("gradcheck", {"models": variants, "hidden": args.hidden, "input_dim": args.input_dim,
                                  "seq_len": args.seq_len, "eps": args.eps}, args.seed, {},
                    [str(out / "gradcheck.json")], "ok" if passed else "failed").write(out)
    return EXIT_OK if passed else EXIT_VERIFY


# --- parser -------------------------------------------------------------------------------

def _add_data_args(p):
    p.add_argument("--manifest", required=True, help="corpus manifest.json")
    p.add_argument("--dfc", help="dfc_index.json from the dfc command; computed on the fly if omitted")
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _add_train_args(p, hidden_type=int):
    d = TrainConfig()
    p.add_argument("--hidden", type=hidden_type, default=32)
    p.add_argument("--dropout", type=float, default=d.dropout_rate)
    p.add_argument("--l1", type=float, default=d.l1_coeff)
    p.add_argument("--lr", type=float, default=d.lr0)
    p.add_argument("--decay", type=float, default=d.decay_rate)
    p.add_argument("--batch", type=int, default=d.batch_size)
    p.add_argument("--epochs", type=int, default=d.max_epochs)
    p.add_argument("--patience", type=int, default=d.patience_epochs)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deepchron", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="JSON spec file (may name a preset plus overrides)")
    src.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--subjects-per-class", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dfc", help="sliding-window dFC for every scan in a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dfc)

    p = sub.add_parser("train", help="train one recurrent model on one fold")
    p.add_argument("--model", choices=VARIANTS, default="full-bilstm")
    p.add_argument("--fold", type=int, default=0)
    _add_train_args(p)
    _add_data_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="all methods under one shared fold plan")
    p.add_argument("--methods", default="all", help="'all' or a comma list; 'oracle' is a test stub")
    p.add_argument("--k-status", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true", help="skip the SVG/PNG ROC figures")
    _add_train_args(p, hidden_type=str)
    _add_data_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--model", choices=list(VARIANTS) + ["all"], default="all")
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--input-dim", type=int, default=12)
    p.add_argument("--seq-len", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--out")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"deepchron {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InsufficientDataError) as exc:
        print(f"deepchron {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
