"""Command-line entry point: ``cersa-forge <command> ...``.

Every failure prints one line ``cersa-forge: error[CODE]: message`` to
standard error, optionally followed by detail lines, and exits nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from cersa_forge import analysis, container, memory, report, spectrum
from cersa_forge import config as config_module
from cersa_forge.adapters import CersaLayer, kind_to_dict
from cersa_forge.config import ConfigError, ExperimentConfig
from cersa_forge.container import Checkpoint, ContainerError
from cersa_forge.factor import factorize, reconstruction_error
from cersa_forge.linalg import svd
from cersa_forge.tasks import gen_task
from cersa_forge.train import (
    TrainingDiverged,
    base_weights,
    build_model,
    compare_methods,
    comparison_csv,
    train_run,
)

PROG = "cersa-forge"
THREADS_ENV = "CERSA_FORGE_THREADS"
DEFAULT_THRESHOLDS = (0.8, 0.85, 0.9, 0.92, 0.95)


class CliError(Exception):
    def __init__(self, code: str, message: str, details: list[str] | None = None, status: int = 1):
        super().__init__(message)
        self.code = code
        self.details = details or []
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("E_ARGS", message, status=2)


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _dims(text: str) -> tuple[int, int]:
    try:
        m, n = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MxN, got {text!r}")
    if m <= 0 or n <= 0:
        raise argparse.ArgumentTypeError(f"dimensions must be positive, got {text!r}")
    return m, n


def _threads_default():
    raw = os.environ.get(THREADS_ENV)
    return int(raw) if raw else None


def _thread_limit(threads):
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def _load(path) -> Checkpoint:
    try:
        return container.load(path)
    except ContainerError as exc:
        raise CliError("E_CONTAINER", f"{path}: {exc}") from exc


def _matrices(ckpt: Checkpoint, path) -> dict[str, np.ndarray]:
    mats = {k: np.asarray(v, dtype=np.float64) for k, v in ckpt.tensors.items() if v.ndim == 2}
    if not mats:
        raise CliError("E_CONTAINER", f"{path}: container holds no 2-D tensors")
    return mats


def _safe(name: str) -> str:
    return name.replace("/", "__")


# -- analyze ---------------------------------------------------------------


def cmd_analyze(args) -> int:
    ckpt = _load(args.checkpoint)
    mats = _matrices(ckpt, args.checkpoint)
    layers = []
    for name, w in mats.items():
        layers.append((name, svd(w).sigma))
    try:
        rows = spectrum.layer_rank_report(layers, args.thresholds)
    except spectrum.LayerError as exc:
        raise CliError("E_SPECTRUM", str(exc)) from exc
    except ValueError as exc:
        raise CliError("E_INPUT", str(exc)) from exc
    out = Path(args.out)
    report.write_text(out / "rank_report.csv", spectrum.rank_report_csv(rows))
    report.write_text(out / "rank_report.json", spectrum.rank_report_json(rows))
    if args.plot and rows:
        from cersa_forge import plotting

        plotting.rank_report(rows, out / "rank_report.svg")
    sys.stdout.write(spectrum.rank_report_csv(rows))
    return 0


# -- factorize ---------------------------------------------------------------


def cmd_factorize(args) -> int:
    try:
        spectrum.check_thresholds(args.alpha, args.beta)
    except ValueError as exc:
        raise CliError("E_ARGS", str(exc), status=2) from exc
    ckpt = _load(args.checkpoint)
    _matrices(ckpt, args.checkpoint)
    tensors: dict[str, np.ndarray] = {}
    selections = {}
    rows = []
    failures = []
    for name, arr in ckpt.tensors.items():
        if arr.ndim != 2:
            tensors[name] = arr
            continue
        w = np.asarray(arr, dtype=np.float64)
        try:
            f = factorize(w, args.alpha, args.beta)
        except ValueError as exc:
            failures.append(f"{name}: {exc}")
            continue
        tensors[f"{name}/u_p"] = f.u_p
        tensors[f"{name}/v_pt"] = f.v_pt
        tensors[f"{name}/s_core"] = f.s_core
        tensors[f"{name}/sigma_frozen"] = f.sigma_frozen
        sel = f.selection
        selections[name] = {**sel.to_dict(), "core_start": f.core_start, "shape": list(w.shape)}
        m, n = w.shape
        rate = memory.cersa_compression(m, n, sel.k_alpha, sel.k_beta)
        rows.append([name, sel.k_alpha, sel.k_beta, reconstruction_error(w, f), rate])
    meta = dict(ckpt.metadata)
    meta.update({"cersa": {"alpha": args.alpha, "beta": args.beta}, "selections": selections})
    container.save(args.output, Checkpoint(tensors, meta))
    table = report.to_csv(("tensor", "k_alpha", "k_beta", "reconstruction_error", "compression"), rows)
    report.write_text(Path(str(args.output) + ".report.csv"), table)
    sys.stdout.write(table)
    if failures:
        raise CliError("E_FACTORIZE", f"{len(failures)} tensor(s) could not be factorized", failures)
    return 0


# -- train ---------------------------------------------------------------


def _weights_ckpt(model, meta) -> Checkpoint:
    tensors = {}
    for idx, layer in enumerate(model.layers):
        tensors[f"layer{idx}/weight"] = np.array(layer.effective_weight())
        tensors[f"layer{idx}/bias"] = np.array(layer.params["bias"])
    return Checkpoint(tensors, meta)


def _adapter_ckpt(model, meta) -> Checkpoint:
    tensors = {}
    layers_meta = []
    for idx, layer in enumerate(model.layers):
        for name, arr in sorted(layer.frozen.items()):
            tensors[f"layer{idx}/{name}"] = np.array(arr)
        for name, arr in sorted(layer.params.items()):
            tensors[f"layer{idx}/{name}"] = np.array(arr)
        entry = {"kind": kind_to_dict(layer.kind), "trainable": sorted(layer.params)}
        if isinstance(layer, CersaLayer):
            entry["selection"] = layer.selection.to_dict()
            entry["core_start"] = layer.core_start
        layers_meta.append(entry)
    return Checkpoint(tensors, {**meta, "layers": layers_meta})


def _train_single(cfg: ExperimentConfig, out: Path, args) -> int:
    data = gen_task(cfg.task)
    spec = cfg.model_spec()
    base = base_weights(spec, data, cfg.train.seed)
    model = build_model(spec, base, cfg.train.seed)
    meta = {"task": cfg.task.to_dict(), "kinds": [kind_to_dict(k) for k in spec.kinds]}
    container.save(out / "base.cft", _weights_ckpt(model, meta))
    snapshots = {}

    def snap(step, m):
        snapshots[step] = [np.array(layer.effective_weight()) for layer in m.layers]

    label = " + ".join(dict.fromkeys(k.label() for k in spec.kinds))
    try:
        rec = train_run(
            model,
            cfg.train,
            data,
            label=label,
            callback=snap if cfg.checkpoint_every else None,
            checkpoint_every=cfg.checkpoint_every,
            timing=args.timing,
            threads=args.threads,
        )
    except TrainingDiverged as exc:
        raise CliError("E_DIVERGED", f"training diverged at step {exc.step}: {exc}") from exc
    report.write_text(out / "loss.csv", rec.loss_csv())
    report.write_text(out / "run.json", rec.to_json())
    if args.timing:
        report.write_text(out / "timing.csv", rec.timing_csv())
    container.save(out / "final.cft", _weights_ckpt(model, meta))
    container.save(out / "adapter.cft", _adapter_ckpt(model, meta))
    if snapshots:
        tensors = {
            f"step{step}/layer{idx}/weight": w for step, ws in snapshots.items() for idx, w in enumerate(ws)
        }
        container.save(out / "snapshots.cft", Checkpoint(tensors, {**meta, "steps": sorted(snapshots)}))
    if args.plot:
        from cersa_forge import plotting

        plotting.loss_curves({label: rec.losses}, out / "loss.svg")
    print(f"{label}: final train loss {report.fmt(rec.final_train['loss'])}, "
          f"test {', '.join(f'{k} {report.fmt(v)}' for k, v in rec.final_test.items())}")
    return 0


def _train_compare(cfg: ExperimentConfig, out: Path, args) -> int:
    rows = compare_methods(
        cfg.kinds,
        cfg.dims,
        cfg.task,
        cfg.train,
        seeds=cfg.seeds,
        activation=cfg.activation,
        head=cfg.head,
        threads=args.threads,
    )
    table = comparison_csv(rows)
    report.write_text(out / "comparison.csv", table)
    report.write_text(
        out / "comparison.json",
        report.to_json(
            {
                "seeds": list(cfg.seeds),
                "metric": "accuracy" if cfg.head == "softmax-ce" else "loss",
                "rows": [
                    {
                        "label": r.label,
                        "rank": r.rank,
                        "trainable_count": r.trainable_count,
                        "median_test_metric": None if r.error else r.test_metric,
                        "per_seed": r.per_seed,
                        "error": r.error,
                    }
                    for r in rows
                ],
            }
        ),
    )
    curves = {r.label: r.curve for r in rows if r.error is None}
    longest = max((len(c) for c in curves.values()), default=0)
    report.write_text(
        out / "loss_curves.csv",
        report.to_csv(
            ("step", *curves),
            ([step + 1, *(c[step] for c in curves.values())] for step in range(longest)),
        ),
    )
    if args.plot and curves:
        from cersa_forge import plotting

        plotting.loss_curves(curves, out / "loss_curves.svg")
    sys.stdout.write(table)
    if any(r.error for r in rows):
        details = [f"{r.label}: {r.error}" for r in rows if r.error]
        raise CliError("E_RUN", f"{len(details)} method(s) failed", details)
    return 0


def cmd_train(args) -> int:
    try:
        cfg = config_module.load(args.config)
    except ConfigError as exc:
        raise CliError("E_CONFIG", f"{args.config}: invalid experiment config", exc.problems) from exc
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out) if args.out else cfg.out_dir
    try:
        with _thread_limit(args.threads):
            if args.compare:
                return _train_compare(cfg, out, args)
            return _train_single(cfg, out, args)
    except ConfigError as exc:
        raise CliError("E_CONFIG", f"{args.config}: invalid experiment config", exc.problems) from exc
    except ValueError as exc:
        raise CliError("E_INPUT", str(exc)) from exc


# -- similarity ---------------------------------------------------------------


def cmd_similarity(args) -> int:
    a = _matrices(_load(args.a), args.a)
    b = _matrices(_load(args.b), args.b)
    offenders = sorted(f"{n}: only in {args.a}" for n in a.keys() - b.keys())
    offenders += sorted(f"{n}: only in {args.b}" for n in b.keys() - a.keys())
    offenders += sorted(
        f"{n}: shape {list(a[n].shape)} vs {list(b[n].shape)}"
        for n in a.keys() & b.keys()
        if a[n].shape != b[n].shape
    )
    if offenders:
        raise CliError("E_MISMATCH", "checkpoints do not hold matching tensors", offenders)
    out = Path(args.out)
    rows = []
    for name in a:
        try:
            psi_u, psi_v = analysis.subspace_similarity(a[name], b[name], args.retention)
            k = spectrum.select_rank(spectrum.energy_profile(svd(a[name]).sigma), args.retention)
        except ValueError as exc:
            raise CliError("E_INPUT", f"{name}: {exc}") from exc
        rows.append([name, k, psi_u, psi_v])
        if args.grid:
            p = min(a[name].shape)
            size = min(args.max_rank or k, p)
            for side in ("u", "v"):
                grid = analysis.similarity_grid(a[name], b[name], size, size, side, (str(args.a), str(args.b)))
                stem = f"grid_{_safe(name)}_{side}"
                report.write_text(out / f"{stem}.csv", grid.to_csv())
                if args.plot:
                    from cersa_forge import plotting

                    plotting.similarity_heatmap(grid, out / f"{stem}.svg", f"{name} ({side})")
    table = report.to_csv(("tensor", "k", "psi_u", "psi_v"), rows)
    report.write_text(out / "similarity.csv", table)
    sys.stdout.write(table)
    return 0


# -- memory ---------------------------------------------------------------


def cmd_memory(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in memory.METHODS]
    if unknown:
        raise CliError("E_ARGS", f"unknown method(s) {unknown}; expected {list(memory.METHODS)}", status=2)
    dims = list(args.dims or [])
    layer_ranks = None
    if args.checkpoint:
        mats = _matrices(_load(args.checkpoint), args.checkpoint)
        dims.extend(w.shape for w in mats.values())
        if args.alpha is not None:
            layer_ranks = [
                spectrum.select_rank(spectrum.energy_profile(svd(w).sigma), args.alpha) for w in mats.values()
            ]
    dims = dims * args.repeat
    if layer_ranks is not None:
        layer_ranks = layer_ranks * args.repeat
    reports = []
    for method in methods:
        try:
            if args.params is not None:
                if method != "FT":
                    raise ValueError(f"--params only describes full fine-tuning, not {method}")
                reports.append(memory.MemoryReport.from_counts("FT", args.params, args.params))
                continue
            if not dims:
                raise ValueError("no matrix dimensions given (use --dims or --checkpoint)")
            ranks = layer_ranks if method == "CERSA" and layer_ranks is not None else None
            reports.append(memory.memory_report(method, dims, rank=args.rank, ranks=ranks, e=args.e))
        except ValueError as exc:
            raise CliError("E_INPUT", f"{method}: {exc}") from exc
    out = Path(args.out)
    table = memory.reports_csv(reports)
    report.write_text(out / "memory.csv", table)
    report.write_text(out / "memory.json", memory.reports_json(reports))
    sys.stdout.write(table)
    if args.curve:
        if not dims:
            raise CliError("E_INPUT", "--curve needs matrix dimensions")
        m, n = dims[0]
        points = memory.compression_curve(m, n, ranks=range(1, min(m, n) + 1))
        lora = memory.lora_reference_rate(m, n)
        report.write_text(out / "compression_curve.csv", memory.curve_csv(points))
        report.write_text(
            out / "compression_meta.json",
            report.to_json(
                {"m": m, "n": n, "lora_r32_rate": lora, "break_even_rank": memory.break_even_rank(m, n)}
            ),
        )
        if args.plot:
            from cersa_forge import plotting

            plotting.compression_curve(points, lora, out / "compression_curve.svg", f"{m}x{n}")
    return 0


# -- wiring ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override every seed in the run")
    common.add_argument(
        "--threads",
        type=int,
        default=_threads_default(),
        help=f"BLAS thread count (default: ${THREADS_ENV}, else library default)",
    )
    common.add_argument("--no-plot", dest="plot", action="store_false", help="skip SVG figures")

    p = _Parser(prog=PROG, description="Energy-retaining subspace adaptation toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", parents=[common], help="layer-wise rank report")
    a.add_argument("checkpoint")
    a.add_argument("--thresholds", type=_float_list, default=list(DEFAULT_THRESHOLDS))
    a.set_defaults(func=cmd_analyze, default_out="analysis")

    f = sub.add_parser("factorize", parents=[common], help="replace 2-D tensors by CERSA factors")
    f.add_argument("checkpoint")
    f.add_argument("output")
    f.add_argument("--alpha", type=float, default=0.95)
    f.add_argument("--beta", type=float, default=None, help="defaults to alpha")
    f.set_defaults(func=cmd_factorize, default_out=".")

    t = sub.add_parser("train", parents=[common], help="run an experiment config")
    t.add_argument("config")
    t.add_argument("--compare", action="store_true", help="run and rank every adapter kind")
    t.add_argument("--timing", action="store_true", help="record wall seconds per step")
    t.set_defaults(func=cmd_train, default_out=None)

    s = sub.add_parser("similarity", parents=[common], help="principal subspace similarity")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--retention", type=float, default=0.95)
    s.add_argument("--grid", action="store_true", help="also write top-i/top-j grids")
    s.add_argument("--max-rank", type=int, default=None, help="grid size (default: selected k)")
    s.set_defaults(func=cmd_similarity, default_out="similarity")

    mem = sub.add_parser("memory", parents=[common], help="closed-form memory table")
    mem.add_argument("--dims", type=_dims, action="append", help="adapted matrix MxN (repeatable)")
    mem.add_argument("--repeat", type=int, default=1, help="replicate the matrix list (e.g. layers)")
    mem.add_argument("--checkpoint", help="take matrix shapes (and spectra) from a container")
    mem.add_argument("--alpha", type=float, default=None, help="layer-wise CERSA ranks from spectra")
    mem.add_argument("--methods", default="FT,CERSA,LoRA", help=f"comma-separated subset of {','.join(memory.METHODS)}")
    mem.add_argument("--rank", type=int, default=None, help="uniform rank for CERSA, LoRA, SVFit, FrozenUV")
    mem.add_argument("--e", type=int, default=None, help="SVFT sparse parameter count")
    mem.add_argument("--params", type=lambda s: int(float(s)), default=None, help="FT parameter total")
    mem.add_argument("--curve", action="store_true", help="emit compression curve data")
    mem.set_defaults(func=cmd_memory, default_out="memory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.out is None and args.default_out is not None:
            args.out = args.default_out
        if getattr(args, "beta", "absent") is None:
            args.beta = args.alpha
        return args.func(args)
    except CliError as exc:
        print(f"{PROG}: error[{exc.code}]: {exc}", file=sys.stderr)
        for line in exc.details:
            print(f"  {line}", file=sys.stderr)
        return exc.status


if __name__ == "__main__":
    sys.exit(main())
