"""Command-line front end.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
The manifest stores the argument vector, so ``spikeres replay`` rebuilds the
same files byte for byte, apart from the manifest timestamp.

Exit codes: 0 success, 2 mathematical precondition failure, 64 usage error,
65 configuration parse error, 70 internal error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import blasso, certificates as cert, kernels, selftest, structmat
from .structmat import PreconditionError

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_USAGE = 64
EXIT_CONFIG = 65
EXIT_INTERNAL = 70

SCHEMA_NAME = "experiment.schema.json"


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _kernel(spec: str, N: int | None = None) -> kernels.Kernel:
    try:
        return kernels.parse_kernel(spec, N=N, max_deriv=max(
            kernels.default_max_deriv(N), kernels.DEFAULT_MAX_DERIV))
    except ValueError as exc:
        raise UsageError(f"bad kernel spec: {exc}")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(fmt(v) for v in r))
    path.write_text("\n".join(lines) + "\n")


def svg_plot(series: list[tuple[str, np.ndarray, np.ndarray]], title: str,
             xlabel: str = "x", ylabel: str = "") -> str:
    """Minimal line plot with a fixed 640x400 viewBox."""
    W, H, m = 640, 400, 50
    xs = np.concatenate([s[1] for s in series])
    ys = np.concatenate([s[2] for s in series])
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = float(xs[ok].min()), float(xs[ok].max())
    y0, y1 = float(ys[ok].min()), float(ys[ok].max())
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return m + (v - x0) / (x1 - x0) * (W - 2 * m)

    def py(v):
        return H - m - (v - y0) / (y1 - y0) * (H - 2 * m)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" '
           f'width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{H - 2 * m}" '
           'fill="none" stroke="#444"/>',
           f'<text x="{W / 2}" y="{m / 2}" text-anchor="middle">{title}</text>',
           f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">{xlabel}</text>',
           f'<text x="14" y="{H / 2}" transform="rotate(-90 14 {H / 2})" '
           f'text-anchor="middle">{ylabel}</text>']
    for v, anchor in ((x0, "start"), (x1, "end")):
        out.append(f'<text x="{px(v):.2f}" y="{H - m + 16}" text-anchor="{anchor}">'
                   f'{v:.4g}</text>')
    for v in (y0, y1):
        out.append(f'<text x="{m - 4}" y="{py(v):.2f}" text-anchor="end">{v:.4g}</text>')
    if y0 < 0 < y1:
        out.append(f'<line x1="{m}" x2="{W - m}" y1="{py(0):.2f}" y2="{py(0):.2f}" '
                   'stroke="#bbb" stroke-dasharray="4 3"/>')
    for i, (label, x, y) in enumerate(series):
        c = colors[i % len(colors)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y)
                       if math.isfinite(a) and math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{W - m - 4}" y="{m + 16 + 14 * i}" text-anchor="end" '
                   f'fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, argv: list[str], config: dict,
                   files: list[Path], seed=None) -> Path:
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "seed": seed,
        "tool": "spikeres",
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": [{"path": f.name, "sha256": _sha256(f)} for f in files],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _x_grid(kernel, lo, hi, step):
    if isinstance(kernel, kernels.TrigKernel):
        lo = -0.5 if lo is None else lo
        hi = 0.5 if hi is None else hi
        step = step or 1.0 / (32 * kernel.fc)
    else:
        s = kernel.sigma
        lo = -10 * s if lo is None else lo
        hi = 10 * s if hi is None else hi
        step = step or s / 20
    n = int(round((hi - lo) / step))
    return np.linspace(lo, hi, n + 1)


# --------------------------------------------------------------------------
# commands


def cmd_etaw(args, out: Path):
    files = []
    curves = []
    rows_all = {}
    for N in args.n:
        k = _kernel(args.kernel, N)
        c = cert.limit_precert(k, N)
        x = _x_grid(k, args.lo, args.hi, args.step)
        rows_all[N] = (x, c.eval(x))
        curves.append((f"N={N}", x, rows_all[N][1]))
    path = out / "etaw.csv"
    header = ["x"] + [f"eta_N{N}" for N in args.n]
    x = rows_all[args.n[0]][0]
    write_csv(path, header, zip(x, *[rows_all[N][1] for N in args.n]))
    files.append(path)
    svg = out / "etaw.svg"
    svg.write_text(svg_plot(curves, f"limit precertificate, {args.kernel}", "x", "eta"))
    files.append(svg)
    return files, {"kernel": args.kernel, "n": args.n}, None


def cmd_etav(args, out: Path):
    z = args.z
    k = _kernel(args.kernel, len(z))
    files = []
    curves = []
    x = _x_grid(k, args.lo, args.hi, args.step)
    for t in args.t:
        c = cert.vanishing_precert(k, t, z)
        path = out / f"etav_t{t:g}.csv"
        write_csv(path, ["x", "eta", "d1", "d2"],
                  zip(x, c.eval(x), c.eval(x, 1), c.eval(x, 2)))
        files.append(path)
        jpath = out / f"etav_t{t:g}.json"
        jpath.write_text(c.to_json() + "\n")
        files.append(jpath)
        curves.append((f"t={t:g}", x, c.eval(x)))
    w = cert.limit_precert(k, len(z))
    curves.append(("limit", x, w.eval(x)))
    svg = out / "etav.svg"
    svg.write_text(svg_plot(curves, f"vanishing precertificates, {args.kernel}", "x", "eta"))
    files.append(svg)
    return files, {"kernel": args.kernel, "z": z, "t": args.t}, None


def cmd_converge(args, out: Path):
    if any(t <= 0 for t in args.t):
        raise UsageError("all t must be positive")
    k = _kernel(args.kernel, len(args.z))
    rep = cert.convergence_report(k, args.z, args.t, args.max_order)
    path = out / "converge.csv"
    path.write_text(rep.to_csv())
    return [path], {"kernel": args.kernel, "z": args.z, "t": args.t,
                    "max_order": args.max_order}, None


def cmd_gram(args, out: Path):
    k = _kernel(args.kernel)
    if args.k > k.max_deriv:
        k = k.with_max_deriv(args.k)
    if args.positions:
        g = kernels.gamma_gram(k, args.positions)
    else:
        g = kernels.gram_Fk(k, args.k)
    rep = structmat.is_checkerboard(g.matrix)
    inj = kernels.injectivity_check(k, args.k)
    res = {"kernel": args.kernel, "k": args.k, "positions": args.positions,
           "matrix": g.matrix.tolist(), "basis_labels": g.basis_labels,
           "cond_estimate": g.cond_estimate,
           "checkerboard": {"is_checkerboard": rep.is_checkerboard,
                            "max_odd_parity_entry": rep.max_odd_parity_entry,
                            "tol": rep.tol},
           "injectivity": {"holds": inj.holds, "min_residual": inj.min_residual,
                           "gram_eig_ratio": inj.gram_eig_ratio}}
    if not args.positions and (args.k % 2 == 0) and inj.holds:
        try:
            b1, bn = structmat.inverse_corner_signs(g.matrix, tol=1e-8)
            res["inverse_corners"] = [b1, bn]
        except PreconditionError as exc:
            res["inverse_corners_error"] = str(exc)
    path = out / "gram.json"
    path.write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"checkerboard": rep.is_checkerboard, "injective": inj.holds}))
    return [path], {"kernel": args.kernel, "k": args.k, "positions": args.positions}, None


def cmd_nondegen(args, out: Path):
    k = _kernel(args.kernel, args.n)
    if args.t is not None:
        z = args.z or list(np.linspace(-1, 1, args.n))
        c = cert.vanishing_precert(k, args.t, z)
    else:
        c = cert.limit_precert(k, args.n)
    grid = None
    if args.step is not None:
        base = cert.default_grid(k)
        grid = cert.GridSpec(base.lo, base.hi, args.step, base.periodic)
    try:
        rep = cert.check_nondegeneracy(c, grid, keep_samples=True)
    except cert.GridError as exc:
        raise UsageError(str(exc))
    nec = cert.necessary_condition_check(k, args.n) if args.t is None else None
    res = rep.to_dict()
    if nec is not None:
        res["necessary_condition"] = {"holds": nec.holds, "sup": nec.sup}
    path = out / "nondegen.json"
    path.write_text(json.dumps(res, indent=2, sort_keys=True, default=_jsonable) + "\n")
    cpath = out / "nondegen_samples.csv"
    cpath.write_text(rep.to_csv())
    print(json.dumps({"verdict": rep.verdict, "sup_off_spike": rep.sup_off_spike}))
    return [path, cpath], {"kernel": args.kernel, "n": args.n, "t": args.t,
                           "z": args.z, "step": args.step}, None


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def load_config(path: str) -> dict:
    import jsonschema
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
    schema = json.loads(resources.files("spikeres.data").joinpath(SCHEMA_NAME).read_text())
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: invalid config at {loc}: {exc.message}")
    if len(cfg["a0"]) != len(cfg["z0"]):
        raise ConfigError(f"{path}: a0 and z0 must have the same length")
    try:
        kernels.parse_kernel(cfg["kernel"])
    except ValueError as exc:
        raise ConfigError(f"{path}: kernel: {exc}")
    return cfg


def _experiment(args, cfg, t_list, trials):
    N = len(cfg["z0"])
    k = kernels.parse_kernel(cfg["kernel"], N=N)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    workers = getattr(args, "workers", None) or cfg.get("workers", 1)
    rows = blasso.recovery_experiment(
        k, cfg["a0"], cfg["z0"], t_list, c_lam=cfg["lambda_rule"]["c"],
        rho=cfg.get("noise_rule", {}).get("rho", 0.0), trials=trials, seed=seed,
        solver=cfg.get("solver"), workers=workers)
    return rows, seed


def cmd_sweep(args, out: Path):
    cfg = load_config(args.config)
    trials = args.trials or cfg.get("trials", 1)
    rows, seed = _experiment(args, cfg, cfg["t_list"], trials)
    path = out / "sweep.csv"
    path.write_text(blasso.rows_to_csv(rows))
    files = [path]
    summary = _summarize(rows, len(cfg["z0"]))
    spath = out / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    files.append(spath)
    return files, {**cfg, "trials": trials, "seed": seed}, seed


def cmd_recover(args, out: Path):
    cfg = load_config(args.config)
    t_list = [args.t] if args.t is not None else cfg["t_list"]
    trials = args.trials or 1
    rows, seed = _experiment(args, cfg, t_list, trials)
    path = out / "recover.csv"
    path.write_text(blasso.rows_to_csv(rows))
    return [path], {**cfg, "t_list": t_list, "trials": trials, "seed": seed}, seed


def _summarize(rows, N: int) -> dict:
    by_t: dict[float, list] = {}
    for r in rows:
        by_t.setdefault(r.t, []).append(r)
    out = {}
    for t, rs in sorted(by_t.items(), reverse=True):
        finite = [r.normalized_err for r in rs if math.isfinite(r.normalized_err)]
        out[f"{t:g}"] = {
            "cells": len(rs),
            "exact_count_fraction": sum(r.spike_count == N for r in rs) / len(rs),
            "converged_fraction": sum(r.converged for r in rs) / len(rs),
            "max_dual_sup": max((r.dual_sup for r in rs if math.isfinite(r.dual_sup)),
                                default=math.nan),
            "max_normalized_err": max(finite, default=math.inf),
        }
    return out


def cmd_selftest(args, out: Path):
    force = set(args.force_fail or [])
    unknown = force - set(selftest.SUITES)
    if unknown:
        raise UsageError(f"unknown suite(s): {sorted(unknown)}")
    results = selftest.run(force)
    lines = []
    for name, ok, detail in results:
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        print(line)
        lines.append(line)
    path = out / "selftest.txt"
    path.write_text("\n".join(lines) + "\n")
    failed = [n for n, ok, _ in results if not ok]
    if failed:
        print(f"failed suites: {', '.join(failed)}", file=sys.stderr)
        return [path], {"force_fail": sorted(force)}, None, EXIT_INTERNAL
    return [path], {"force_fail": sorted(force)}, None


COMMANDS = {
    "etaw": cmd_etaw, "etav": cmd_etav, "converge": cmd_converge, "gram": cmd_gram,
    "nondegen": cmd_nondegen, "recover": cmd_recover, "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spikeres", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"spikeres {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, default_out):
        sp.add_argument("--out", default=default_out, help="output directory")

    def xgrid(sp):
        sp.add_argument("--lo", type=float)
        sp.add_argument("--hi", type=float)
        sp.add_argument("--step", type=float)

    sp = sub.add_parser("etaw", help="limit precertificate curves")
    sp.add_argument("--kernel", required=True)
    sp.add_argument("--n", type=_positive_int, nargs="+", required=True,
                    help="spike counts")
    xgrid(sp)
    common(sp, "out-etaw")

    sp = sub.add_parser("etav", help="vanishing precertificate curves")
    sp.add_argument("--kernel", required=True)
    sp.add_argument("--z", type=_float_list, required=True)
    sp.add_argument("--t", type=_float_list, required=True)
    xgrid(sp)
    common(sp, "out-etav")

    sp = sub.add_parser("converge", help="sup-norm gaps to the limit")
    sp.add_argument("--kernel", required=True)
    sp.add_argument("--z", type=_float_list, required=True)
    sp.add_argument("--t", type=_float_list, required=True)
    sp.add_argument("--max-order", type=int, default=0)
    common(sp, "out-converge")

    sp = sub.add_parser("gram", help="Gram matrix, checkerboard and injectivity report")
    sp.add_argument("--kernel", required=True)
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--positions", type=_float_list)
    common(sp, "out-gram")

    sp = sub.add_parser("nondegen", help="non-degeneracy verdict")
    sp.add_argument("--kernel", required=True)
    sp.add_argument("--n", type=_positive_int, required=True)
    sp.add_argument("--t", type=float, help="check the vanishing precertificate at scale t")
    sp.add_argument("--z", type=_float_list)
    sp.add_argument("--step", type=float)
    common(sp, "out-nondegen")

    for name, helptext in (("recover", "single recovery per t"),
                           ("sweep", "full recovery table")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True)
        sp.add_argument("--trials", type=_positive_int)
        sp.add_argument("--seed", type=int)
        if name == "recover":
            sp.add_argument("--t", type=float)
        else:
            sp.add_argument("--workers", type=_positive_int)
        common(sp, f"out-{name}")

    sp = sub.add_parser("selftest", help="run invariant suites")
    sp.add_argument("--force-fail", nargs="*", metavar="SUITE",
                    help="debug: force the named suites to fail")
    common(sp, "out-selftest")

    sp = sub.add_parser("replay", help="re-run a command from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", help="output directory (default: the manifest's)")
    return p


def _run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        try:
            man = json.loads(Path(args.manifest).read_text())
            old = list(man["argv"])
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"cannot read manifest {args.manifest}: {exc}")
        target = args.out or str(Path(args.manifest).parent)
        if "--out" in old:
            i = old.index("--out")
            old[i + 1] = target
        else:
            old += ["--out", target]
        return _run(old)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = COMMANDS[args.command](args, out)
    files, config, seed = res[:3]
    code = res[3] if len(res) > 3 else EXIT_OK
    argv_rec = list(argv)
    if "--out" not in argv_rec:
        argv_rec += ["--out", str(out)]
    write_manifest(out, args.command, argv_rec, config, files, seed)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"spikeres: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"spikeres: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"spikeres: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ValueError as exc:
        print(f"spikeres: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"spikeres: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
