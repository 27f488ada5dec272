"""``loram`` command line: init, spectrum, simulate, verify, plot.

Exit codes: 0 success, 1 a verifier check failed, 2 usage/I-O/format error,
3 degenerate input, 4 non-finite training loss.  A failed run writes nothing
but ``<out>.partial``, a one-line note of what went wrong.
"""
from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

from . import __version__, harness, npyio, plot
from .init import (
    DegenerateInputError,
    InitSpec,
    init_loram_tracking,
    init_pissa,
    initialize,
    save_init,
)
from .linalg import LinalgError, SvdError
from .magnitude import spectral_report

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DEGENERATE, EXIT_DIVERGED = 0, 1, 2, 3, 4

SUITES = ("prop1", "prop2", "dst", "bound", "ga")
SUITE_CLAIMS = {
    "prop1": "scaling equivalence of (alpha, init scale, learning rate) under SGD and Adam",
    "prop2": "expected magnitude dynamics of A, B and W_lora under Gaussian gradients",
    "dst": "DST-I basis is orthonormal with zero mean and nu = 1/dim",
    "bound": "representation-error lower bound for magnitude-limited adapters",
    "ga": "gradient-aligned init maximizes both low-rank gradient magnitudes",
}


class CliError(Exception):
    def __init__(self, msg, code=EXIT_USAGE):
        super().__init__(msg)
        self.code = code


def _write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _manifest(args, out_path, extra=None) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_key")}
    body = {"version": __version__, "command": args.command, "config": cfg}
    if extra:
        body.update(extra)
    _write_text(out_path, _dump_json(body))


def _load_weights(path):
    try:
        return npyio.read_npy(path)
    except FileNotFoundError:
        raise CliError(f"weights file not found: {path}") from None
    except (OSError, npyio.NpyFormatError) as e:
        raise CliError(f"cannot read weights {path}: {e}") from None


def _gain_mode(text):
    if text in ("log", "exact_spectral"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"gain mode must be log, exact_spectral or a number, got {text!r}")


def cmd_init(args):
    w = _load_weights(args.weights)
    n, m = w.shape
    if args.scheme == "lora_ga":
        raise CliError("scheme lora_ga needs a gradient matrix, not a weight; use the library function")
    if args.rank < 1 or args.rank > min(n, m):
        raise CliError(f"rank {args.rank} exceeds min(n, m) = {min(n, m)} for weights of shape {n}x{m}"
                       if args.rank > 0 else f"rank must be positive, got {args.rank}")
    spec = InitSpec(scheme=args.scheme, rank=args.rank, alpha=args.alpha, gain_mode=args.gain_mode,
                    basis=args.basis, seed=args.seed)
    extra = {}
    if args.scheme == "loram_tracking":
        ref = init_pissa(w, InitSpec(scheme="pissa", rank=args.rank, alpha=args.alpha))
        res = init_loram_tracking(w, spec, ref.A, ref.B)
        extra["tracking_reference"] = "pissa"
    else:
        res = initialize(w, spec)
    parent = os.path.dirname(os.path.abspath(args.out_dir))
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".tmp-init-", dir=parent)
    try:
        save_init(res, tmp, extra)
        _manifest(args, os.path.join(tmp, "manifest.json"))
        os.makedirs(args.out_dir, exist_ok=True)
        for name in sorted(os.listdir(tmp)):
            os.replace(os.path.join(tmp, name), os.path.join(args.out_dir, name))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return EXIT_OK


def cmd_spectrum(args):
    w = _load_weights(args.weights)
    n, m = w.shape
    if not 1 <= args.max_rank <= min(n, m):
        raise CliError(f"--max-rank {args.max_rank} outside [1, min(n, m) = {min(n, m)}]")
    try:
        rep = spectral_report(w, range(1, args.max_rank + 1))
    except SvdError as e:
        raise CliError(f"SVD failed: {e}") from None
    except ValueError as e:
        raise CliError(str(e), EXIT_DEGENERATE) from None
    _write_text(args.out, rep.to_csv())
    _manifest(args, args.out + ".manifest.json", {"nu_w": rep.nu_w, "effective_rank": rep.effective_rank})
    print(f"nu_w={rep.nu_w!r}")
    print(f"effective_rank={rep.effective_rank}")
    return EXIT_OK


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise CliError(f"{where} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise CliError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise CliError(f"invalid {where}: {e}") from None


_INT_FIELDS = {"depth", "width", "rank", "batch_size", "steps", "seed"}
_FLOAT_FIELDS = {"eta", "eta_B", "adam_epsilon"}


def load_config(path):
    """Parse a simulate config: MlpConfig fields, ``init`` as an InitSpec
    object and an optional ``task`` object for :class:`SyntheticTask`."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config not found: {path}") from None
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read config {path}: {e}") from None
    if not isinstance(raw, dict):
        raise CliError("config must be a JSON object")
    raw = dict(raw)
    task = _build(harness.SyntheticTask, raw.pop("task", {}), "task")
    if "init" in raw:
        init = dict(raw["init"]) if isinstance(raw["init"], dict) else raw["init"]
        if isinstance(init, dict):
            init.setdefault("rank", raw.get("rank", 25))
        raw["init"] = _build(InitSpec, init, "init")
    for key, val in raw.items():
        if key in _INT_FIELDS and (isinstance(val, bool) or not isinstance(val, int)):
            raise CliError(f"config field {key!r} must be an integer, got {val!r}")
        if key in _FLOAT_FIELDS and val is not None and (isinstance(val, bool) or not isinstance(val, (int, float))):
            raise CliError(f"config field {key!r} must be a number, got {val!r}")
    cfg = _build(harness.MlpConfig, raw, "config")
    return cfg, task


def cmd_simulate(args):
    cfg, task = load_config(args.config)
    try:
        log = harness.run_training(cfg, task)
    except harness.TrainingDiverged as e:
        raise CliError(str(e), EXIT_DIVERGED) from None
    except DegenerateInputError as e:
        raise CliError(str(e), EXIT_DEGENERATE) from None
    _write_text(args.out, log.to_csv())
    _manifest(args, args.out + ".manifest.json", {
        "resolved": {"config": cfg.to_dict(), "task": vars(task)}, "config_hash": log.config_hash,
    })
    return EXIT_OK


def _thread_count():
    env = os.environ.get("LORAM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"LORAM_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def run_suite(name, seed):
    if name == "prop1":
        rep = harness.verify_prop1(seed=seed)
    elif name == "prop2":
        rep = harness.verify_prop2(seed=seed)
    elif name == "dst":
        rep = harness.verify_dst()
    elif name == "bound":
        rep = harness.verify_lower_bound(seed=seed, instances=20)
    else:
        rep = harness.verify_lora_ga_maximality(seed=seed, instances=20, trials=1000)
    rep["claim"] = SUITE_CLAIMS[name]
    return rep


def cmd_verify(args):
    names = SUITES if args.suite == "all" else (args.suite,)
    workers = min(_thread_count(), len(names))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(lambda s: run_suite(s, args.seed), names))
    body = {"seed": args.seed, "suites": reports, "pass": all(r["pass"] for r in reports)}
    _write_text(args.report, _dump_json(body))
    _manifest(args, args.report + ".manifest.json")
    for r in reports:
        print(f"{r['suite']}: {'PASS' if r['pass'] else 'FAIL'}")
    return EXIT_OK if body["pass"] else EXIT_FAIL


def cmd_plot(args):
    ys = [c for c in args.y.split(",") if c]
    if not ys:
        raise CliError("--y needs at least one column")
    try:
        xs, series = plot.read_columns(args.input, args.x, ys)
        if args.logy:
            plot.check_log(args.input, args.x, ys)
    except FileNotFoundError:
        raise CliError(f"input not found: {args.input}") from None
    except plot.PlotError as e:
        raise CliError(str(e)) from None
    _write_text(args.out, plot.render_svg(xs, series, args.x, args.logy))
    _manifest(args, args.out + ".manifest.json")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="loram", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"loram {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="initialize an adapter from a weight matrix", allow_abbrev=False)
    s.add_argument("--weights", required=True)
    s.add_argument("--rank", type=int, required=True)
    s.add_argument("--scheme", default="loram",
                   choices=("noise_zeros", "pissa", "milora", "olora", "loram", "loram_tracking", "lora_ga"))
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--gain-mode", type=_gain_mode, default="log")
    s.add_argument("--basis", default="dst", choices=("dst", "random_orthogonal", "gaussian"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_init, out_key="out_dir")

    s = sub.add_parser("spectrum", help="rho, Q and log gain by rank", allow_abbrev=False)
    s.add_argument("--weights", required=True)
    s.add_argument("--max-rank", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum, out_key="out")

    s = sub.add_parser("simulate", help="train the MLP and log magnitudes", allow_abbrev=False)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate, out_key="out")

    s = sub.add_parser("verify", help="run verifier suites", allow_abbrev=False)
    s.add_argument("--suite", required=True, choices=(*SUITES, "all"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_verify, out_key="report")

    s = sub.add_parser("plot", help="render CSV columns as an SVG line chart", allow_abbrev=False)
    s.add_argument("--input", required=True)
    s.add_argument("--x", required=True)
    s.add_argument("--y", required=True)
    s.add_argument("--logy", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot, out_key="out")
    return p


def _mark_partial(args, msg, code):
    target = getattr(args, args.out_key, None)
    if not target:
        return
    try:
        _write_text(os.path.normpath(target) + ".partial", f"exit {code}: {msg}\n")
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        msg, code = str(e), e.code
    except DegenerateInputError as e:
        msg, code = str(e), EXIT_DEGENERATE
    except (LinalgError, ValueError, OSError) as e:
        msg, code = str(e), EXIT_USAGE
    print(f"loram {args.command}: error: {msg}", file=sys.stderr)
    _mark_partial(args, msg, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
