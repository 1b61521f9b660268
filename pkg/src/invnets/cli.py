"""Command-line entry point: ``invnets <subcommand> [--config FILE] [flags]``.

Parameters resolve as defaults, then the ``key = value`` config file, then
command-line flags. Each run writes ``<out>.csv`` and ``<out>.json``; the
only run-dependent content is the timestamp on the CSV's first line.

Exit status: 0 when every check passes, 2 when a check fails, 1 on input
errors.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import __version__
from . import experiments as ex


class InputError(Exception):
    """Bad flags, config files or parameter values; reported with exit status 1."""


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValueError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise ValueError("empty list")
    return vals


def _str_list(text: str) -> list[str]:
    vals = [t.strip() for t in text.split(",") if t.strip()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "default") else int(text)


@dataclass(frozen=True)
class Param:
    name: str
    parse: Callable[[str], object]
    default: object
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


SEED = Param("seed", int, 0, "master seed")

SUBCOMMANDS: dict[str, tuple[Callable, list[Param], str]] = {
    "invariance-suite": (
        ex.invariance_suite,
        [Param("d", int, 4), Param("samples", int, 1000), Param("actions", int, 10, "sampled group elements per kind"),
         Param("N", int, 2, "radial intervals"), Param("c2", _float, 1.0), SEED],
        "group-axiom round trips, radial invariance defects and closure-bound checks",
    ),
    "lfinite": (
        ex.lfinite,
        [Param("activations", _str_list, ["sigmoid", "tanh", "relu", "softplus", "identity", "gaussian"]),
         Param("l", int, 1, "derivative order"), Param("half_range", _float, 20.0), Param("grid", int, 20000), SEED],
        "numerical l-finiteness test of activations",
    ),
    "gap-bound": (
        ex.gap_bound,
        [Param("d", int, 4), Param("c2", _float, 1.0), Param("samples", int, 100000), Param("N", _opt_int, None, "intervals (default: growth rule)"),
         Param("mode", str, "tent_corrected"), SEED],
        "Monte-Carlo weighted L2 gap between radial target and Lipschitz surrogate",
    ),
    "width-sweep": (
        lambda **kw: ex.run_width_sweep(**kw)[0],
        [Param("arch", str, "cvnn", "cvnn, fcn or cnn"), Param("d", int, 4), Param("widths", _int_list, [8, 16, 32, 64, 128, 256]),
         Param("seeds", int, 5, "number of training seeds"), Param("N", int, 2), Param("c2", _float, 1.0),
         Param("target", str, "surrogate", "surrogate or indicator"), Param("epochs", int, 1000), Param("lr", _float, 0.01),
         Param("n_train", int, 2000), Param("n_test", int, 4000), Param("max_slope", _float, -0.5), SEED],
        "test MSE against width on the radial target",
    ),
    "cnn-shift": (
        ex.cnn_shift,
        [Param("d", int, 16), Param("l", int, 4, "filter length"), Param("budgets", _int_list, [2, 4, 8, 16], "FCN widths; CNN matched by params"),
         Param("seeds", int, 5), Param("N", int, 2), Param("c2", _float, 1.0), Param("epochs", int, 300), Param("lr", _float, 0.01),
         Param("n_train", int, 2000), Param("n_test", int, 4000), Param("activation", str, "relu"), SEED],
        "exact shift invariance of circular CNN and CNN vs FCN on the translation target",
    ),
    "bnn-demo": (
        ex.bnn_demo,
        [Param("d", int, 4), Param("width", int, 4), Param("depth", int, 2), Param("n", int, 50, "data points"), Param("T", int, 30),
         Param("mc_budget", int, 64), Param("burn_in", int, 3), SEED],
        "layerwise Gaussian iteration and its geometric convergence rate",
    ),
    "signal-bench": (
        ex.signal_bench,
        [Param("n", int, 10, "sources"), Param("m", int, 20, "doublets"), Param("snr", _float, 10.0, "dB; inf for noiseless"),
         Param("trials", int, 20), Param("models", _str_list, ["esprit_predictor", "music_predictor", "fcn:150", "cvnn:150", "cvnn:50"]),
         Param("T", int, 512, "snapshots"), Param("horizon", int, 1), Param("rho", _float, 0.95, "source AR(1) modulus"), SEED],
        "one-step forecasting benchmark of subspace and neural predictors",
    ),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="invnets", description="Invariant-function experiments.")
    parser.add_argument("--version", action="version", version=f"invnets {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    for name, (_, params, help_text) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="key = value file; flags override it")
        p.add_argument("--out", type=Path, default=None, help=f"output prefix (default ./{name})")
        for prm in params:
            default = prm.default if not isinstance(prm.default, list) else ",".join(map(str, prm.default))
            p.add_argument(prm.flag, dest=prm.name, default=argparse.SUPPRESS, metavar="VALUE",
                           help=f"{prm.help} (default {default})".strip())
    return parser


def read_config(path: Path, params: list[Param]) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Errors carry ``file:line``."""
    known = {p.name: p for p in params}
    aliases = {p.name.replace("_", "-"): p.name for p in params}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = aliases.get(key, key)
        if key not in known:
            raise InputError(f"{path}:{lineno}: unknown key {key!r}; known keys: {', '.join(sorted(known))}")
        if key in out:
            raise InputError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = _convert(known[key], value, f"{path}:{lineno}")
    return out


def _convert(prm: Param, value: str, where: str):
    try:
        return prm.parse(value)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: field {prm.name!r}: invalid value {value!r} ({exc})") from None


def resolve(command: str, ns: argparse.Namespace) -> dict:
    _, params, _ = SUBCOMMANDS[command]
    resolved = {p.name: p.default for p in params}
    if ns.config is not None:
        resolved.update(read_config(ns.config, params))
    for p in params:
        if hasattr(ns, p.name):
            resolved[p.name] = _convert(p, getattr(ns, p.name), f"flag {p.flag}")
    return resolved


def write_report(report: ex.Report, prefix: Path, command: str) -> tuple[Path, Path]:
    prefix.parent.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    csv_path = prefix.with_name(prefix.name + ".csv")
    json_path = prefix.with_name(prefix.name + ".json")
    header = f"# invnets {__version__} {command} generated {stamp}\n"
    csv_path.write_text(header + report.csv_body(), encoding="utf-8")
    json_path.write_text(report.json_body(), encoding="utf-8")
    return csv_path, json_path


def run(argv: list[str] | None = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        if ns.command is None:
            raise InputError("invnets: a subcommand is required; see --help")
        kwargs = resolve(ns.command, ns)
        fn = SUBCOMMANDS[ns.command][0]
        try:
            report = fn(**kwargs)
        except (ValueError, KeyError) as exc:
            raise InputError(f"{ns.command}: {exc}") from None
        prefix = ns.out if ns.out is not None else Path(ns.command)
        csv_path, json_path = write_report(report, prefix, ns.command)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for c in report.checks:
        print(c.line())
    print(f"wrote {csv_path} and {json_path}")
    return 0 if report.passed else 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
