"""Command line: ``tracekit generate|attack|decode|experiment|bench``.

Exit status is 0 on success, 2 for configuration or parameter errors and 3
for malformed input files. Paths given as ``-`` mean stdin or stdout, so the
first three subcommands chain with pipes::

    tracekit generate --config run.ini --out code.trdc
    tracekit attack --config run.ini --code code.trdc | tracekit decode --config run.ini --code code.trdc
"""
from __future__ import annotations

import argparse
import contextlib
import sys

from . import infotheory
from ._rng import derive_key
from .codegen import generate, read_code, write_code
from .collusion import forge, forge_soft, read_trace, write_trace
from .config import ConfigError, ExperimentConfig, load_config
from .decoder import detect, detect_soft
from .errors import FormatError, ParameterError
from .experiment import choose_colluders, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT = 0, 2, 3


@contextlib.contextmanager
def _open(path: str | None, mode: str):
    if path in (None, "-"):
        stream = sys.stdin if "r" in mode else sys.stdout
        yield stream.buffer if "b" in mode else stream
    else:
        try:
            fh = open(path, mode)
        except OSError as exc:
            if "r" in mode:
                raise FormatError(f"cannot open {path!r}: {exc.strerror}") from None
            raise ConfigError(f"cannot write {path!r}: {exc.strerror}") from None
        with fh:
            yield fh


def _path(args, name: str, cfg: ExperimentConfig, default=None):
    given = getattr(args, name, None)
    return given if given is not None else cfg.io.get(name, default)


def cmd_generate(args, cfg: ExperimentConfig) -> int:
    code, secret = generate(cfg.code)
    with _open(args.out or cfg.io.get("code"), "wb") as fh:
        write_code(fh, code, secret, strip_secret=args.strip_secret)
    return EXIT_OK


def cmd_attack(args, cfg: ExperimentConfig) -> int:
    with _open(_path(args, "code", cfg), "rb") as fh:
        code, _ = read_code(fh, require_secret=False, dist=cfg.code.dist)
    colluders = choose_colluders(code.n, cfg.attack.c, cfg.seed)
    key = derive_key(cfg.seed, "attack")
    if cfg.attack.is_soft:
        trace = forge_soft(code, colluders, cfg.attack.soft_channel(), key)
    else:
        trace = forge(code, colluders, cfg.attack.hard_channel(), key)
    with _open(args.out or cfg.io.get("trace"), "wb") as fh:
        write_trace(fh, trace)
    return EXIT_OK


def cmd_decode(args, cfg: ExperimentConfig) -> int:
    code_path, trace_path = _path(args, "code", cfg), _path(args, "trace", cfg)
    if code_path in (None, "-") and trace_path in (None, "-"):
        raise ConfigError("decode reads two files; give --code or --trace (at most one may be stdin)")
    with _open(code_path, "rb") as fh:
        code, secret = read_code(fh, require_secret=True, dist=cfg.code.dist)
    with _open(trace_path, "rb") as fh:
        trace = read_trace(fh)
    if trace.m != code.m:
        raise FormatError(f"trace length {trace.m} does not match code length {code.m}")
    if trace.soft is not None:
        report = detect_soft(trace.soft, code, secret, cfg.decoder, "hard" if args.hard else "soft")
    else:
        report = detect(trace.hard, code, secret, cfg.decoder)
    with _open(args.out or cfg.io.get("report"), "w") as fh:
        fh.write(report.to_text())
    return EXIT_OK


def cmd_experiment(args, cfg: ExperimentConfig) -> int:
    out = args.out or cfg.out
    with _open(out, "w") as fh:
        run_experiment(cfg, fh, progress=sys.stderr if args.progress else None)
    return EXIT_OK


def cmd_bench(args, cfg: ExperimentConfig | None) -> int:
    from .bench import report, run_bench
    text = report(run_bench(m=args.m))
    with _open(args.out, "w") as fh:
        fh.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tracekit", description="Tardos fingerprinting: generate, attack, decode")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=None, help="output path ('-' for stdout)")
        return p

    g = common(sub.add_parser("generate", help="write a code file"))
    g.add_argument("--strip-secret", action="store_true", help="omit the secret bias vector")
    a = common(sub.add_parser("attack", help="forge a pirated trace from a code file"))
    a.add_argument("--code", default=None, help="code file ('-' for stdin)")
    d = common(sub.add_parser("decode", help="accuse users from a code file and a trace"))
    d.add_argument("--code", default=None)
    d.add_argument("--trace", default=None)
    d.add_argument("--hard", action="store_true", help="threshold a soft trace and decode it as hard")
    e = common(sub.add_parser("experiment", help="batch simulation, CSV output"))
    e.add_argument("--progress", action="store_true")
    b = common(sub.add_parser("bench", help="scoring throughput"), config_required=False)
    b.add_argument("--m", type=int, default=1024)
    return ap


COMMANDS = {"generate": cmd_generate, "attack": cmd_attack, "decode": cmd_decode,
            "experiment": cmd_experiment, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed) if args.config else None
        if cfg is not None and cfg.io.get("worst_cache"):
            try:
                infotheory.read_worst_cache(cfg.io["worst_cache"])
            except OSError as exc:
                raise ConfigError(f"cannot read worst-channel cache: {exc.strerror}") from None
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"tracekit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"tracekit: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
