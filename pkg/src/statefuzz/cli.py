"""Command-line front end.

Every subcommand ends by printing one ``RESULT key=value ...`` line so that
scripts can parse the outcome without reading the rest of the output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .calibration import CalibrationConfig
from .engine import CampaignConfig, CampaignError, Engine, dedup_crash, run_campaign
from .inputs import SaflFormatError, load_seed_dir, read_input, write_input
from .ipsm import Ipsm, parse_dot
from .mutation import Dictionary
from .mvptree import StateRegistry
from .targets import REGISTRY, UnsupportedMode, get_target, parse_hook_env, register_custom_io_hooks

HOOK_ENV = "STATEFUZZ_NET_HOOKS"
EXIT_OK, EXIT_ERROR, EXIT_CRASH = 0, 1, 2

log = logging.getLogger("statefuzz")


def _summary(status: str, **fields) -> None:
    parts = [f"status={status}"] + [f"{k}={v}" for k, v in fields.items()]
    print("RESULT " + " ".join(parts), flush=True)


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    _summary("error", message=json.dumps(msg))
    return EXIT_ERROR


def _load_spec(name: str):
    spec = get_target(name)
    env = os.environ.get(HOOK_ENV, "").strip()
    if env:
        send, recv = parse_hook_env(env)
        spec = register_custom_io_hooks(spec, send, recv)
    return spec


def cmd_fuzz(args) -> int:
    try:
        spec = _load_spec(args.target)
        seeds = load_seed_dir(args.seeds) if args.seeds else [s.copy() for s in spec.seeds]
        out = Path(args.out)
        if out.exists() and any(out.iterdir()):
            if not args.resume:
                raise CampaignError(f"output directory {out} is not empty (use --resume)")
            queue = out / "queue"
            if queue.is_dir():
                seeds = load_seed_dir(queue) or seeds
        if not seeds:
            raise CampaignError("no .safl seed files found")
        dictionary = Dictionary.load(args.dict).tokens if args.dict else None
        if args.execs is None and args.duration is None:
            raise CampaignError("give --execs or --duration")
        cfg = CampaignConfig(
            mode=args.mode, execs=args.execs, duration=args.duration, epsilon=args.epsilon,
            seed=args.seed, channel=args.channel, dictionary=dictionary,
            reply_timeout=args.reply_timeout, hang_timeout=args.hang_timeout,
            deterministic=args.deterministic, havoc_rounds=args.havoc_rounds,
            trim=args.trim, stop_on_crash=args.stop_on_crash, calibration=CalibrationConfig(),
            stats_interval=args.stats_interval, stats_every_execs=args.stats_every, out_dir=out,
        )
        out.mkdir(parents=True, exist_ok=True)
        report, _ = run_campaign(spec, seeds, cfg)
    except (CampaignError, UnsupportedMode, ValueError, FileNotFoundError, SaflFormatError) as e:
        return _fail(str(e))
    status = "crash" if report.crashes_unique else "ok"
    _summary(status, target=report.target, mode=report.mode, execs=report.execs, corpus=report.corpus,
             states=report.states, transitions=report.transitions, crashes=report.crashes_unique,
             epsilon=report.epsilon, execs_per_sec=f"{report.execs_per_sec:.1f}")
    return EXIT_CRASH if report.crashes_unique else EXIT_OK


def _campaign_context(campaign: Path | None) -> tuple[StateRegistry | None, int | None]:
    if campaign is None:
        return None, None
    registry = StateRegistry.from_json((campaign / "registry.json").read_text())
    eps = json.loads((campaign / "report.json").read_text()).get("epsilon")
    return registry, eps


def cmd_replay(args) -> int:
    try:
        spec = _load_spec(args.target)
        inp = read_input(args.input)
        registry, eps = _campaign_context(Path(args.campaign) if args.campaign else None)
        cfg = CampaignConfig(mode=args.mode, execs=0, channel=args.channel,
                             reply_timeout=args.reply_timeout, hang_timeout=args.hang_timeout)
        engine = Engine(spec, [inp], cfg)
    except (SaflFormatError, ValueError, FileNotFoundError, UnsupportedMode) as e:
        return _fail(str(e))
    if registry is not None:
        engine.registry = registry
    if args.epsilon is not None or eps is not None:
        engine.eps.epsilon = args.epsilon if args.epsilon is not None else eps
    v = engine.execute_input(inp, analysis=True, check_new=False, trace=args.trace)
    for i, batch in enumerate(v.replies):
        shown = "<timeout>" if batch is None else " | ".join(r.decode("latin-1").rstrip("\r\n") for r in batch)
        print(f"reply[{i}] {shown}")
    print("states " + " ".join(map(str, v.state_seq or [])))
    if args.trace and v.runtime is not None:
        for ev in v.runtime.events:
            print("event " + " ".join(hex(x) if isinstance(x, int) else str(x) for x in ev))
    fields = dict(verdict=v.outcome, messages=len(inp.messages),
                  states=",".join(map(str, v.state_seq or [])) or "-")
    if v.crash is not None:
        fields["group_key"] = dedup_crash(v.crash.bug_id, v.crash.site)
        fields["site"] = v.crash.site
    _summary(v.outcome, **fields)
    return EXIT_CRASH if v.outcome == "crash" else EXIT_OK


def cmd_ipsm(args) -> int:
    path = Path(args.out) / "ipsm.json"
    if not path.exists():
        return _fail(f"{path} not found; run a campaign first")
    machine = Ipsm.from_dict(json.loads(path.read_text()))
    text = machine.to_dot() if args.format == "dot" else machine.to_json() + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    vertices, edges = parse_dot(machine.to_dot())
    _summary("ok", format=args.format, vertices=len(vertices), edges=len(edges))
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import build_report

    try:
        files = build_report(args.out, args.dest)
    except FileNotFoundError as e:
        return _fail(str(e))
    for f in files:
        print(f)
    _summary("ok", files=len(files), dest=files[0].parent)
    return EXIT_OK


def cmd_seeds(args) -> int:
    try:
        spec = get_target(args.target)
    except ValueError as e:
        return _fail(str(e))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(spec.seeds):
        write_input(out / f"seed_{i:03d}.safl", s)
    _summary("ok", target=spec.name, seeds=len(spec.seeds), dest=out)
    return EXIT_OK


def _add_exec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--channel", default="in-process", choices=["in-process", "tcp"])
    p.add_argument("--reply-timeout", type=float, default=0.05, help="seconds to wait for each reply")
    p.add_argument("--hang-timeout", type=float, default=1.0, help="seconds per session before a hang")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 (exit 2 is reserved for "crash found")."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.exit(_fail(message))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="statefuzz", description="Stateful greybox fuzzer for simulated servers")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    targets = sorted(REGISTRY)

    p = sub.add_parser("fuzz", help="run a campaign")
    p.add_argument("--target", required=True, help="one of: " + ", ".join(targets))
    p.add_argument("--seeds", help="directory of .safl seeds (default: bundled seeds)")
    p.add_argument("--out", required=True)
    p.add_argument("--execs", type=int)
    p.add_argument("--duration", type=float, help="wall-clock budget in seconds")
    p.add_argument("--mode", default="stateful", choices=["stateful", "stateless", "response-code"])
    p.add_argument("--epsilon", type=int, help="override the calibrated threshold")
    p.add_argument("--seed", type=int, default=0, help="rng seed")
    p.add_argument("--dict", help="token dictionary file")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--deterministic", action="store_true", help="run the deterministic stages once per input position")
    p.add_argument("--havoc-rounds", type=int, default=256)
    p.add_argument("--trim", action="store_true", help="trim inputs before saving them")
    p.add_argument("--stop-on-crash", action="store_true")
    p.add_argument("--stats-interval", type=float, default=5.0)
    p.add_argument("--stats-every", type=int, help="emit stats every N executions instead")
    _add_exec_flags(p)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("replay", help="execute one input with state analysis")
    p.add_argument("--target", required=True, help="one of: " + ", ".join(targets))
    p.add_argument("input")
    p.add_argument("--trace", action="store_true", help="print the hook-event log")
    p.add_argument("--campaign", help="campaign directory whose registry and epsilon to reuse")
    p.add_argument("--epsilon", type=int)
    p.add_argument("--mode", default="stateful", choices=["stateful", "response-code"])
    _add_exec_flags(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("ipsm", help="export the inferred state machine")
    p.add_argument("out")
    p.add_argument("--format", default="dot", choices=["dot", "json"])
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_ipsm)

    p = sub.add_parser("report", help="write stats.csv and figures")
    p.add_argument("out")
    p.add_argument("--dest")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("seeds", help="write a target's bundled seeds as .safl files")
    p.add_argument("--target", required=True, help="one of: " + ", ".join(targets))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_seeds)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
