"""``swarmcsp`` command line: analyze, refactor and simulate swarm designs.

Exit codes: 0 clean, 1 error, 2 fault found, 3 nothing to do.
Every flag default can be overridden by an environment variable named
``SWARMCSP_<FLAG>`` (for example ``SWARMCSP_DEPTH=20``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from .analysis import locked, with_k
from .csp import DEFAULT_BUDGET, ExplorationBudgetExceeded
from .lang import SpecSyntaxError, ValidationError, parse, print_spec
from .refactor import NothingToRefactor, refactor_design
from .sim import ProfileIncomplete, ScenarioMissing, SubstrateProfile, run_campaign

EXIT_CLEAN, EXIT_ERROR, EXIT_FAULT, EXIT_NOTHING = 0, 1, 2, 3
ENV_PREFIX = "SWARMCSP_"


class CliError(Exception):
    pass


def _env(name: str, default):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return default
    return type(default)(raw) if default is not None else raw


def corpus_names() -> list[str]:
    return sorted(p.name[:-6] for p in resources.files("swarmcsp.corpus").iterdir()
                  if p.name.endswith(".swarm"))


def read_input(path: str) -> str:
    """A file path, or ``corpus:NAME`` for a bundled design."""
    if path.startswith("corpus:"):
        name = path.split(":", 1)[1]
        if name not in corpus_names():
            raise CliError(f"no bundled design {name!r}; have {', '.join(corpus_names())}")
        return resources.files("swarmcsp.corpus").joinpath(f"{name}.swarm").read_text("utf-8")
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc


def load(args):
    text = read_input(args.input)
    spec = parse(text)
    if getattr(args, "k", None):
        spec = with_k(spec, args.k)
    return spec


def _out_dir(args) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_analyze(args) -> int:
    spec = load(args)
    report = locked(spec, args.depth, budget=args.budget)
    out = _out_dir(args)
    if out is not None:
        (out / "analysis.json").write_text(report.to_json(), encoding="utf-8")
    print(report.to_json() if args.format == "structured" else report.summary(), end="")
    return EXIT_CLEAN if report.clean else EXIT_FAULT


def cmd_refactor(args) -> int:
    spec = load(args)
    report = locked(spec, args.depth, budget=args.budget)
    corrected, queue = refactor_design(spec, report)
    text = print_spec(corrected)
    if args.out:
        target = Path(args.out)
        if target.suffix != ".swarm":
            target.mkdir(parents=True, exist_ok=True)
            target = target / "corrected.swarm"
        else:
            target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
        print(f"corrected design written to {target} (queue order {list(queue.order)})",
              file=sys.stderr)
    if args.format == "structured":
        print(json.dumps({"triggering_events": sorted(report.triggering_events),
                          "queue": list(queue.order), "policy": queue.rotation_policy,
                          "spec": text}, indent=2, sort_keys=True))
    elif not args.out:
        print(text, end="")
    return EXIT_CLEAN


def _seeds(args) -> list[int]:
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    else:
        seeds = list(range(args.seed0, args.seed0 + args.runs))
    if not seeds:
        raise CliError("empty seed list")
    return seeds


def cmd_simulate(args) -> int:
    text = read_input(args.input)
    spec = parse(text)
    if args.k:
        spec = with_k(spec, args.k)
    seeds = _seeds(args)
    names = args.profile or sorted(spec.profiles)
    if not names:
        raise CliError("the design declares no timing profile")
    out = _out_dir(args)
    reports = {}
    for name in names:
        if name not in spec.profiles:
            raise CliError(f"unknown profile {name!r}; have {', '.join(sorted(spec.profiles))}")
        profile = SubstrateProfile.from_spec(spec, name)
        rep = run_campaign(spec, profile, seeds, args.horizon_ms, args.scenario,
                           out=None if out is None else out / "runs", spec_text=print_spec(spec))
        reports[name] = rep
        if out is not None:
            (out / f"campaign-{name}.json").write_text(rep.to_json(), encoding="utf-8")
    if args.format == "structured":
        print(json.dumps({n: r.to_dict() for n, r in reports.items()}, indent=2, sort_keys=True))
    else:
        for rep in reports.values():
            print(rep.table())
    return EXIT_FAULT if any(r.incident_runs for r in reports.values()) else EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmcsp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--input", required=True,
                        help="design file, or corpus:NAME for a bundled one "
                             f"({', '.join(corpus_names())})")
        sp.add_argument("--k", type=int, default=_env("k", 0) or None,
                        help="override the swarm size")
        sp.add_argument("--out", default=_env("out", None), help="output directory")
        sp.add_argument("--format", choices=("human", "structured"),
                        default=_env("format", "human"))

    def search(sp, depth):
        sp.add_argument("--depth", type=int, default=_env("depth", depth))
        sp.add_argument("--budget", type=int, default=_env("budget", DEFAULT_BUDGET))

    a = sub.add_parser("analyze", help="search for illegal meta-states and locks")
    common(a)
    search(a, 12)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("refactor", help="insert consensus blocks for triggering events")
    common(r)
    search(r, 12)
    r.set_defaults(func=cmd_refactor)

    s = sub.add_parser("simulate", help="seeded timed simulation campaign")
    common(s)
    s.add_argument("--profile", action="append",
                   help="timing profile (repeatable; default: every declared profile)")
    s.add_argument("--scenario", default=_env("scenario", None),
                   help="scenario block to use (default: the first declared)")
    s.add_argument("--seeds", default=_env("seeds", None), help="comma-separated seed list")
    s.add_argument("--seed0", type=int, default=_env("seed0", 0),
                   help="first seed when --seeds is not given")
    s.add_argument("--runs", type=int, default=_env("runs", 100), help="number of seeds")
    s.add_argument("--horizon-ms", type=float, default=_env("horizon_ms", 60000.0),
                   help="simulated time per run")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "depth", 1) < 1:
            raise CliError("--depth must be >= 1")
        if getattr(args, "runs", 1) < 1 and not getattr(args, "seeds", None):
            raise CliError("--runs must be >= 1")
        return args.func(args)
    except NothingToRefactor as exc:
        print(f"nothing to refactor: {exc}", file=sys.stderr)
        return EXIT_NOTHING
    except SpecSyntaxError as exc:
        print(f"{args.input}:{exc}", file=sys.stderr)
    except ValidationError as exc:
        for d in exc.diagnostics:
            print(f"{args.input}: {d}", file=sys.stderr)
    except ExplorationBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.partial is not None:
            print(exc.partial.summary(), file=sys.stderr, end="")
    except (CliError, ProfileIncomplete, ScenarioMissing, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
