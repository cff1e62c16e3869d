"""Command-line front door: ``magpie-sim run | plan | dump | validate``.

Exit codes: 0 success, 2 episode failure (or unsolvable plan), 1 usage or
configuration error. Diagnostics go to stderr; machine output to files or
stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import btree, executive, perception, planner
from .gripper import write_force_trace
from .pddl import PddlError, parse_domain, parse_problem
from .scenario import ConfigError, Scenario, load_scenario
from .world import execute_primitive, MoveTo, observation_poses

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2

log = logging.getLogger("magpie_sim")


def _setup_logging() -> None:
    level = os.environ.get("MAGPIE_SIM_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _err(msg: str) -> None:
    print(f"magpie-sim: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = scn.seed if args.seed is None else args.seed
    episodes = args.batch if args.batch is not None else scn.batch
    if episodes is None:
        events: list[dict] = []
        report = executive.run_episode(scn.episode_config(seed), events)
        reports, summary = [report], None
        all_events = [{"seed": seed, **e} for e in events]
    else:
        cfg = scn.episode_config(seed)
        by_seed: dict[int, list[dict]] = {}
        reports, summary = executive.run_batch(cfg, episodes, jobs=args.jobs, events=by_seed)
        all_events = [{"seed": s, **e} for s in sorted(by_seed) for e in by_seed[s]]
    with open(out / "reports.jsonl", "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
    if summary is not None:
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    with open(out / "events.jsonl", "w") as fh:
        for e in all_events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    for r in reports:
        if not r.success:
            log.warning("seed %d failed: %s", r.seed, r.failure_reason)
    return EXIT_OK if all(r.success for r in reports) else EXIT_FAILURE


def cmd_plan(args) -> int:
    current = args.domain
    try:
        domain = parse_domain(Path(current).read_text())
        current = args.problem
        problem = parse_problem(Path(current).read_text(), domain)
    except OSError as exc:
        _err(f"{exc.filename}: {exc.strerror}")
        return EXIT_CONFIG
    except PddlError as exc:
        _err(f"{current}:{exc}" if exc.line is not None else f"{current}: {exc}")
        return EXIT_CONFIG
    task = planner.ground(domain, problem)
    try:
        plan = planner.search(task, args.strategy, args.heuristic, args.max_expansions)
    except planner.ResourceLimit as exc:
        _err(str(exc))
        return EXIT_FAILURE
    if plan is None:
        print("unsolvable")
        return EXIT_FAILURE
    sys.stdout.write(plan.dump())
    return EXIT_OK


def _initial_plan(scn: Scenario, seed: int):
    cfg = scn.episode_config(seed)
    scene = cfg.scene.copy()
    percepts = executive.perceive(scene, cfg.noise, seed)
    problem = executive.build_problem(percepts, cfg.goal)
    task = planner.ground(executive.blocksworld_domain(), problem)
    plan = planner.search(task, cfg.strategy, cfg.heuristic, cfg.max_expansions)
    return task, plan


def cmd_dump(args) -> int:
    scn = load_scenario(args.scenario)
    seed = scn.seed if args.seed is None else args.seed
    if args.bt:
        task, plan = _initial_plan(scn, seed)
        if plan is None:
            _err("initial problem is unsolvable")
            return EXIT_FAILURE
        path = Path(args.out or "bt.dot")
        path.write_text(btree.to_dot(btree.compile_plan(plan, task)))
    elif args.cloud:
        scene = scn.scene(seed)
        poses = observation_poses(scene.config)
        tcp, rot = poses[min(args.view, len(poses) - 1)]
        execute_primitive(scene, MoveTo(tcp, rot))
        cloud = perception.render(scene, scene.camera(), scene.config.density, seed)
        path = Path(args.out or "cloud.ply")
        perception.write_ply(cloud, path)
    else:
        g = scn.grasp
        scene = scn.scene(seed)
        first = sorted(scene.objects.values(), key=lambda o: o.name)
        width = float(g.get("width", first[0].size[0] if first else 30.0))
        model = scene.model
        from .gripper import GripperState
        half = model.linkage.max_aperture / 2
        out = model.close_on_object(GripperState(half, half), width, float(g.get("offset", 0.0)),
                                    float(g.get("force_limit", 5.0)),
                                    hold_force=float(g.get("hold_force", float("inf"))), release=True)
        path = Path(args.out or "force_trace.csv")
        write_force_trace(out.trace, path)
        print(json.dumps({"phase_times": out.phase_times, "first": out.first,
                          "contact_aperture_left": out.contact_aperture_left,
                          "contact_aperture_right": out.contact_aperture_right}, sort_keys=True))
    print(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    scn = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({len(scn.raw['objects'])} objects, {len(scn.goal)} goal atoms)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magpie-sim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an episode or a batch from a scenario file")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--batch", type=int, metavar="N", help="run N episodes with seeds seed..seed+N-1")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--out", default="magpie-out", help="directory for reports.jsonl / events.jsonl")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("plan", help="plan a PDDL domain/problem pair")
    p.add_argument("domain")
    p.add_argument("problem")
    p.add_argument("--strategy", choices=[s.value for s in planner.Strategy], default="gbfs")
    p.add_argument("--heuristic", choices=[h.value for h in planner.Heuristic], default="hadd")
    p.add_argument("--max-expansions", type=int, default=planner.DEFAULT_EXPANSION_CAP)
    p.set_defaults(func=cmd_plan)

    d = sub.add_parser("dump", help="export a behavior tree, point cloud or force trace")
    d.add_argument("scenario")
    what = d.add_mutually_exclusive_group(required=True)
    what.add_argument("--bt", action="store_true", help="DOT of the first plan's behavior tree")
    what.add_argument("--cloud", action="store_true", help="PLY of the first observation view")
    what.add_argument("--force-trace", action="store_true", help="CSV of the scenario's grasp")
    d.add_argument("--view", type=int, default=0)
    d.add_argument("--seed", type=int)
    d.add_argument("--out")
    d.set_defaults(func=cmd_dump)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        _err("--jobs must be at least 1")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
