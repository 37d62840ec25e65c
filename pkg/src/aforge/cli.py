"""``aforge`` command line: one entry point, one subcommand per pipeline stage.

Configuration is layered file < environment (``AFORGE_SEED``) < flags.
Commands given ``--out`` write their artifacts and a ``manifest.json``
into that directory and nowhere else.  Exit codes: 0 ok, 2 configuration
error, 3 evaluation error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .design_space import BASELINES, DIM, BodyGeometry, BoundTable, DesignError, MotorLayout, baseline_layout, decode, \
    mass_inertia, match_inertia_arm_length
from .io import dumps, fmt, load_config, read_json, write_csv, write_json, write_manifest

EXIT_OK, EXIT_CONFIG, EXIT_EVAL = 0, 2, 3

log = logging.getLogger("aforge")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


# -- helpers ------------------------------------------------------------------

def _seed(args, file_cfg: dict | None = None) -> int:
    seed = 0
    if file_cfg and "seed" in file_cfg:
        seed = file_cfg["seed"]
    env = os.environ.get("AFORGE_SEED")
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise CliError(f"AFORGE_SEED must be an integer, got {env!r}") from None
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    return int(seed)


def _emit(args, name: str, obj) -> None:
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / name, obj)
    else:
        sys.stdout.write(dumps(obj))


def _manifest(args, command: str, config: dict, seed) -> None:
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_manifest(args.out, command, config, seed)


def _parse_xi(text: str) -> np.ndarray:
    try:
        xi = np.array([float(v) for v in text.replace(" ", "").split(",") if v != ""])
    except ValueError:
        raise CliError(f"malformed design vector '{text}'") from None
    if xi.shape != (DIM,):
        raise CliError(f"design vector needs {DIM} comma-separated values, got {xi.size}")
    if not np.all(np.isfinite(xi)) or np.any(xi < 0) or np.any(xi > 1):
        raise CliError("design vector entries must lie in [0, 1]")
    return xi


def _bounds(path) -> BoundTable | None:
    if not path:
        return None
    cfg = load_config(path)
    try:
        return BoundTable.from_mapping(cfg.get("bounds", cfg))
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(f"bounds: {exc}") from None


def _layout(path) -> MotorLayout:
    try:
        data = read_json(path)
        data = data.get("layout", data) if "motors" not in data else data
        return MotorLayout.from_json_dict(data)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot read layout from {path}: {exc}") from None


def _vehicle(layout: MotorLayout):
    from .dynamics import Vehicle

    try:
        return Vehicle.build(layout, BodyGeometry(propeller_radius=layout.propeller_radius))
    except DesignError as exc:
        raise CliError(str(exc), EXIT_EVAL) from None


def _render_rows(layout: MotorLayout):
    rows = []
    for i, m in enumerate(layout.motors):
        rows.append([str(i), *m.position, *m.axis, "CCW" if m.spin > 0 else "CW"])
    return rows


RENDER_HEADER = ["motor", "x", "y", "z", "ax", "ay", "az", "spin"]


# -- subcommands ----------------------------------------------------------------

def cmd_decode(args) -> int:
    if args.baseline:
        layout = baseline_layout(args.baseline, args.arm)
        config = {"baseline": args.baseline, "arm": args.arm}
    elif args.xi:
        xi = _parse_xi(args.xi)
        bounds = _bounds(args.bounds)
        layout = decode(xi, bounds)
        config = {"xi": xi.tolist(), "bounds": None if bounds is None else bounds.to_mapping()}
    else:
        raise CliError("decode needs --xi or --baseline")
    result = layout.to_json_dict()
    if args.repair:
        from .geometry_repair import RepairConfig, repair

        rep = repair(layout, BodyGeometry(propeller_radius=layout.propeller_radius), RepairConfig(seed=_seed(args)))
        result = rep.repaired_layout.to_json_dict()
        layout = rep.repaired_layout
        config["repair"] = True
    if args.dry_run:
        _manifest(args, "decode", config, _seed(args))
        return EXIT_OK
    _emit(args, "layout.json", result)
    if args.out:
        write_csv(Path(args.out) / "render.csv", RENDER_HEADER, _render_rows(layout))
        _manifest(args, "decode", config, _seed(args))
    return EXIT_OK


def cmd_repair(args) -> int:
    from .geometry_repair import RepairConfig, repair

    layout = _layout(args.layout)
    seed = _seed(args)
    if args.dry_run:
        _manifest(args, "repair", {"layout": str(args.layout)}, seed)
        return EXIT_OK
    res = repair(layout, BodyGeometry(propeller_radius=layout.propeller_radius), RepairConfig(seed=seed))
    _emit(args, "repair.json", res.to_json_dict())
    _manifest(args, "repair", {"layout": layout.to_json_dict()}, seed)
    return EXIT_OK if res.converged else EXIT_EVAL


def cmd_check_hover(args) -> int:
    from .dynamics import hover_feasible

    layout = _layout(args.layout)
    veh = _vehicle(layout)
    res = hover_feasible(veh.wrench, veh.mass, veh.rotor)
    out = {"feasible": res.feasible, "residual": res.residual if np.isfinite(res.residual) else None,
           "hover_speeds": None if res.hover_speeds is None else res.hover_speeds.tolist(), "mass": veh.mass}
    _emit(args, "hover.json", out)
    _manifest(args, "check-hover", {"layout": layout.to_json_dict()}, None)
    return EXIT_OK


def cmd_envelope(args) -> int:
    from .dynamics import ENVELOPE_HEADER, accel_envelope, direction_fan, envelope_rows, hover_feasible

    layout = _layout(args.layout)
    veh = _vehicle(layout)
    planes = ("xy", "xz", "yz") if args.plane == "all" else (args.plane,)
    path = Path(args.out) / "envelope.csv" if args.out else None
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    if not hover_feasible(veh.wrench, veh.mass, veh.rotor).feasible:
        warnings.warn("layout cannot hover; envelope left empty")
        write_csv(path, ENVELOPE_HEADER, [["# warning: layout is not hover-feasible"]])
    else:
        rows = []
        for plane in planes:
            dirs = direction_fan(plane, args.n)
            vals = accel_envelope(veh.wrench, veh.mass_props, dirs, veh.rotor, include_gravity=args.gravity)
            rows.extend(envelope_rows(dirs, vals))
        write_csv(path, ENVELOPE_HEADER, rows)
    _manifest(args, "envelope", {"layout": layout.to_json_dict(), "plane": args.plane, "n": args.n,
                                 "gravity": args.gravity}, None)
    return EXIT_OK


def _trainer_config(args, file_cfg):
    from .training.ppo import TrainerConfig

    d = dict(file_cfg.get("trainer", {}))
    if getattr(args, "smoothing_weight", None) is not None:
        d["smoothing_weight"] = args.smoothing_weight
    try:
        return TrainerConfig.from_mapping(d)
    except (TypeError, ValueError) as exc:
        raise CliError(f"trainer: {exc}") from None


def cmd_train(args) -> int:
    from .tasks import get_task
    from .training.halving import HalvingSchedule, sequential_halving
    from .training.ppo import PPOTrainer

    file_cfg = load_config(args.config) if args.config else {}
    seed = _seed(args, file_cfg)
    try:
        schedule = HalvingSchedule.parse(args.halving or file_cfg.get("halving", "8x800,6x800,4x3200"))
        task = get_task(args.task or file_cfg.get("task", "A"))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    tcfg = _trainer_config(args, file_cfg)
    layout = _layout(args.design)
    config = {"design": layout.to_json_dict(), "task": task.to_mapping(), "halving": str(schedule),
              "trainer": tcfg.to_mapping()}
    if args.dry_run:
        _manifest(args, "train", config, seed)
        return EXIT_OK
    if not args.out:
        raise CliError("train needs --out")
    veh = _vehicle(layout)
    seeds = [seed + k for k in range(schedule.stages[0][0])]
    res = sequential_halving(lambda s, total: PPOTrainer(veh, task, tcfg, seed=s, total_epochs=total),
                             schedule, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.best_policy.save(out / "policy.json")
    write_json(out / "audit.json", {"best_seed": res.best_seed, "best_score": res.best_score,
                                    "total_epochs": res.total_epochs, "runs": res.audit})
    _manifest(args, "train", config, seed)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .tasks import get_task, run_episodes, summarize
    from .training.policy import PolicyNetwork

    seed = _seed(args)
    try:
        task = get_task(args.task)
        policy = PolicyNetwork.load(args.policy)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(str(exc)) from None
    layout = _layout(args.design)
    if args.episodes < 1:
        raise CliError("--episodes must be >= 1")
    config = {"design": layout.to_json_dict(), "task": task.to_mapping(), "episodes": args.episodes}
    if args.dry_run:
        _manifest(args, "eval", config, seed)
        return EXIT_OK
    veh = _vehicle(layout)
    outcomes = run_episodes(veh, policy, task, args.episodes, seed=seed)
    rep = summarize(outcomes, task.miss_penalty_weight)
    _emit(args, "eval.json", rep.to_json_dict())
    if args.episodes_csv:
        rows = [[str(i), str(o.crossed), str(o.missed), str(int(o.crashed)), o.duration]
                for i, o in enumerate(outcomes)]
        target = Path(args.out) / args.episodes_csv if args.out else Path(args.episodes_csv)
        write_csv(target, ["episode", "crossed", "missed", "crashed", "duration"], rows)
    _manifest(args, "eval", config, seed)
    return EXIT_OK


def _campaign_config(args, file_cfg: dict):
    from .optim.campaign import CampaignConfig, ConfigError

    d = dict(file_cfg)
    d["seed"] = _seed(args, file_cfg)
    if getattr(args, "objective", None):
        d["objective"] = args.objective
    if getattr(args, "task", None):
        d["task"] = args.task
    b = dict(d.get("budget", {}))
    if getattr(args, "budget", None) is not None:
        b["bo_max"] = args.budget
    if getattr(args, "cmaes_budget", None) is not None:
        b["cmaes_max"] = args.cmaes_budget
    if b:
        d["budget"] = b
    if getattr(args, "jobs", None) is not None:
        d["jobs"] = args.jobs
    try:
        return CampaignConfig.from_mapping(d)
    except ConfigError as exc:
        raise CliError(f"config field {exc}") from None
    except TypeError as exc:
        raise CliError(f"config: {exc}") from None


def cmd_optimize(args) -> int:
    from .optim.campaign import run_campaign

    file_cfg = load_config(args.config) if args.config else {}
    cfg = _campaign_config(args, file_cfg)
    if not args.out:
        raise CliError("optimize needs --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "optimize", cfg.to_mapping(), cfg.seed)
    if args.dry_run:
        return EXIT_OK
    res = run_campaign(cfg, out)
    _summary(res)
    return EXIT_OK


def _summary(res) -> None:
    best = res.best
    msg = {"status": res.status, "evaluations": len(res.records), "new_evaluations": res.new_evaluations,
           "best_design_id": None if best is None else best["design_id"],
           "best_score": None if best is None else best["score"]}
    sys.stdout.write(dumps(msg))


def cmd_resume(args) -> int:
    from .optim.campaign import CampaignConfig, ConfigError, run_campaign

    out = Path(args.out or "")
    man_path = out / "manifest.json"
    if not args.out or not man_path.exists():
        raise CliError(f"no campaign manifest in {out}")
    man = read_json(man_path)
    try:
        cfg = CampaignConfig.from_mapping(man["config"])
    except (ConfigError, KeyError, TypeError) as exc:
        raise CliError(f"manifest config: {exc}") from None
    if args.dry_run:
        return EXIT_OK
    res = run_campaign(cfg, out)
    _summary(res)
    return EXIT_OK


def cmd_baseline(args) -> int:
    arm = args.arm
    if args.match:
        target = mass_inertia(_layout(args.match))
        arm = match_inertia_arm_length(args.name, target)
    layout = baseline_layout(args.name, arm)
    _emit(args, "layout.json", layout.to_json_dict())
    _manifest(args, "baseline", {"name": args.name, "arm": arm}, None)
    return EXIT_OK


def cmd_perturb_task(args) -> int:
    from .tasks import get_task, perturb_task

    try:
        base = get_task(args.task)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        spec = perturb_task(base, args.pr, args.dy, args.dz)
    for w in caught:
        sys.stderr.write(f"warning: {w.message}\n")
    _emit(args, "task.json", spec.to_mapping())
    _manifest(args, "perturb-task", spec.to_mapping(), None)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--seed", type=int, help="overrides AFORGE_SEED and the config file")
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--dry-run", action="store_true", help="validate inputs, write only the manifest")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="aforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"aforge {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("decode", parents=[common], help="design vector or baseline to layout JSON")
    s.add_argument("--xi", help=f"{DIM} comma-separated values in [0, 1]")
    s.add_argument("--baseline", choices=BASELINES)
    s.add_argument("--arm", type=float, default=0.2, help="baseline arm length (m)")
    s.add_argument("--bounds", help="TOML file with a bounds table")
    s.add_argument("--repair", action="store_true", help="also remove collisions")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("repair", parents=[common], help="minimal-translation collision repair")
    s.add_argument("--layout", default="-", help="layout JSON file, '-' for stdin")
    s.set_defaults(func=cmd_repair)

    s = sub.add_parser("check-hover", parents=[common], help="hover feasibility of a layout")
    s.add_argument("--layout", default="-")
    s.set_defaults(func=cmd_check_hover)

    s = sub.add_parser("envelope", parents=[common], help="acceleration envelope CSV")
    s.add_argument("--layout", default="-")
    s.add_argument("--plane", choices=("xy", "xz", "yz", "all"), default="all")
    s.add_argument("--n", type=int, default=72, help="directions per plane")
    s.add_argument("--gravity", action="store_true", help="include the gravity offset")
    s.set_defaults(func=cmd_envelope)

    s = sub.add_parser("train", parents=[common], help="sequential-halving PPO training")
    s.add_argument("--design", required=True, help="layout JSON")
    s.add_argument("--task", choices=("A", "B"))
    s.add_argument("--halving", help="e.g. 8x800,6x800,4x3200")
    s.add_argument("--smoothing-weight", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="task performance of a policy")
    s.add_argument("--design", required=True)
    s.add_argument("--policy", required=True)
    s.add_argument("--task", choices=("A", "B"), default="A")
    s.add_argument("--episodes", type=int, default=256)
    s.add_argument("--episodes-csv", help="per-episode CSV file name")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("optimize", parents=[common], help="run a design campaign")
    s.add_argument("--objective", choices=("proxy-envelope", "train"))
    s.add_argument("--task", choices=("A", "B"))
    s.add_argument("--budget", type=int, help="BO evaluation budget")
    s.add_argument("--cmaes-budget", type=int)
    s.add_argument("--jobs", type=int)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("resume", parents=[common], help="continue a campaign from its record log")
    s.set_defaults(func=cmd_resume)

    s = sub.add_parser("baseline", parents=[common], help="reference airframe layouts")
    s.add_argument("--name", choices=BASELINES, required=True)
    s.add_argument("--arm", type=float, default=0.2)
    s.add_argument("--match", help="layout JSON whose inertia the arm length should match")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("perturb-task", parents=[common], help="scaled task distribution")
    s.add_argument("--task", choices=("A", "B"), default="B")
    s.add_argument("--pr", type=float, default=1.0)
    s.add_argument("--dy", type=float, default=1.0)
    s.add_argument("--dz", type=float, default=1.0)
    s.set_defaults(func=cmd_perturb_task)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"aforge {args.command}: {exc}\n")
        return exc.code
    except (DesignError, FileNotFoundError) as exc:
        sys.stderr.write(f"aforge {args.command}: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("evaluation failure", exc_info=True)
        sys.stderr.write(f"aforge {args.command}: evaluation failed: {exc}\n")
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
