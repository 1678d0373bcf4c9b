"""
Command-line entry point.

    python fopo.py gen-data --game rsa --rl-count 1000 --seed 7 --out data/rsa
    python fopo.py pretrain --corpus data/rsa --out runs/sft
    python fopo.py train --corpus data/rsa --init runs/sft/pretrained.ckpt --algo fopo --eta 0.1
    python fopo.py sweep --param eta --values 0.01,0.05,0.1,0.5,1 --corpus data/rsa
    python fopo.py eval --checkpoint runs/fopo/checkpoints/final.ckpt --partner oracle
    python fopo.py tournament --checkpoints runs/sft/pretrained.ckpt runs/fopo/checkpoints/final.ckpt
    python fopo.py reward-curve --conv-min 6 --n 16

Every command writes manifest.json into its output directory (gen-data merges
it into the corpus manifest under "run"). Passing that manifest back as
--config reproduces the configuration. Diagnostics go to stderr; exit status
is 0 on success, 1 on any ForesightError, 2 on usage errors.
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field

from foresight import __version__, datagen, evalharness, selfplay
from foresight.checkpoint import Checkpoint, list_checkpoints, load_checkpoint, save_checkpoint
from foresight.environments import RandomAgent, make_env, scripted_agents
from foresight.errors import CheckpointError, ConfigError, ForesightError
from foresight.logsetup import setup_logging
from foresight.paramcore import PolicyNetwork, Role, init_parameters
from foresight.rewards import reward_curve
from foresight.settings import OUTPUT_DIR, Settings, flat_keys, flatten_settings, load_settings

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA = "run-manifest/1"

# argparse dest -> flat configuration key
FLAG_KEYS = {
    "seed": "seed",
    "workers": "workers",
    "game": "game",
    "algo": "algorithm",
    "eta": "eta",
    "alpha": "alpha",
    "beta": "beta",
    "phases": "phases",
    "episodes_per_phase": "episodes_per_phase",
    "group_size": "group_size",
    "batch_size": "batch_size",
    "rl_count": "rl_count",
    "pretrain_count": "pretrain_count",
    "taboo_count": "taboo_count",
    "episodes": "episodes_per_pairing",
}


# ============================================================
# Run manifest
# ============================================================

class RunManifest(BaseModel):
    """Everything needed to rerun one command."""
    schema_version: str = MANIFEST_SCHEMA
    command: str
    arguments: Dict[str, Any] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: int
    artifacts: Dict[str, str] = Field(default_factory=dict)
    package_version: str = __version__
    started_at: str
    finished_at: str


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _arguments(args: argparse.Namespace) -> Dict[str, Any]:
    values = {}
    for key, value in vars(args).items():
        if key == "func":
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, list):
            value = [str(v) if isinstance(v, Path) else v for v in value]
        values[key] = value
    return values


def build_manifest(args: argparse.Namespace, settings: Settings, artifacts: Dict[str, Path],
                   started_at: str) -> RunManifest:
    return RunManifest(
        command=args.command,
        arguments=_arguments(args),
        config=flatten_settings(settings),
        seed=settings.train.seed,
        artifacts={name: str(path) for name, path in artifacts.items()},
        started_at=started_at,
        finished_at=_now(),
    )


def write_manifest(out_dir: Path, manifest: RunManifest, merge: bool = False) -> Path:
    """Write manifest.json; with merge, attach it under "run" in an existing manifest."""
    path = Path(out_dir) / MANIFEST_NAME
    data = manifest.model_dump(mode="json")
    if merge and path.is_file():
        existing = json.loads(path.read_text(encoding="utf-8"))
        existing["run"] = data
        data = existing
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ============================================================
# Helpers
# ============================================================

def _overrides(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[key] = value
    for item in getattr(args, "set_values", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip().lower()] = value.strip()
    if extra:
        values.update(extra)
    return values


def _settings(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> Settings:
    return load_settings(args.config, _overrides(args, extra))


def _out_dir(args: argparse.Namespace, default: str) -> Path:
    return Path(args.out) if args.out is not None else OUTPUT_DIR / default


def _game_instances(settings: Settings, corpus: Optional[Path], split: str) -> List:
    """RSA ObjectSets of one corpus split, or Taboo worlds; generated in memory without --corpus."""
    run = settings.train
    if run.game == "rsa":
        if corpus is not None:
            return datagen.load_corpus(corpus).instances(split)
        counts = {"rl_count": 0, "pretrain_count": 0}
        counts[f"{split}_count"] = getattr(settings.datagen, f"{split}_count")
        logger.info("No --corpus given; generating %d %s instances in memory", counts[f"{split}_count"], split)
        return datagen.generate_rsa_corpus(settings.datagen.model_copy(update=counts)).instances(split)
    if corpus is not None:
        return datagen.load_taboo_corpus(corpus)
    logger.info("No --corpus given; generating %d taboo worlds in memory", settings.datagen.taboo_count)
    return datagen.generate_taboo_worlds(settings.datagen.seed, settings.datagen.taboo_count, run.taboo)


def _network(settings: Settings):
    run = settings.train
    env = make_env(run.game, run.rsa, run.taboo)
    layout = env.policy_layout(run.policy.hidden_units)
    return env, layout, PolicyNetwork(layout)


def _checkpoint_label(path: Path, taken: List[str]) -> str:
    label = path.stem
    if label in taken:
        label = f"{path.parent.name}/{path.stem}"
    return label


# ============================================================
# Commands
# ============================================================

def cmd_gen_data(args: argparse.Namespace, started_at: str) -> int:
    settings = _settings(args)
    out = _out_dir(args, "data")
    cfg = settings.datagen
    if settings.train.game == "rsa":
        corpus = datagen.generate_rsa_corpus(cfg)
        datagen.emit_corpus(corpus, out)
        artifacts = {f"{split}_instances": out / f"{split}_instances.jsonl" for split in corpus.splits}
        artifacts.update({f"{split}_chains": out / f"{split}_chains.jsonl" for split in corpus.chains})
    else:
        worlds = datagen.generate_taboo_worlds(cfg.seed, cfg.taboo_count, settings.train.taboo)
        datagen.emit_taboo_corpus(worlds, out, cfg.seed, settings.train.taboo)
        artifacts = {"worlds": out / "taboo_worlds.jsonl"}
    write_manifest(out, build_manifest(args, settings, artifacts, started_at), merge=True)
    return 0


def cmd_pretrain(args: argparse.Namespace, started_at: str) -> int:
    settings = _settings(args)
    run = settings.train
    out = _out_dir(args, "pretrain")
    env, layout, net = _network(settings)
    theta_init = init_parameters(layout, run.seed, run.policy.init_scale).values
    dataset = selfplay.build_golden_dataset(env, _game_instances(settings, args.corpus, "pretrain"), run.seed)
    result = selfplay.pretrain(net, theta_init, dataset, settings.pretrain, run.seed)

    ckpt = save_checkpoint(out / "pretrained.ckpt", Checkpoint(layout, result.theta, None, run.seed))
    history = out / "pretrain_history.csv"
    pd.DataFrame({"epoch": range(1, len(result.history) + 1),
                  "mean_log_likelihood": result.history}).to_csv(history, index=False)
    write_manifest(out, build_manifest(args, settings, {"checkpoint": ckpt, "history": history}, started_at))
    return 0


def _run_training(args: argparse.Namespace, settings: Settings, out: Path) -> selfplay.TrainResult:
    run = settings.train
    _, layout, _ = _network(settings)
    theta_init = load_checkpoint(args.init, expected=layout).theta if args.init is not None else None
    instances = _game_instances(settings, args.corpus, "rl")
    return selfplay.train(run, instances, out, theta_init, args.resume)


def _training_artifacts(out: Path) -> Dict[str, Path]:
    return {
        "metrics": out / selfplay.METRICS_FILE,
        "metrics_long": out / selfplay.METRICS_LONG_FILE,
        "final_checkpoint": out / selfplay.CHECKPOINT_DIR / "final.ckpt",
    }


def cmd_train(args: argparse.Namespace, started_at: str) -> int:
    settings = _settings(args)
    out = _out_dir(args, "train")
    result = _run_training(args, settings, out)
    if result.collapsed:
        logger.warning("Run finished with entropy collapse flagged")
    write_manifest(out, build_manifest(args, settings, _training_artifacts(out), started_at))
    return 0


def cmd_sweep(args: argparse.Namespace, started_at: str) -> int:
    key = args.param.lower()
    if key not in flat_keys():
        raise ConfigError(f"cannot sweep unknown key {args.param!r}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    out = _out_dir(args, "sweep")
    rows, artifacts = [], {}
    for value in values:
        settings = _settings(args, {key: value})
        run_dir = out / f"{key}_{value}"
        logger.info("Sweep %s=%s -> %s", key, value, run_dir)
        run_started = _now()
        result = _run_training(args, settings, run_dir)
        write_manifest(run_dir, build_manifest(args, settings, _training_artifacts(run_dir), run_started))
        artifacts[f"{key}_{value}"] = run_dir / selfplay.METRICS_FILE
        last = result.metrics.iloc[-1].to_dict() if not result.metrics.empty else {}
        rows.append({key: value, "collapsed": result.collapsed, **last})

    summary = out / "sweep_summary.csv"
    pd.DataFrame(rows).to_csv(summary, index=False)
    artifacts["summary"] = summary
    write_manifest(out, build_manifest(args, _settings(args), artifacts, started_at))
    return 0


def _partner(args: argparse.Namespace, settings: Settings, role: Role, own_theta, layout):
    name = args.partner
    if name == "oracle":
        return scripted_agents(settings.train.game)[role]
    if name == "random":
        return RandomAgent()
    if name == "self":
        return own_theta
    return load_checkpoint(Path(name), expected=layout).theta


def _print_headline(report: evalharness.EvalReport) -> None:
    if report.game == "rsa":
        print(f"{report.agent1} (speaker) vs {report.agent2} (listener): "
              f"mean_reward={report.mean_reward:.2f} success_rate={report.success_rate:.3f} "
              f"mean_turn_gap={report.mean_turn_gap:.2f}")
    else:
        print(f"{report.agent1} (attacker) vs {report.agent2} (defender): "
              f"attacker_win={report.attacker_win_rate:.3f} defender_win={report.defender_win_rate:.3f} "
              f"tie={report.tie_rate:.3f}")


def cmd_eval(args: argparse.Namespace, started_at: str) -> int:
    settings = _settings(args)
    out = _out_dir(args, "eval")
    env, layout, net = _network(settings)
    ckpt = load_checkpoint(args.checkpoint, expected=layout)
    instances = _game_instances(settings, args.corpus, args.split)
    label = args.checkpoint.stem
    partner_label = args.partner if args.partner in ("oracle", "random", "self") else Path(args.partner).stem

    roles = [Role.AGENT1, Role.AGENT2] if args.role == "both" else [Role[args.role.upper()]]
    reports = []
    for index, role in enumerate(roles):
        partner = _partner(args, settings, role.counterpart, ckpt.theta, layout)
        players = {role: ckpt.theta, role.counterpart: partner}
        labels = {role: label, role.counterpart: partner_label}
        report = evalharness.evaluate(env, net, players[Role.AGENT1], players[Role.AGENT2], instances,
                                      settings.eval, settings.train.reward,
                                      labels=(labels[Role.AGENT1], labels[Role.AGENT2]), pairing_index=index)
        if report.entropy is not None and report.entropy < settings.eval.entropy_threshold:
            logger.warning("Policy entropy %.5f nats is below %.3g: collapsed policy",
                           report.entropy, settings.eval.entropy_threshold)
        _print_headline(report)
        reports.append(report)

    artifacts = evalharness.write_reports(reports, out)
    write_manifest(out, build_manifest(args, settings, artifacts, started_at))
    return 0


def cmd_tournament(args: argparse.Namespace, started_at: str) -> int:
    settings = _settings(args)
    out = _out_dir(args, "tournament")
    env, layout, net = _network(settings)

    paths: List[Path] = []
    for path in args.checkpoints:
        paths.extend(list_checkpoints(path) if path.is_dir() else [path])
    if len(paths) < 2:
        raise CheckpointError(f"a tournament needs at least two checkpoints, found {len(paths)}")
    entries, labels = [], []
    for path in paths:
        label = _checkpoint_label(path, labels)
        labels.append(label)
        entries.append((label, load_checkpoint(path, expected=layout).theta))

    instances = _game_instances(settings, args.corpus, args.split)
    result = evalharness.tournament(env, net, entries, instances, settings.eval, settings.train.reward,
                                    workers=settings.train.workers)
    artifacts = evalharness.write_tournament(result, out, group=args.group, excel=not args.no_excel)
    write_manifest(out, build_manifest(args, settings, artifacts, started_at))
    return 0


def cmd_reward_curve(args: argparse.Namespace, started_at: str) -> int:
    settings = _settings(args)
    out = _out_dir(args, "reward_curve")
    try:
        gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    except ValueError as e:
        raise ConfigError(f"bad --gammas value: {e}") from e
    frame = reward_curve(args.conv_min, args.n, gammas, settings.train.reward)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "reward_curve.csv"
    frame.to_csv(path, index=False)
    write_manifest(out, build_manifest(args, settings, {"curve": path}, started_at))
    return 0


# ============================================================
# Parser
# ============================================================

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="Flat KEY=VALUE config file, or a manifest.json of an earlier run")
    common.add_argument("--seed", type=int, default=None, help="Master seed for all randomness")
    common.add_argument("--workers", type=int, default=None, help="Worker processes for rollouts and pairings")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR (default FOPO_LOG_LEVEL)")
    common.add_argument("--out", type=Path, default=None, help="Output directory")
    common.add_argument("--set", dest="set_values", action="append", default=[], metavar="KEY=VALUE",
                        help="Override any configuration key (repeatable)")
    return common


def _add_corpus(parser: argparse.ArgumentParser, split: bool = False) -> None:
    parser.add_argument("--corpus", type=Path, default=None, help="Corpus directory written by gen-data")
    if split:
        parser.add_argument("--split", choices=["rl", "pretrain"], default="rl", help="RSA corpus split")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fopo", description="Foresight policy optimization self-play toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    common = _common_parser()
    game = dict(choices=["rsa", "taboo"], default=None)

    def add(name: str, func: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "Generate an RSA or Taboo corpus")
    p.add_argument("--game", required=True, choices=["rsa", "taboo"])
    p.add_argument("--rl-count", type=int, default=None)
    p.add_argument("--pretrain-count", type=int, default=None)
    p.add_argument("--taboo-count", type=int, default=None)

    p = add("pretrain", cmd_pretrain, "Maximum-likelihood pretraining on oracle dialogues")
    p.add_argument("--game", **game)
    _add_corpus(p)

    for name, func, help_text in (("train", cmd_train, "Self-play RL training"),
                                  ("sweep", cmd_sweep, "One training run per value of a configuration key")):
        p = add(name, func, help_text)
        p.add_argument("--game", **game)
        p.add_argument("--algo", choices=["ppo", "grpo", "fopo", "gr_fopo"], default=None)
        p.add_argument("--eta", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--phases", type=int, default=None)
        p.add_argument("--episodes-per-phase", type=int, default=None)
        p.add_argument("--group-size", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--init", type=Path, default=None, help="Pretrained checkpoint to start from")
        p.add_argument("--resume", type=Path, default=None, help="Optimizer checkpoint to continue")
        _add_corpus(p)
        if name == "sweep":
            p.add_argument("--param", required=True, help="Configuration key to vary")
            p.add_argument("--values", required=True, help="Comma-separated values")

    p = add("eval", cmd_eval, "Evaluate a checkpoint against a partner")
    p.add_argument("--game", **game)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--partner", default="oracle", help="oracle, random, self or a checkpoint path")
    p.add_argument("--role", choices=["agent1", "agent2", "both"], default="both",
                   help="Role the checkpoint plays (agent1 = speaker/attacker)")
    p.add_argument("--episodes", type=int, default=None)
    _add_corpus(p, split=True)

    p = add("tournament", cmd_tournament, "Cross-play all ordered pairings of checkpoints")
    p.add_argument("--game", **game)
    p.add_argument("--checkpoints", type=Path, nargs="+", required=True, help="Checkpoint files or directories")
    p.add_argument("--group", nargs="*", default=None, help="Labels for the include/exclude aggregate")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--no-excel", action="store_true")
    _add_corpus(p, split=True)

    p = add("reward-curve", cmd_reward_curve, "Tabulate the RSA reward over conversation length")
    p.add_argument("--conv-min", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--gammas", default="2,1,0.5")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    started_at = _now()
    try:
        return args.func(args, started_at)
    except ForesightError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 1
    except Exception:
        logger.exception("Unexpected failure in %s", args.command)
        return 1
