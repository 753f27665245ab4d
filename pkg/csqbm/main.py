"""
Command-line entry point: ``python -m csqbm {train,eval,sample,gradcheck,plot}``.

Random streams: ``SeedSequence(seed).spawn(4)`` -> init, env, agent, eval.
train uses init/env/agent, eval uses eval, sample uses agent, gradcheck
uses init.

Exit codes: 0 ok, 1 usage/config, 2 I/O, 3 numerical tolerance, 4 divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import pathlib
import sys
from typing import Any, Dict, Iterator, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from scipy.integrate import trapezoid

from . import __version__
from .agent import METRIC_FIELDS, DivergenceError, TdUpdateError, evaluate, train
from .checkpoint import CheckpointError, CheckpointMeta, load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    ExperimentConfig,
    build_agent_config,
    build_csqbm,
    build_prior,
    build_env,
    dump_config,
    load_config,
)
from .exp_family import NonNormalizableError
from .model import (
    CsqbmModel,
    GradientTarget,
    ModelValidationError,
    build_model,
    free_energy,
    grad_free_energy,
    gibbs_sample_action,
    q_values_batch,
    random_hidden_spec,
    visible_log_weight,
)
from .plotting import (
    METRICS_SCHEMA,
    SAMPLES_SCHEMA,
    MetricsFormatError,
    header_record,
    plot_learning_curve,
    read_metrics,
    write_record,
)
from .quantum_core import GibbsStateError, PauliOp


LOGGER = logging.getLogger("csqbm.main")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_TOLERANCE = 3
EXIT_DIVERGENCE = 4

STREAM_NAMES = ("init", "env", "agent", "eval")
FD_STEP = 1e-5
RELATIVE_FLOOR = 0.01
RUN_ARTIFACT = "csqbm-run"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def split_streams(seed: int) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(child) for name, child in zip(STREAM_NAMES, children)}


def write_json_atomic(path: pathlib.Path, payload: dict) -> None:
    temporary = path.with_suffix(path.suffix + ".tmp")
    temporary.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")
    temporary.replace(path)


@contextlib.contextmanager
def _output_stream(path: Optional[str]) -> Iterator[TextIO]:
    if path is None or path == "-":
        yield sys.stdout
        return
    target = pathlib.Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as stream:
        yield stream


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if not args.config:
        raise UsageError("--config is required for this command")
    overrides: List[str] = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"run.seed={int(args.seed)}")
    if args.out is not None:
        overrides.append(f"run.output_dir={json.dumps(str(args.out))}")
    return load_config(pathlib.Path(args.config), overrides)


# ==================== train ====================

def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    run = config.run
    out = pathlib.Path(run["output_dir"])
    checkpoints_dir = out / "checkpoints"
    checkpoints_dir.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(dump_config(config), encoding="utf-8")

    streams = split_streams(run["seed"])
    model = build_csqbm(config, streams["init"])
    agent_config = build_agent_config(config)
    env = build_env(config)
    checkpoints: List[Dict[str, str]] = []

    def checkpoint(name: str, snapshot: CsqbmModel, step: int) -> None:
        meta = CheckpointMeta(
            rng_label=f"seed={run['seed']}:agent",
            step=step,
            optimizer={"kind": "sgd", "alpha": agent_config.alpha},
        )
        digest = save_checkpoint(checkpoints_dir / name, snapshot, meta)
        checkpoints.append({"file": f"checkpoints/{name}", "sha256": digest})

    def on_step(step: int, snapshot: CsqbmModel) -> None:
        if step % run["checkpoint_interval"] == 0:
            checkpoint(f"ckpt_{step:08d}.yaml", snapshot, step)

    LOGGER.info("Training %s for %d episodes, seed %d -> %s", config.env["name"], run["episodes"], run["seed"], out)
    exit_code = EXIT_OK
    with (out / "metrics.jsonl").open("w", encoding="utf-8") as metrics:
        write_record(metrics, header_record(METRICS_SCHEMA, METRIC_FIELDS))

        def on_episode(record: Dict[str, Any]) -> None:
            write_record(metrics, record)
            if (record["episode"] + 1) % run["log_interval"] == 0:
                LOGGER.info(
                    "Episode %d: return %.4f, mean |td| %.4g",
                    record["episode"], record["return"], record["mean_abs_td"],
                )

        try:
            log = train(
                env,
                agent_config,
                model,
                run["episodes"],
                streams["env"],
                streams["agent"],
                max_steps=run["max_steps"],
                record_wall_time=run["record_wall_time"],
                on_episode=on_episode,
                on_step=on_step,
            )
            model, steps = log.model, log.total_steps
        except (DivergenceError, TdUpdateError) as exc:
            LOGGER.error("Training aborted: %s", exc)
            exit_code, steps = EXIT_DIVERGENCE, getattr(exc, "step", 0)

    if exit_code == EXIT_OK:
        checkpoint("ckpt_final.yaml", model, steps)
    write_json_atomic(
        out / "manifest.json",
        {
            "artifact": RUN_ARTIFACT,
            "version": 1,
            "package_version": __version__,
            "command": "train",
            "root_seed": run["seed"],
            "total_steps": steps,
            "status": "ok" if exit_code == EXIT_OK else "diverged",
            "checkpoints": checkpoints,
        },
    )
    return exit_code


# ==================== eval ====================

def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    model, _ = load_checkpoint(pathlib.Path(args.checkpoint))
    env = build_env(config)
    if env.spec.state_dim + env.spec.action_dim != model.n:
        raise UsageError(
            f"checkpoint has n={model.n}, env {env.spec.name} needs "
            f"{env.spec.state_dim + env.spec.action_dim}"
        )
    episodes = args.episodes if args.episodes is not None else config.run["eval_episodes"]
    streams = split_streams(config.run["seed"])
    summary = evaluate(model, env, episodes, streams["eval"], build_agent_config(config))
    print(json.dumps(summary.to_record(), separators=(",", ":")))
    return EXIT_OK


# ==================== sample ====================

def histogram_record(
    model: CsqbmModel, state: np.ndarray, actions: np.ndarray, bins: int
) -> Dict[str, Any]:
    """Sample histogram over mean +/- 6 std plus the grid-exact bin probabilities (one free unit)."""
    centre, spread = float(actions.mean()), float(actions.std()) or 1.0
    edges = np.linspace(centre - 6 * spread, centre + 6 * spread, bins + 1)
    counts, _ = np.histogram(actions[:, 0], bins=edges)
    grid = np.linspace(edges[0], edges[-1], 64 * bins + 1)
    V = np.column_stack([np.tile(state, (grid.size, 1)), grid])
    log_weight = visible_log_weight(model, V)
    density = np.exp(log_weight - log_weight.max())
    density /= trapezoid(density, grid)
    exact = [
        float(trapezoid(density[i * 64 : (i + 1) * 64 + 1], grid[i * 64 : (i + 1) * 64 + 1]))
        for i in range(bins)
    ]
    return {
        "summary": "histogram",
        "edges": [float(x) for x in edges],
        "counts": [int(x) for x in counts],
        "exact": exact,
    }


def cmd_sample(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(pathlib.Path(args.checkpoint))
    state = np.asarray(args.state or [], dtype=float)
    if state.size >= model.n:
        raise UsageError(
            f"state has {state.size} values but the checkpoint has n={model.n} visible units; "
            "at least one coordinate must stay free"
        )
    if args.count < 0 or args.sweeps < 1:
        raise UsageError("--count must be >= 0 and --sweeps >= 1")
    rng = split_streams(args.seed if args.seed is not None else 0)["agent"]
    actions = gibbs_sample_action(model, state, args.sweeps, rng, count=args.count)
    q = q_values_batch(model, np.tile(state, (len(actions), 1)), actions) if len(actions) else []
    with _output_stream(args.output) as stream:
        write_record(stream, header_record(SAMPLES_SCHEMA, ("index", "action", "q")))
        for index, (action, value) in enumerate(zip(actions, q)):
            write_record(stream, {"index": index, "action": [float(x) for x in action], "q": float(value)})
        if args.histogram and len(actions):
            if actions.shape[1] != 1:
                raise UsageError("--histogram needs exactly one free coordinate")
            write_record(stream, histogram_record(model, state, actions, args.histogram))
    return EXIT_OK


# ==================== gradcheck ====================

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - fd| / max(|fd|, 0.01): relative error with an absolute floor of 0.01 * tolerance."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(numeric), RELATIVE_FLOOR)


def numerical_gradients(model: CsqbmModel, v: np.ndarray, step: float = FD_STEP) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences of F w.r.t. the trainable weights and the visible units."""
    weights = model.weights_vector()
    d_weights = np.empty_like(weights)
    for i in range(weights.size):
        plus, minus = weights.copy(), weights.copy()
        plus[i] += step
        minus[i] -= step
        d_weights[i] = (
            free_energy(model.with_weights(plus), v).f - free_energy(model.with_weights(minus), v).f
        ) / (2 * step)
    d_visible = np.empty(v.size)
    for k in range(v.size):
        plus, minus = v.copy(), v.copy()
        plus[k] += step
        minus[k] -= step
        d_visible[k] = (free_energy(model, plus).f - free_energy(model, minus).f) / (2 * step)
    return d_weights, d_visible


def gradcheck_model(config: ExperimentConfig, rng: np.random.Generator) -> CsqbmModel:
    """Random model with the configured shapes: weights ~ U[-1, 1], beta in {0.5, 1, 2}."""
    section = config.model
    basis = PauliOp.parse(section["coupling_basis"])
    return build_model(
        build_prior(config),
        random_hidden_spec(section["m"], basis, rng, scale=1.0, diagonal_only=section["strict_sampler"]),
        rng,
        1.0,
        coupling_basis=basis,
        beta=float(rng.choice([0.5, 1.0, 2.0])),
        quadratic_coupling=section["quadratic_coupling"],
        strict_sampler=section["strict_sampler"],
        theta_trainable=section["theta_trainable"],
    )


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.tolerance < 0:
        raise UsageError("--tolerance must not be negative")
    config = _load_config(args)
    rng = split_streams(config.run["seed"])["init"]
    worst: Dict[str, Tuple[float, str]] = {}
    for _ in range(args.trials):
        model = gradcheck_model(config, rng)
        v = rng.normal(size=model.n)
        report = grad_free_energy(model, v, GradientTarget.BOTH)
        fd_weights, fd_visible = numerical_gradients(model, v)
        errors = relative_error(report.d_weights, fd_weights)
        for group, part in model.parameter_groups():
            index = int(np.argmax(errors[part]))
            value = float(errors[part][index])
            if value >= worst.get(group, (-1.0, ""))[0]:
                worst[group] = (value, model.weight_labels[part][index])
        visible_errors = relative_error(report.d_visible, fd_visible)
        index = int(np.argmax(visible_errors))
        if float(visible_errors[index]) >= worst.get("visible", (-1.0, ""))[0]:
            worst["visible"] = (float(visible_errors[index]), f"v[{index}]")

    failed = False
    for group, (value, label) in worst.items():
        ok = value <= args.tolerance
        print(json.dumps({"group": group, "worst_error": value, "parameter": label, "ok": ok}))
        if not ok:
            failed = True
            LOGGER.error("Gradient check failed for %s (worst error %.3e > %.1e)", label, value, args.tolerance)
    return EXIT_TOLERANCE if failed else EXIT_OK


# ==================== plot ====================

def cmd_plot(args: argparse.Namespace) -> int:
    metrics_path = pathlib.Path(args.metrics)
    _, records = read_metrics(metrics_path)
    if not records:
        raise UsageError(f"{metrics_path}: no episode records to plot")
    output = pathlib.Path(args.output) if args.output else metrics_path.with_suffix(".svg")
    plot_learning_curve(records, output, title=metrics_path.parent.name)
    return EXIT_OK


# ==================== 参数与入口 ====================

def _common_arguments() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="实验配置 YAML 路径")
    common.add_argument("--seed", type=int, default=None, help="覆盖 run.seed")
    common.add_argument("--out", default=None, help="覆盖 run.output_dir")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="覆盖任意配置项，可重复")
    common.add_argument("--quiet", action="store_true", help="只输出 WARNING 及以上日志")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_arguments()
    parser = _Parser(prog="csqbm", description="Continuous semi-quantum Boltzmann machine toolkit")
    parser.add_argument("--version", action="version", version=f"csqbm {__version__}")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    train_parser = commands.add_parser("train", parents=[common], help="训练 Q-learning 智能体")
    train_parser.set_defaults(handler=cmd_train)

    eval_parser = commands.add_parser("eval", parents=[common], help="评估检查点")
    eval_parser.add_argument("--checkpoint", required=True)
    eval_parser.add_argument("--episodes", type=int, default=None)
    eval_parser.set_defaults(handler=cmd_eval)

    sample_parser = commands.add_parser("sample", parents=[common], help="从 p(a|s) 采样动作")
    sample_parser.add_argument("--checkpoint", required=True)
    sample_parser.add_argument("--state", type=float, nargs="*", default=[])
    sample_parser.add_argument("--count", type=int, default=100)
    sample_parser.add_argument("--sweeps", type=int, default=20)
    sample_parser.add_argument("--histogram", type=int, default=0, metavar="BINS")
    sample_parser.add_argument("--output", default=None, help="输出文件，默认 stdout")
    sample_parser.set_defaults(handler=cmd_sample)

    grad_parser = commands.add_parser("gradcheck", parents=[common], help="解析梯度与有限差分对比")
    grad_parser.add_argument("--trials", type=int, default=100)
    grad_parser.add_argument("--tolerance", type=float, default=1e-5)
    grad_parser.set_defaults(handler=cmd_gradcheck)

    plot_parser = commands.add_parser("plot", parents=[common], help="由 metrics.jsonl 绘制学习曲线 SVG")
    plot_parser.add_argument("--metrics", required=True)
    plot_parser.add_argument("--output", default=None)
    plot_parser.set_defaults(handler=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING if args.quiet else getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except (DivergenceError, TdUpdateError) as exc:
        LOGGER.error("Fatal error: %s", exc)
        return EXIT_DIVERGENCE
    except (GibbsStateError, NonNormalizableError) as exc:
        LOGGER.error("Fatal error: %s", exc)
        return EXIT_TOLERANCE
    except (ConfigError, CheckpointError, MetricsFormatError, ModelValidationError, UsageError, ValueError) as exc:
        LOGGER.error("Fatal error: %s", exc)
        return EXIT_USAGE
    except OSError as exc:
        LOGGER.error("Fatal error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
