"""Command-line experiment harness.

Commands: gen-data, train-dkt, train-agent, eval, sweep-length, show-path.
Every command takes --seed and is byte-reproducible: the same configuration
and seed produce identical metrics files.  Wall-clock timings go to a
separate *_timing.jsonl sidecar so they never break reproducibility.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys

import numpy as np

from .agent import (AgentConfig, CnRandomPolicy, CogPolicy, McsPolicy, NetPolicy,
                    NullTracer, PolicyValueNet, evaluate, run_episode,
                    summarize_eval, train_agent)
from .config import ConfigError, ExperimentConfig, config_header_lines, resolve_config
from .data import (DataFormatError, kes_episode_specs, read_session_file,
                   split_dataset, write_session_file)
from .dkt import DKTModel, DktConfig, train_dkt
from .envs import (IrtItemParams, KesEnv, KssEnv, default_kss_graph,
                   depth_based_item_params, generate_synthetic_logs)
from .graph import GraphFormatError, PrereqGraph, ancestors_of, load_graph_file
from .nn import NumericError
from .seeding import named_rng

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

TRAINABLE_METHODS = ("cseal", "cseal-ncn")
ALL_METHODS = ("cseal", "cseal-ncn", "cn-random", "cog", "mcs-10", "mcs-50")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cseal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, required=True, help="experiment seed")
        p.add_argument("--out", help="output directory (default ./out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
        p.add_argument("--graph", help="prerequisite edge-list file")

    p = sub.add_parser("gen-data", help="generate a synthetic practice-log dataset")
    common(p)
    p.add_argument("--sessions", type=int, help="number of sessions (default 4000)")
    p.add_argument("--max-len", type=int, dest="max_len", help="maximum session length (default 50)")
    p.add_argument("--output", help="session file to write (default <out>/sessions.tsv)")

    p = sub.add_parser("train-dkt", help="train the knowledge-tracing model")
    common(p)
    p.add_argument("--dataset", help="session file (default <out>/sessions.tsv)")
    p.add_argument("--epochs", type=int, dest="kt_epochs", help="max training epochs")
    p.add_argument("--dkt", dest="dkt_ckpt", help="checkpoint path to write")

    p = sub.add_parser("train-agent", help="train a recommendation policy")
    common(p)
    p.add_argument("--method", choices=ALL_METHODS, help="method to train")
    p.add_argument("--env", dest="environment", choices=("kss", "kes"))
    p.add_argument("--dkt", dest="dkt_ckpt", help="agent-side tracing checkpoint")
    p.add_argument("--env-model", dest="env_model_ckpt", help="KES environment tracing checkpoint")
    p.add_argument("--dataset", help="session file for KES episode specs")
    p.add_argument("--epochs", type=int, dest="agent_epochs", help="training epochs")
    p.add_argument("--agent-ckpt", dest="agent_ckpt", help="checkpoint path to write")

    for name, extra in (("eval", ()), ("sweep-length", ("lengths",)), ("show-path", ())):
        p = sub.add_parser(name, help={
            "eval": "evaluate a method over fresh sessions",
            "sweep-length": "evaluate a method across path lengths",
            "show-path": "print recommended paths with candidate sets",
        }[name])
        common(p)
        p.add_argument("--method", choices=ALL_METHODS)
        p.add_argument("--env", dest="environment", choices=("kss", "kes"))
        p.add_argument("--episodes", type=int, help="evaluation episode count")
        p.add_argument("--dkt", dest="dkt_ckpt")
        p.add_argument("--agent-ckpt", dest="agent_ckpt")
        p.add_argument("--env-model", dest="env_model_ckpt")
        p.add_argument("--dataset")
        p.add_argument("--jobs", type=int, help="evaluation worker processes")
        p.add_argument("--path-length", type=int, dest="path_length")
        if "lengths" in extra:
            p.add_argument("--lengths", help="comma-separated path lengths")
    return parser


_FLAG_KEYS = ("seed", "out", "graph", "sessions", "max_len", "output", "dataset",
              "kt_epochs", "dkt_ckpt", "method", "environment", "env_model_ckpt",
              "agent_epochs", "agent_ckpt", "episodes", "jobs", "path_length", "lengths")


def _resolve(args) -> ExperimentConfig:
    overrides = {}
    for pair in args.set:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key] = value
    flags = {key: getattr(args, key, None) for key in _FLAG_KEYS}
    try:
        return resolve_config(args.config, overrides, flags)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {exc.filename}") from exc


# -- artifact wiring ----------------------------------------------------------


def _build_graph(cfg: ExperimentConfig) -> PrereqGraph:
    if not cfg.graph:
        return default_kss_graph()
    try:
        return load_graph_file(cfg.graph)
    except FileNotFoundError as exc:
        raise DataError(f"graph file not found: {cfg.graph}") from exc


def _item_params(cfg: ExperimentConfig, graph: PrereqGraph) -> list[IrtItemParams]:
    params = depth_based_item_params(graph, a=cfg.irt_a, c=cfg.irt_c)
    if cfg.irt_params:
        try:
            with open(cfg.irt_params, "r", encoding="utf-8") as f:
                lines = f.readlines()
        except FileNotFoundError as exc:
            raise DataError(f"IRT override file not found: {cfg.irt_params}") from exc
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line.startswith("item,"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(f"{cfg.irt_params}:{lineno}: expected item,a,b,c")
            item = int(parts[0])
            params[item] = IrtItemParams(float(parts[1]), float(parts[2]), float(parts[3]))
    return params


def _build_kss_env(cfg: ExperimentConfig, graph: PrereqGraph) -> KssEnv:
    return KssEnv(graph, item_params=_item_params(cfg, graph), g_max=cfg.g_max,
                  tau=cfg.tau, skip_threshold=cfg.skip_threshold, init_upper=cfg.init_upper)


def _build_env(cfg: ExperimentConfig, graph: PrereqGraph):
    if cfg.environment == "kss":
        return _build_kss_env(cfg, graph)
    if cfg.environment == "kes":
        if not cfg.env_model_ckpt:
            raise UsageError("KES environment needs --env-model")
        if not cfg.dataset:
            raise UsageError("KES environment needs --dataset for episode specs")
        model = _load_dkt(cfg.env_model_ckpt)
        sessions = _read_sessions(cfg.dataset)
        specs, _ = kes_episode_specs(sessions)
        if not specs:
            raise DataError(f"no usable KES episodes in {cfg.dataset}")
        return KesEnv(model, specs, skip_threshold=cfg.skip_threshold)
    raise UsageError(f"unknown environment {cfg.environment!r}")


def _read_sessions(path):
    try:
        sessions = read_session_file(path)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {path}") from exc
    if not sessions:
        raise DataError(f"dataset is empty: {path}")
    return sessions


def _load_dkt(path) -> DKTModel:
    try:
        return DKTModel.from_checkpoint(path)
    except FileNotFoundError as exc:
        raise DataError(f"tracing checkpoint not found: {path}") from exc


def _load_net(path) -> PolicyValueNet:
    try:
        return PolicyValueNet.from_checkpoint(path)
    except FileNotFoundError as exc:
        raise DataError(f"agent checkpoint not found: {path}") from exc


def _default_path(cfg: ExperimentConfig, value: str, filename: str) -> str:
    return value if value else os.path.join(cfg.out, filename)


def _agent_config(cfg: ExperimentConfig, path_length: int | None = None) -> AgentConfig:
    return AgentConfig(gamma=cfg.gamma, alpha=cfg.alpha, beta=cfg.beta,
                       path_length=path_length or cfg.path_length, lr=cfg.agent_lr,
                       entropy_weight=cfg.entropy_weight, batch_episodes=cfg.agent_batch,
                       hidden1=cfg.hidden1, hidden2=cfg.hidden2, k_hops=cfg.k,
                       clip_norm=cfg.agent_clip, eval_mode=cfg.eval_mode)


def _build_policy(cfg: ExperimentConfig, graph: PrereqGraph):
    """(policy, kt_model, use_cn) for the configured method."""
    method = cfg.method
    if method in ("cseal", "cseal-ncn"):
        net = _load_net(_default_path(cfg, cfg.agent_ckpt, f"agent_{method}.ckpt"))
        kt = _load_dkt(_default_path(cfg, cfg.dkt_ckpt, "dkt.ckpt"))
        return NetPolicy(net, cfg.eval_mode), kt, method == "cseal"
    if method == "cn-random":
        kt = _load_dkt(cfg.dkt_ckpt) if cfg.dkt_ckpt else NullTracer(graph.num_items)
        return CnRandomPolicy(), kt, True
    if method == "cog":
        kt = _load_dkt(_default_path(cfg, cfg.dkt_ckpt, "dkt.ckpt"))
        return CogPolicy(), kt, True
    if method in ("mcs-10", "mcs-50"):
        kt = _load_dkt(_default_path(cfg, cfg.dkt_ckpt, "dkt.ckpt"))
        return McsPolicy(kt, rollouts=int(method.split("-")[1])), kt, False
    raise UsageError(f"unknown method {method!r}")


# -- output helpers -----------------------------------------------------------


def _write_lines(path, header_lines, lines) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        for line in lines:
            f.write(line + "\n")


def _jsonl(rows) -> list[str]:
    return [json.dumps(row) for row in rows]


# -- commands -----------------------------------------------------------------


def cmd_gen_data(cfg: ExperimentConfig) -> int:
    graph = _build_graph(cfg)
    env = _build_kss_env(cfg, graph)
    sessions = generate_synthetic_logs(env, cfg.sessions, cfg.max_len,
                                       named_rng(cfg.seed, "gen.env"))
    path = _default_path(cfg, cfg.output, "sessions.tsv")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    write_session_file(path, sessions, config_header_lines(cfg))
    print(f"wrote {len(sessions)} sessions to {path}")
    return EXIT_OK


def cmd_train_dkt(cfg: ExperimentConfig) -> int:
    graph = _build_graph(cfg)
    sessions = _read_sessions(_default_path(cfg, cfg.dataset, "sessions.tsv"))
    split = split_dataset([s.records for s in sessions], (0.8, 0.1, 0.1),
                          rng=named_rng(cfg.seed, "split"))
    kt_config = DktConfig(num_items=graph.num_items, embed_dim=cfg.kt_embed_dim,
                          hidden_dim=cfg.kt_hidden_dim, lr=cfg.kt_lr,
                          batch_size=cfg.kt_batch, max_epochs=cfg.kt_epochs,
                          patience=cfg.kt_patience, dropout_embed=cfg.kt_dropout_embed,
                          dropout_output=cfg.kt_dropout_output, clip_norm=cfg.kt_clip)
    model, history = train_dkt(split.train, split.validation, kt_config, cfg.seed)
    ckpt = _default_path(cfg, cfg.dkt_ckpt, "dkt.ckpt")
    os.makedirs(os.path.dirname(ckpt) or ".", exist_ok=True)
    model.save(ckpt, {"seed": str(cfg.seed)})
    metrics_path = os.path.join(cfg.out, "dkt_metrics.jsonl")
    _write_lines(metrics_path, config_header_lines(cfg), _jsonl(history))
    print(f"wrote {ckpt} and {metrics_path} ({len(history)} epochs)")
    return EXIT_OK


def cmd_train_agent(cfg: ExperimentConfig) -> int:
    if cfg.method not in TRAINABLE_METHODS:
        raise UsageError(f"method {cfg.method!r} requires no training")
    graph = _build_graph(cfg)
    env = _build_env(cfg, graph)
    kt = _load_dkt(_default_path(cfg, cfg.dkt_ckpt, "dkt.ckpt"))
    net = PolicyValueNet(graph.num_items, cfg.hidden1, cfg.hidden2,
                         named_rng(cfg.seed, "agent.init"))
    agent_cfg = _agent_config(cfg)
    curve = train_agent(net, env, graph, kt, agent_cfg, cfg.seed, cfg.agent_epochs,
                        use_cn=cfg.method == "cseal")
    ckpt = _default_path(cfg, cfg.agent_ckpt, f"agent_{cfg.method}.ckpt")
    os.makedirs(os.path.dirname(ckpt) or ".", exist_ok=True)
    net.save(ckpt, {"seed": str(cfg.seed), "method": cfg.method})
    timings = [{"epoch": row["epoch"], "wall_time_s": row.pop("wall_time_s")} for row in curve]
    curve_path = os.path.join(cfg.out, f"curve_{cfg.method}.jsonl")
    _write_lines(curve_path, config_header_lines(cfg), _jsonl(curve))
    _write_lines(os.path.join(cfg.out, f"curve_{cfg.method}_timing.jsonl"), [], _jsonl(timings))
    print(f"wrote {ckpt} and {curve_path} ({len(curve)} epochs)")
    return EXIT_OK


def _eval_rows(cfg: ExperimentConfig, path_length: int | None = None) -> list[dict]:
    if cfg.jobs > 1:
        chunks = np.array_split(np.arange(cfg.episodes), cfg.jobs)
        jobs = [(cfg, path_length, chunk.tolist()) for chunk in chunks if len(chunk)]
        with multiprocessing.Pool(cfg.jobs) as pool:
            results = pool.map(_eval_worker, jobs)
        rows = [row for part in results for row in part]
        rows.sort(key=lambda r: r["episode"])
        return rows
    return _eval_worker((cfg, path_length, list(range(cfg.episodes))))


def _eval_worker(job) -> list[dict]:
    cfg, path_length, indices = job
    graph = _build_graph(cfg)
    env = _build_env(cfg, graph)
    policy, kt, use_cn = _build_policy(cfg, graph)
    agent_cfg = _agent_config(cfg, path_length)
    return evaluate(env, graph, kt, policy, agent_cfg, cfg.seed, cfg.episodes,
                    use_cn=use_cn, episode_indices=indices)


def cmd_eval(cfg: ExperimentConfig) -> int:
    rows = _eval_rows(cfg)
    summary = summarize_eval(rows, cfg.seed)
    path = os.path.join(cfg.out, f"eval_{cfg.method}.jsonl")
    _write_lines(path, config_header_lines(cfg), _jsonl(rows + [{"summary": summary}]))
    print(f"{cfg.method}: mean E_P {summary['mean_ep']:.4f} "
          f"(95% CI {summary['ci95_low']:.4f}..{summary['ci95_high']:.4f}, "
          f"{summary['episodes']} episodes) -> {path}")
    return EXIT_OK


def cmd_sweep_length(cfg: ExperimentConfig) -> int:
    lines = ["length,mean_ep,stderr,episodes"]
    for length in cfg.lengths_list():
        rows = _eval_rows(cfg, path_length=length)
        summary = summarize_eval(rows, cfg.seed)
        lines.append(f"{length},{summary['mean_ep']!r},{summary['stderr']!r},{summary['episodes']}")
    path = os.path.join(cfg.out, f"sweep_{cfg.method}.csv")
    _write_lines(path, config_header_lines(cfg), lines)
    print(f"wrote {path} ({len(cfg.lengths_list())} lengths)")
    return EXIT_OK


def cmd_show_path(cfg: ExperimentConfig) -> int:
    graph = _build_graph(cfg)
    env = _build_env(cfg, graph)
    policy, kt, use_cn = _build_policy(cfg, graph)
    agent_cfg = _agent_config(cfg)
    prereq_items = {}
    for line in config_header_lines(cfg):
        print(f"# {line}")
    for i in range(cfg.episodes):
        traj = run_episode(env, graph, kt, policy, agent_cfg,
                           named_rng(cfg.seed, f"eval.env.{i}"),
                           named_rng(cfg.seed, f"eval.agent.{i}"), use_cn)
        target_key = traj.target
        if target_key not in prereq_items:
            prereq_items[target_key] = ancestors_of(graph, target_key)
        ancestors = prereq_items[target_key]

        def role(item):
            if item in target_key:
                return "target"
            return "prereq" if item in ancestors else "other"

        tail = ",".join(f"{r.item}:{r.score}" for r in traj.history[-10:])
        print(f"episode={i} target={','.join(map(str, traj.target))} "
              f"e_s={traj.e_s:.6f} e_sup={len(traj.target)} e_e={traj.e_e:.6f} e_p={traj.e_p:.6f}")
        print(f"history={tail or '-'}")
        for step, (focus, cands, action, score) in enumerate(
                zip(traj.focuses, traj.candidates, traj.actions, traj.scores)):
            print(f"step={step} focus={focus} candidates={'|'.join(map(str, cands))} "
                  f"action={action} score={score} role={role(action)}")
        print(f"path={','.join(map(str, traj.actions))}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-dkt": cmd_train_dkt,
    "train-agent": cmd_train_agent,
    "eval": cmd_eval,
    "sweep-length": cmd_sweep_length,
    "show-path": cmd_show_path,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DataFormatError, GraphFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
