"""``rsearch`` command line: index, rollout, score, evaluate, export-evidence, answer."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from statistics import fmean
from typing import Iterator, Optional, Sequence

from .backends import BackendError
from .config import ConfigError, EngineConfig, load_config
from .evaluation import DatasetError, evaluate, load_dataset
from .masking import compute_loss_mask
from .retrieval import CorpusError, RetrievalError, build_index, read_corpus
from .rewards import RewardBreakdown, group_advantage, total_reward
from .rollout import Episode, Termination, run_group
from .rstool import answer_with_evidence, export_evidence, read_evidence, write_evidence

log = logging.getLogger("rsearch")


class CommandError(Exception):
    pass


def read_episodes(path: str | Path) -> Iterator[Episode]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield Episode.from_json(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise CommandError(f"{path}:{lineno}: malformed episode record ({exc})") from exc


def _config(args) -> EngineConfig:
    overrides = {}
    if args.workers is not None:
        overrides["rollout.workers"] = args.workers
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def cmd_index(corpus_path: str, index_path: str) -> int:
    index = build_index(read_corpus(corpus_path))
    index.save(index_path)
    print(f"indexed {index.n_docs} documents ({len(index.df)} terms) -> {index_path}")
    return 0


def cmd_rollout(cfg: EngineConfig, dataset_path: str, out_path: str) -> int:
    records = load_dataset(dataset_path)
    rollout_cfg, reward_cfg = cfg.rollout_config(), cfg.reward_config()
    policy = cfg.make_backend("policy")
    cross = cfg.make_backend("cross_family") if reward_cfg.evidence_reward else None
    retriever = cfg.make_retriever()
    totals, valid = [], []
    with open(out_path, "w", encoding="utf-8") as out:
        for i, rec in enumerate(records):
            seed = None if cfg.seed is None else cfg.seed + i * rollout_cfg.samples_per_prompt
            episodes, _ = run_group(
                rec.question, rec.golden_answers, policy, retriever, rollout_cfg, reward_cfg, cross,
                group_id=rec.id, seed=seed,
            )
            for ep in episodes:
                out.write(ep.dumps() + "\n")
                totals.append(ep.rewards.total)
                valid.append(ep.stats.valid_searches)
            out.flush()
    if totals:
        print(f"episodes={len(totals)} mean_reward={fmean(totals):.4f} mean_valid_searches={fmean(valid):.4f}")
    else:
        print("episodes=0")
    return 0


def _rescore(episodes: list[Episode], cfg: EngineConfig) -> list[Episode]:
    reward_cfg = cfg.reward_config()
    cross = cfg.make_backend("cross_family") if reward_cfg.evidence_reward else None
    for ep in episodes:
        if ep.stats.terminated_by is Termination.BACKEND_ERROR:
            ep.rewards = RewardBreakdown.zero()
        else:
            ep.rewards = total_reward(ep.trajectory, ep.golden_answers, reward_cfg, cross, ep.id)
        ep.mask = compute_loss_mask(ep.trajectory)
    groups: dict[str, list[Episode]] = {}
    for ep in episodes:
        groups.setdefault(ep.record_id or ep.id, []).append(ep)
    for members in groups.values():
        for ep, adv in zip(members, group_advantage([m.rewards.total for m in members], reward_cfg)):
            ep.advantage = adv
    return episodes


def cmd_score(cfg: EngineConfig, episodes_path: str, out_path: Optional[str] = None) -> int:
    episodes = _rescore(list(read_episodes(episodes_path)), cfg)
    target = Path(out_path or episodes_path)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as f:
        for ep in episodes:
            f.write(ep.dumps() + "\n")
    os.replace(tmp, target)
    print(f"rescored {len(episodes)} episodes -> {target}")
    return 0


def cmd_evaluate(episodes_path: str, dataset_paths: Sequence[str], report_path: Optional[str] = None) -> int:
    datasets = {Path(p).stem: load_dataset(p) for p in dataset_paths}
    report = evaluate(datasets, read_episodes(episodes_path))
    print(report.table())
    if report_path:
        Path(report_path).write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_export_evidence(episodes_path: str, out_path: str) -> int:
    records = [r for r in (export_evidence(ep) for ep in read_episodes(episodes_path)) if r is not None]
    n = write_evidence(records, out_path)
    print(f"exported {n} evidence records -> {out_path}")
    return 0


def cmd_answer(cfg: EngineConfig, evidence_path: str, out_path: Optional[str] = None) -> int:
    downstream = cfg.make_backend("downstream")
    out = open(out_path, "w", encoding="utf-8") if out_path else sys.stdout
    try:
        for rec in read_evidence(evidence_path):
            answer = answer_with_evidence(rec, downstream)
            out.write(json.dumps({"source_episode": rec.source_episode, "question": rec.question,
                                  "answer": answer}, ensure_ascii=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsearch", description="Reasoning-search rollout engine.")
    p.add_argument("--config", help="YAML engine config")
    p.add_argument("--workers", type=int, help="concurrent episodes (overrides rollout.workers)")
    p.add_argument("--seed", type=int, help="base sampling seed (overrides seed)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("index", help="build a BM25 index from a JSON-lines corpus")
    s.add_argument("corpus")
    s.add_argument("index")

    s = sub.add_parser("rollout", help="run episode groups for every dataset record")
    s.add_argument("dataset")
    s.add_argument("out")

    s = sub.add_parser("score", help="recompute rewards and masks for stored episodes")
    s.add_argument("episodes")
    s.add_argument("--out", help="write here instead of rewriting the input")

    s = sub.add_parser("evaluate", help="EM/F1 report; dataset name is the file stem")
    s.add_argument("episodes")
    s.add_argument("datasets", nargs="+")
    s.add_argument("--report", help="also write the report as JSON")

    s = sub.add_parser("export-evidence", help="export well-formed evidence boxes")
    s.add_argument("episodes")
    s.add_argument("out")

    s = sub.add_parser("answer", help="answer exported evidence with the downstream backend")
    s.add_argument("evidence")
    s.add_argument("--out")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "index":
            return cmd_index(args.corpus, args.index)
        if args.command == "evaluate":
            return cmd_evaluate(args.episodes, args.datasets, args.report)
        if args.command == "export-evidence":
            return cmd_export_evidence(args.episodes, args.out)
        cfg = _config(args)
        if args.command == "rollout":
            return cmd_rollout(cfg, args.dataset, args.out)
        if args.command == "score":
            return cmd_score(cfg, args.episodes, args.out)
        if args.command == "answer":
            return cmd_answer(cfg, args.evidence, args.out)
    except (ConfigError, CorpusError, DatasetError, CommandError, RetrievalError, BackendError,
            OSError, ValueError) as exc:
        print(f"rsearch {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
