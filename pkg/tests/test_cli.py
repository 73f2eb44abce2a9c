import json
import shutil

import pytest

from conftest import write_jsonl
from rsearch.backends import ScriptedBackend
from rsearch.cli import main
from rsearch.masking import compute_loss_mask
from rsearch.protocol import parse_rollout
from rsearch.rewards import RewardBreakdown, RewardConfig
from rsearch.rollout import Episode, EpisodeStats, RolloutConfig, Termination, run_episode
from stubs import closed_port_url


@pytest.fixture
def workdir(tmp_path, data_dir):
    for name in ("scripted.yaml", "countrywide_policy.jsonl", "countrywide_cross.jsonl", "corpus20.jsonl",
                 "countrywide_dataset.jsonl"):
        shutil.copy(data_dir / name, tmp_path / name)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def episode_from_raw(raw, id, question="q", golds=("x",)):
    t = parse_rollout(raw, question)
    return Episode(id=id, record_id=id, question=question, golden_answers=list(golds), trajectory=t,
                   rewards=RewardBreakdown.zero(), mask=compute_loss_mask(t),
                   stats=EpisodeStats(0, 0, len(raw.encode()), Termination.ANSWER), policy_family="qwen")


def write_episodes(path, episodes):
    path.write_text("".join(e.dumps() + "\n" for e in episodes))
    return path


def test_index_command(workdir, capsys):
    assert run("index", workdir / "corpus20.jsonl", workdir / "idx.json") == 0
    assert "20 documents" in capsys.readouterr().out
    assert run("index", workdir / "missing.jsonl", workdir / "idx.json") != 0
    write_jsonl(workdir / "dup.jsonl", [{"id": "d1", "title": "", "contents": "a"}] * 2)
    assert run("index", workdir / "dup.jsonl", workdir / "idx2.json") != 0
    assert "'d1'" in capsys.readouterr().err


def test_rollout_with_saved_index(workdir):
    run("index", workdir / "corpus20.jsonl", workdir / "idx.json")
    cfg = workdir / "scripted.yaml"
    cfg.write_text(cfg.read_text().replace("corpus: corpus20.jsonl", "index: idx.json"))
    assert run("--config", cfg, "rollout", workdir / "countrywide_dataset.jsonl", workdir / "out.jsonl") == 0


def test_rollout_deterministic(workdir, capsys):
    cfg = workdir / "scripted.yaml"
    for name in ("a.jsonl", "b.jsonl"):
        assert run("--config", cfg, "--seed", 1, "rollout", workdir / "countrywide_dataset.jsonl", workdir / name) == 0
    a, b = (workdir / "a.jsonl").read_bytes(), (workdir / "b.jsonl").read_bytes()
    assert a == b
    rows = [json.loads(line) for line in a.decode().splitlines()]
    assert len(rows) == 2
    assert rows[0]["rewards"]["total"] == pytest.approx(2.4, abs=1e-12)
    assert "mean_reward=2.4000" in capsys.readouterr().out


def test_rollout_bad_config_and_empty_dataset(workdir, capsys):
    bad = workdir / "bad.yaml"
    bad.write_text("rollout: {samples_per_prompt: -1}\n")
    assert run("--config", bad, "rollout", workdir / "countrywide_dataset.jsonl", workdir / "o.jsonl") != 0
    assert "rollout.samples_per_prompt" in capsys.readouterr().err
    (workdir / "empty.jsonl").write_text("")
    assert run("--config", workdir / "scripted.yaml", "rollout", workdir / "empty.jsonl", workdir / "o.jsonl") == 0
    assert (workdir / "o.jsonl").read_text() == ""


def test_rollout_family_collision_before_network(workdir, capsys):
    url = closed_port_url()
    cfg = workdir / "live.yaml"
    cfg.write_text(f"""
policy: {{kind: chat, family: qwen, base_url: "{url}", model: p}}
cross_family: {{kind: chat, family: qwen, base_url: "{url}", model: c}}
retriever: {{endpoint: "{url}"}}
""")
    assert run("--config", cfg, "rollout", workdir / "countrywide_dataset.jsonl", workdir / "o.jsonl") != 0
    assert "must differ" in capsys.readouterr().err


def test_rollout_partial_output_on_abort(workdir):
    write_jsonl(workdir / "two.jsonl", [
        {"id": "a", "question": "q", "golden_answers": ["x"]},
        {"id": "b", "question": "q", "golden_answers": ["x"]},
    ])
    write_jsonl(workdir / "pol.jsonl", [{"episode": "a/0", "step": 1, "text": "<answer>x</answer>"},
                                        {"episode": "b/0", "step": 1, "text": "<search>Boston</search>"}])
    (workdir / "abort.yaml").write_text("""
policy: {kind: scripted, family: qwen, script: pol.jsonl}
retriever: {endpoint: "%s"}
rollout: {samples_per_prompt: 1, on_retrieval_error: abort}
reward: {evidence_reward: false}
""" % closed_port_url())
    assert run("--config", workdir / "abort.yaml", "rollout", workdir / "two.jsonl", workdir / "o.jsonl") != 0
    lines = (workdir / "o.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["id"] == "a/0"


def truth_table_episodes(index):
    scripts = {
        "none": ["just thinking"],
        "answer": ["<answer>x</answer>"],
        "search_only": ["<search>Boston</search>", "done"],
        "search_answer": ["<search>Boston</search>", "<answer>x</answer>"],
        "search_evidence": ["<search>Boston</search>", "<original_evidence>e</original_evidence>"],
        "full": ["<search>Boston</search>", "<original_evidence>e</original_evidence><answer>x</answer>"],
    }
    cfg = RewardConfig(evidence_reward=False)
    return [run_episode("q", ["x"], ScriptedBackend(s), index, RolloutConfig(), cfg, episode_id=k, record_id=k)
            for k, s in scripts.items()]


def test_score_idempotent_and_gamma_change(workdir, index):
    eps = write_episodes(workdir / "eps.jsonl", truth_table_episodes(index))
    base = workdir / "base.yaml"
    base.write_text("reward: {evidence_reward: false}\n")
    assert run("--config", base, "score", eps) == 0
    first = eps.read_bytes()
    assert run("--config", base, "score", eps) == 0
    assert eps.read_bytes() == first
    half = workdir / "half.yaml"
    half.write_text("reward: {evidence_reward: false, gamma_e: 0.1, gamma_a: 0.1}\n")
    assert run("--config", half, "score", eps, "--out", workdir / "half.jsonl") == 0
    before = [json.loads(l)["rewards"]["format"] for l in first.decode().splitlines()]
    after = [json.loads(l)["rewards"]["format"] for l in (workdir / "half.jsonl").read_text().splitlines()]
    assert len(set(before)) == 3
    assert after == pytest.approx([b / 2 for b in before], abs=1e-12)


def test_score_malformed_line(workdir, capsys):
    p = workdir / "bad.jsonl"
    p.write_text('{"id": 1}\n')
    base = workdir / "base.yaml"
    base.write_text("reward: {evidence_reward: false}\n")
    assert run("--config", base, "score", p) != 0
    assert "bad.jsonl:1" in capsys.readouterr().err


def test_evaluate_command(workdir, capsys):
    write_jsonl(workdir / "nq.jsonl", [
        {"id": "1", "question": "q", "golden_answers": ["Paris"]},
        {"id": "2", "question": "q", "golden_answers": ["bank of america corporation"]},
    ])
    eps = write_episodes(workdir / "eps.jsonl", [
        episode_from_raw("<answer>Paris</answer>", "1"),
        episode_from_raw("<answer>bank of america</answer>", "2"),
    ])
    assert run("evaluate", eps, workdir / "nq.jsonl", "--report", workdir / "r.json") == 0
    report = json.loads((workdir / "r.json").read_text())["per_dataset"]["nq"]
    assert report["em"] == pytest.approx(50.0)
    assert report["f1"] == pytest.approx(100 * (1 + 6 / 7) / 2)
    assert "nq" in capsys.readouterr().out

    write_jsonl(workdir / "other.jsonl", [{"id": "zzz", "question": "q", "golden_answers": ["x"]}])
    assert run("evaluate", eps, workdir / "other.jsonl") != 0


def test_evaluate_perfect(workdir):
    write_jsonl(workdir / "nq.jsonl", [{"id": "1", "question": "q", "golden_answers": ["Paris"]}])
    eps = write_episodes(workdir / "eps.jsonl", [episode_from_raw("<answer>paris</answer>", "1")])
    assert run("evaluate", eps, workdir / "nq.jsonl", "--report", workdir / "r.json") == 0
    assert json.loads((workdir / "r.json").read_text())["per_dataset"]["nq"] == {"em": 100.0, "f1": 100.0, "n": 1}


def test_export_and_answer(workdir, films_raw, capsys):
    eps = write_episodes(workdir / "eps.jsonl", [episode_from_raw(films_raw, "films"),
                                                 episode_from_raw("<answer>x</answer>", "plain")])
    assert run("export-evidence", eps, workdir / "ev.jsonl") == 0
    assert len((workdir / "ev.jsonl").read_text().splitlines()) == 1

    none = write_episodes(workdir / "none.jsonl", [episode_from_raw("<answer>x</answer>", "plain")])
    assert run("export-evidence", none, workdir / "ev0.jsonl") == 0
    assert (workdir / "ev0.jsonl").read_text() == ""

    write_jsonl(workdir / "down.jsonl", [{"episode": "*", "step": 1, "text": "My Baby's Daddy"}])
    (workdir / "down.yaml").write_text("downstream: {kind: scripted, family: glm, script: down.jsonl}\n")
    assert run("--config", workdir / "down.yaml", "answer", workdir / "ev.jsonl", "--out", workdir / "a.jsonl") == 0
    assert json.loads((workdir / "a.jsonl").read_text())["answer"] == "My Baby's Daddy"

    (workdir / "dead.yaml").write_text(
        f'downstream: {{kind: chat, family: glm, base_url: "{closed_port_url()}", model: m, max_retries: 0}}\n')
    assert run("--config", workdir / "dead.yaml", "answer", workdir / "ev.jsonl") != 0
