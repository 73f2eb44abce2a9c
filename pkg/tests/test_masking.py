from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import COUNTRYWIDE_QUESTION
from rsearch.masking import MaskFlag, compute_loss_mask
from rsearch.protocol import Origin, SegmentKind, parse_rollout
from rsearch.rollout import run_episode


def check_partition(t, mask):
    size = len(t.raw.encode())
    pos = 0
    for span in mask.spans:
        s, e = span.byte_range
        assert s == pos and e > s
        pos = e
    assert pos == size
    for a, b in zip(mask.spans, mask.spans[1:]):
        assert a.flag is not b.flag
    env = []
    for s in t.segments:
        if s.origin is Origin.ENVIRONMENT:
            if env and env[-1][1] == s.start:
                env[-1] = (env[-1][0], s.end)
            else:
                env.append(s.byte_range)
    assert mask.excluded() == env


def test_countrywide_fixture_mask(countrywide_raw):
    t = parse_rollout(countrywide_raw)
    mask = compute_loss_mask(t)
    check_partition(t, mask)
    assert len(mask.excluded()) == 2


def test_no_observation_single_span():
    t = parse_rollout("think <answer>x</answer>")
    mask = compute_loss_mask(t)
    assert [(s.byte_range, s.flag) for s in mask.spans] == [((0, len(t.raw)), MaskFlag.OPTIMIZE)]
    assert compute_loss_mask(parse_rollout("")).spans == ()


def test_evidence_is_optimized(countrywide_policy, cooperative_cross, index):
    ep = run_episode(COUNTRYWIDE_QUESTION, ["July 1, 2008"], countrywide_policy, index, cross_family=cooperative_cross)
    (ev,) = ep.trajectory.of_kind(SegmentKind.EVIDENCE)
    assert any(
        sp.flag is MaskFlag.OPTIMIZE and sp.byte_range[0] <= ev.start and ev.end <= sp.byte_range[1]
        for sp in ep.mask.spans
    )
    check_partition(ep.trajectory, ep.mask)


def test_observation_tags_are_excluded(countrywide_raw):
    t = parse_rollout(countrywide_raw)
    raw = countrywide_raw.encode()
    for s, e in compute_loss_mask(t).excluded():
        assert raw[s:e].startswith(b"<observation>") and raw[s:e].endswith(b"</observation>")


PIECES = ["<search>q</search>", "<observation>doc é</observation>", "<original_evidence>e</original_evidence>",
          "<answer>a</answer>", "text ", "<observation>", "漢"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(PIECES), max_size=12).map("".join))
def test_partition_and_idempotence(raw):
    t = parse_rollout(raw)
    mask = compute_loss_mask(t)
    check_partition(t, mask)
    assert compute_loss_mask(t) == mask
