"""Property tests for the spec invariants, driven by hypothesis."""

import numpy as np
from hypothesis import given, settings, strategies as st

from voxalign import tensor as tz
from voxalign.encoder import apply_rope, pad_slices
from voxalign.findings import (
    ABNORMAL,
    EMPTY_CHUNK_SENTENCE,
    NORMAL,
    NOT_EXAMINED,
    ORGAN_REGISTRY,
    OrganFinding,
    OrganFindingsRecord,
    compose_description,
)
from voxalign.metrics import ranks_of_truth, recall_at_k
from voxalign.studies import sample_chunk
from voxalign.tensor import Tensor

finite_floats = st.floats(min_value=-50, max_value=50, allow_nan=False,
                          allow_infinity=False)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.lists(finite_floats, min_size=1, max_size=8), min_size=1,
                max_size=6).filter(lambda rows: len({len(r) for r in rows}) == 1))
def test_softmax_rows_sum_to_one(rows):
    tz.set_default_dtype(np.float64)
    out = tz.softmax_lastdim(Tensor(np.array(rows))).data
    assert np.max(np.abs(out.sum(axis=-1) - 1.0)) < 1e-12


@settings(max_examples=150, deadline=None)
@given(st.integers(min_value=1, max_value=8).map(lambda h: 2 * h),
       st.integers(min_value=0, max_value=4096),
       st.integers(min_value=42, max_value=2**31 - 1))
def test_rope_preserves_pair_norms(d, position, seed):
    tz.set_default_dtype(np.float64)
    x = np.random.default_rng(seed).standard_normal((1, 1, 1, d))
    out = apply_rope(Tensor(x), np.array([position]), 1000.0).data
    norm_in = np.hypot(x[..., 0::2], x[..., 1::2])
    norm_out = np.hypot(out[..., 0::2], out[..., 1::2])
    assert np.max(np.abs(norm_in - norm_out)) < 1e-12


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=1, max_value=512),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_sample_chunk_always_in_bounds(depth, seed):
    spec = sample_chunk(depth, np.random.default_rng(seed))
    assert 0 <= spec.start
    assert spec.start + spec.length <= depth
    if depth >= 32:
        assert spec.length in (32, 64, 128)
    else:
        assert (spec.start, spec.length) == (0, depth)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=2, max_value=20),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_recall_monotone_and_rank_bounds(n, seed):
    sim = np.random.default_rng(seed).standard_normal((n, n))
    ranks = ranks_of_truth(sim)
    assert ranks.min() >= 1 and ranks.max() <= n
    previous = 0.0
    for k in range(1, n + 1):
        value = recall_at_k(sim, k)
        assert value >= previous
        previous = value
    assert previous == 1.0


organ_subset = st.sets(st.sampled_from(ORGAN_REGISTRY), max_size=10)
status_strategy = st.sampled_from([NORMAL, ABNORMAL, NOT_EXAMINED])


@st.composite
def records(draw):
    organs = {}
    for organ in draw(st.sets(st.sampled_from(ORGAN_REGISTRY), max_size=12)):
        status = draw(status_strategy)
        text = "not_examined" if status == NOT_EXAMINED else \
            draw(st.sampled_from(["", f"{organ} is unremarkable.",
                                  f"{organ} contains a lesion."]))
        organs[organ] = OrganFinding(status, text)
    general = draw(st.sampled_from([None, "", "not_examined", "Overall adequate."]))
    return OrganFindingsRecord(organs=organs, general=general)


@settings(max_examples=200, deadline=None)
@given(records(), organ_subset)
def test_compose_pure_sentinel_and_provenance(record, organs):
    first = compose_description(record, organs)
    second = compose_description(record, set(organs))
    assert first == second
    if not organs:
        assert first == EMPTY_CHUNK_SENTENCE
    else:
        assert first != EMPTY_CHUNK_SENTENCE
        for organ in organs:
            entry = record.organs.get(organ)
            if entry is None or entry.status == NOT_EXAMINED:
                assert organ in first  # named in the not-examined list
            elif entry.findings:
                assert entry.findings in first
                assert first.count(entry.findings) >= 1


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=1, max_value=40), st.integers(min_value=1, max_value=16),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_pad_slices_length_contract(raw_len, patch_z, seed):
    v = np.random.default_rng(seed).standard_normal((raw_len, 2, 2))
    for mode in ("repeat", "zero"):
        out = pad_slices(v, patch_z, mode)
        assert out.shape[0] % patch_z == 0
        assert out.shape[0] >= raw_len
        assert out.shape[0] - raw_len < patch_z
        assert np.array_equal(out[:raw_len], v)
