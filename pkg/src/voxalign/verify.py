"""Built-in verification suites: gradient checks over the full model graph,
rotary-embedding properties, retrieval-metric oracles, and the composer
goldens realized through actual mask windows. The CLI's verify subcommand
runs all four and fails on any red check."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import goldens
from . import tensor as tz
from .encoder import AlignmentModel, EncoderConfig, apply_rope, pad_slices
from .findings import ORGAN_REGISTRY, compose_description
from .metrics import bootstrap_eval, retrieval_metrics
from .objective import sigmoid_pair_loss
from .studies import ChunkSpec, MaskVolume, organs_in_chunk
from .tensor import Tensor


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        tail = f" — {self.detail}" if self.detail else ""
        return f"[{status}] {self.suite}/{self.name}{tail}"


GRADCHECK_CONFIG = EncoderConfig(
    channels=8, heads=2, layers=1, embed_dim=8, in_plane_size=8, patch_xy=4,
    patch_z=2, text_vocab_size=16, text_max_len=12)


def full_model_grad_check(cfg: EncoderConfig = GRADCHECK_CONFIG, batch: int = 3,
                          h: float = 1e-5, seed: int = 0) -> tuple[float, int, float]:
    """Central-difference check of encode->loss over every model parameter.

    Returns (max relative error, parameter count, seconds). Must run in
    float64 mode.
    """
    if tz.default_dtype() != np.float64:
        raise tz.ContractError("gradient checking requires float64 mode")
    model = AlignmentModel(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    chunks = np.stack([
        pad_slices(rng.uniform(-1, 1, size=(4, cfg.in_plane_size, cfg.in_plane_size)),
                   cfg.patch_z)
        for _ in range(batch)
    ])
    texts = ["liver lesion detected", "heart and lungs appear normal",
             "spleen not examined"][:batch]

    def f():
        img = model.volume.forward(chunks)
        txt = model.text.forward(texts)
        return sigmoid_pair_loss(img, txt, model.log_temp, model.pair_bias)

    params = model.parameters()
    n_entries = sum(p.size for p in params.values())
    t0 = time.perf_counter()
    err = tz.grad_check(f, list(params.values()), h=h)
    return err, n_entries, time.perf_counter() - t0


def gradient_suite() -> list[CheckResult]:
    results = []
    r = np.random.default_rng(0)
    a = tz.param(r.standard_normal((3, 4)))
    b = tz.param(r.standard_normal((4, 2)))
    w = tz.constant(r.standard_normal((3, 2)))
    err = tz.grad_check(lambda: (tz.matmul(a, b) * w).sum(), [a, b], h=1e-6)
    results.append(CheckResult("gradient", "matmul", err < 1e-8, f"rel err {err:.2e}"))
    x = tz.param(r.standard_normal((2, 5)))
    wx = tz.constant(r.standard_normal((2, 5)))
    err = tz.grad_check(lambda: (tz.softmax_lastdim(x) * wx).sum(), [x], h=1e-6)
    results.append(CheckResult("gradient", "softmax", err < 1e-8, f"rel err {err:.2e}"))
    err, n_params, seconds = full_model_grad_check()
    results.append(CheckResult(
        "gradient", "full_model", err < 1e-4,
        f"rel err {err:.2e} over {n_params} parameters in {seconds:.1f}s"))
    return results


def rope_suite(trials: int = 200, seed: int = 0) -> list[CheckResult]:
    r = np.random.default_rng(seed)
    d = 8
    worst_shift = 0.0
    worst_norm = 0.0
    for _ in range(trials):
        q = r.standard_normal(d)
        k = r.standard_normal(d)
        t, s, delta = (int(v) for v in r.integers(0, 256, size=3))

        def rot(v, pos):
            return apply_rope(Tensor(v.reshape(1, 1, 1, d)), np.array([pos]),
                              1000.0).data.reshape(d)

        lhs = float(rot(q, t) @ rot(k, s))
        rhs = float(rot(q, t + delta) @ rot(k, s + delta))
        worst_shift = max(worst_shift, abs(lhs - rhs))
        rq = rot(q, t)
        norms_in = np.hypot(q[0::2], q[1::2])
        norms_out = np.hypot(rq[0::2], rq[1::2])
        worst_norm = max(worst_norm, float(np.max(np.abs(norms_in - norms_out))))
    results = [
        CheckResult("rope", "relative_shift", worst_shift < 1e-9,
                    f"worst {worst_shift:.2e} over {trials} tuples"),
        CheckResult("rope", "pair_norms", worst_norm < 1e-12, f"worst {worst_norm:.2e}"),
    ]
    x = r.standard_normal((1, 2, 6, d))
    ident = apply_rope(Tensor(x), np.zeros(6, dtype=int), 1000.0).data
    results.append(CheckResult("rope", "zero_position_identity",
                               bool(np.array_equal(ident, x))))
    return results


def _ranks_oracle(sim: np.ndarray) -> np.ndarray:
    n = sim.shape[0]
    out = []
    for i in range(n):
        order = sorted(range(n), key=lambda j: (-sim[i, j], j))
        out.append(order.index(i) + 1)
    return np.array(out)


def metric_suite(trials: int = 25, seed: int = 0) -> list[CheckResult]:
    r = np.random.default_rng(seed)
    exact = True
    for _ in range(trials):
        n = int(r.integers(2, 51))
        sim = r.standard_normal((n, n))
        ranks = _ranks_oracle(sim)
        got = retrieval_metrics(sim)
        ref = {f"R@{k}": float(np.mean(ranks <= k)) for k in (1, 5, 10, 50, 100)}
        ref["MeanRank"] = float(np.mean(ranks))
        ref["mAP"] = float(np.mean(1.0 / ranks))
        ref["NDCG@10"] = float(np.mean(np.where(ranks <= 10,
                                                1.0 / np.log2(1.0 + ranks), 0.0)))
        if got != ref:
            exact = False
            break
    results = [CheckResult("metrics", "oracle_equivalence", exact,
                           f"{trials} random matrices up to 50x50")]
    x = np.eye(12)
    a = bootstrap_eval(x, x, subset_size=6, iters=10, seed=5)
    b = bootstrap_eval(x, x, subset_size=6, iters=10, seed=5)
    results.append(CheckResult("metrics", "bootstrap_reproducible", a.stats == b.stats))
    return results


# ---------------------------------------------------------------------------
# composer goldens realized through actual mask windows
# ---------------------------------------------------------------------------

def _presence_mask(depth: int, bands: dict[str, list[tuple[int, int]]]) -> MaskVolume:
    organs = tuple(sorted(bands, key=ORGAN_REGISTRY.index))
    presence = np.zeros((depth, len(organs)), dtype=bool)
    for i, organ in enumerate(organs):
        for lo, hi in bands[organ]:
            presence[lo:hi, i] = True
    return MaskVolume(organs=organs, presence=presence)


def verification_mask() -> tuple[MaskVolume, dict[str, ChunkSpec]]:
    """A 70-slice mask whose windows reproduce the golden organ sets exactly."""
    mask = _presence_mask(70, {
        "Brain": [(0, 10)],
        "Liver": [(10, 20), (53, 58)],
        "Lung": [(12, 22)],
        "Heart": [(30, 40)],
        "Aorta": [(50, 55)],
        "Colon": [(50, 55)],
        "Esophagus": [(52, 57)],
        "Kidney": [(53, 58)],
        "Lymph nodes": [(50, 52)],
    })
    windows = {
        "empty": ChunkSpec(60, 10),
        "golden_window_brain_liver_lung": ChunkSpec(0, 15),
        "golden_window_heart": ChunkSpec(30, 10),
        "golden_window_mixed_statuses": ChunkSpec(50, 8),
    }
    return mask, windows


def cli_demo_mask() -> MaskVolume:
    """A 40-slice mask whose full-volume window yields the committed golden."""
    return _presence_mask(40, {
        "Brain": [(0, 10)],
        "Heart": [(10, 20)],
        "Liver": [(20, 30)],
        "Lung": [(30, 40)],
    })


def composer_suite() -> list[CheckResult]:
    record = goldens.example_record()
    mask, windows = verification_mask()
    results = []
    empty = compose_description(record, organs_in_chunk(mask, windows["empty"]))
    results.append(CheckResult(
        "composer", "empty_window_sentinel",
        empty == "No target structures were detected in this CT block."))
    for name, spec in windows.items():
        if name == "empty":
            continue
        organs = organs_in_chunk(mask, spec)
        expected_set = goldens.GOLDEN_WINDOWS[name]
        got = compose_description(record, organs)
        ok = organs == set(expected_set) and got == goldens.golden_text(name)
        results.append(CheckResult("composer", name, ok,
                                   f"window [{spec.start}, {spec.start + spec.length})"))
    full_mask = cli_demo_mask()
    full = compose_description(
        record, organs_in_chunk(full_mask, ChunkSpec(0, full_mask.depth)))
    results.append(CheckResult("composer", "full_volume_golden",
                               full == goldens.golden_text(goldens.FULL_VOLUME_GOLDEN)))
    return results


def run_all() -> list[CheckResult]:
    results: list[CheckResult] = []
    results.extend(gradient_suite())
    results.extend(rope_suite())
    results.extend(metric_suite())
    results.extend(composer_suite())
    return results
