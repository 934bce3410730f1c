"""Premium/degraded evaluation and the brute-force PIN attacker."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .pin_vault import Pin, install, unlock
from .tensor_nn.model import forward, predict

log = logging.getLogger(__name__)

MODES = ("premium", "degraded", "wrong_pin")
DEFAULT_FAR_TARGETS = (1e-2, 1e-3)
PIN_DIGITS = 16


def evaluate_accuracy(model, dataset, batch_size=256) -> float:
    """Fraction of argmax-correct predictions."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    return float((predict(model, dataset.images, batch_size) == dataset.labels).mean())


def frr_at_far(genuine_scores, impostor_scores, far_targets) -> dict:
    """FRR at the smallest threshold whose FAR does not exceed each target.

    Candidate thresholds are the observed scores plus +inf; a score s is
    accepted when s >= t.
    """
    gen = np.sort(np.asarray(genuine_scores, dtype=np.float64))
    imp = np.sort(np.asarray(impostor_scores, dtype=np.float64))
    if gen.size == 0 or imp.size == 0:
        raise ValueError("need non-empty genuine and impostor score lists")
    cand = np.unique(np.concatenate([gen, imp]))
    n_imp = imp.size
    # impostors accepted at each candidate: count of imp >= t
    accepted = n_imp - np.searchsorted(imp, cand, side="left")
    out = {}
    for target in far_targets:
        ok = accepted / n_imp <= target
        if ok.any():
            # accepted count is non-increasing in t, so the first hit is the smallest t
            t = cand[np.argmax(ok)]
            frr = np.searchsorted(gen, t, side="left") / gen.size
        else:
            frr = 1.0
        out[float(target)] = float(frr)
    return out


def make_pairs(labels, n_pairs: int, seed=0):
    """Index pairs (i, j, same_class), half genuine and half impostor."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    by_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    multi = [c for c, ix in by_class.items() if len(ix) >= 2]
    pairs = []
    n_gen = n_pairs // 2 if multi and len(by_class) > 1 else (n_pairs if multi else 0)
    for _ in range(n_gen):
        c = multi[rng.integers(len(multi))]
        i, j = rng.choice(by_class[c], size=2, replace=False)
        pairs.append((int(i), int(j), True))
    while len(pairs) < n_pairs and len(by_class) > 1:
        i, j = rng.integers(len(labels), size=2)
        if labels[i] != labels[j]:
            pairs.append((int(i), int(j), False))
    return pairs


def cosine(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return math.nan
    return float(np.dot(a, b) / (na * nb))


def embed(model, images, batch_size=256) -> np.ndarray:
    images = np.asarray(images)
    chunks = [forward(model, images[i:i + batch_size], return_embedding=True)[1]
              for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks).astype(np.float64)


def pair_scores(model, pairs):
    """Cosine similarities of pre-logit embeddings, split into (genuine, impostor).

    `pairs` holds (image_a, image_b, same) triples. Pairs with a zero-norm
    embedding are skipped.
    """
    if not pairs:
        return [], []
    ea = embed(model, np.stack([p[0] for p in pairs]))
    eb = embed(model, np.stack([p[1] for p in pairs]))
    genuine, impostor = [], []
    skipped = 0
    for (_, _, same), a, b in zip(pairs, ea, eb):
        s = cosine(a, b)
        if math.isnan(s):
            skipped += 1
            continue
        (genuine if same else impostor).append(s)
    if skipped:
        log.warning("skipped %d pairs with a zero-norm embedding", skipped)
    return genuine, impostor


def dataset_pair_scores(model, dataset, index_pairs, batch_size=256):
    """pair_scores over index pairs into one dataset, embedding each image once."""
    emb = embed(model, dataset.images, batch_size)
    norms = np.linalg.norm(emb, axis=1)
    genuine, impostor = [], []
    for i, j, same in index_pairs:
        if norms[i] == 0 or norms[j] == 0:
            continue
        (genuine if same else impostor).append(float(emb[i] @ emb[j] / (norms[i] * norms[j])))
    return genuine, impostor


@dataclass
class EvalReport:
    mode: str
    accuracy: float
    frr_at_far: dict
    n_samples: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    def to_json(self):
        d = asdict(self)
        d["frr_at_far"] = {repr(k): v for k, v in self.frr_at_far.items()}
        return d


def evaluate(model, dataset, mode="premium", index_pairs=None,
             far_targets=DEFAULT_FAR_TARGETS) -> EvalReport:
    acc = evaluate_accuracy(model, dataset)
    frr = {}
    if index_pairs:
        gen, imp = dataset_pair_scores(model, dataset, index_pairs)
        if gen and imp:
            frr = frr_at_far(gen, imp, far_targets)
    return EvalReport(mode, acc, frr, len(dataset))


def random_pin(rng, digits=PIN_DIGITS) -> Pin:
    return Pin(str(int(rng.integers(0, 10 ** digits))).zfill(digits))


def draw_wrong_pins(n, seed, exclude=None, p=None, digits=PIN_DIGITS) -> list:
    """n uniform PIN strings, skipping the true PIN value and multiples of p."""
    rng = np.random.default_rng(seed)
    bad = None if exclude is None else Pin.of(exclude).value
    pins = []
    while len(pins) < n:
        pin = random_pin(rng, digits)
        if pin.value == bad or (p is not None and pin.value % p == 0):
            continue
        pins.append(pin)
    return pins


@dataclass
class AttackReport:
    pins_tried: int
    accuracies: list
    premium_accuracy: float | None
    min_accuracy: float
    mean_accuracy: float
    min_degradation: float | None = None
    mean_degradation: float | None = None
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if self.pins_tried != len(self.accuracies):
            raise ValueError("pins_tried must equal the number of accuracies")

    def to_json(self):
        return asdict(self)


def attack_simulation(vault, model, dataset, n_pins: int = 100, seed=0, true_pin=None,
                      pins=None) -> AttackReport:
    """Try random 16-digit PINs: unlock, install, evaluate.

    With `true_pin`, premium accuracy is measured with it and it is excluded
    from the draws. `pins` replaces the random draws (for tests).
    """
    if pins is None:
        if n_pins < 1:
            raise ValueError("n_pins must be >= 1")
        pins = draw_wrong_pins(n_pins, seed, exclude=true_pin, p=vault.field.p)
    pins = [Pin.of(p) for p in pins]
    premium = None
    if true_pin is not None:
        premium = evaluate_accuracy(install(model, vault.coords, unlock(vault, true_pin)), dataset)
    accs, rows = [], []
    for pin in pins:
        values = unlock(vault, pin)
        acc = evaluate_accuracy(install(model, vault.coords, values), dataset)
        accs.append(acc)
        rows.append({"pin": pin.digits, "accuracy": acc,
                     "values_min": min(values) if values else None,
                     "values_max": max(values) if values else None})
    rep = AttackReport(len(pins), accs, premium, float(min(accs)), float(np.mean(accs)), rows=rows)
    if premium is not None:
        # degradation = premium - attacker accuracy; "min" is the attacker's best PIN
        rep.min_degradation = float(premium - max(accs))
        rep.mean_degradation = float(premium - np.mean(accs))
    return rep


def sign_test_pvalue(n_positive: int, n_negative: int) -> float:
    """One-sided sign test: P(X >= n_positive) for X ~ Binomial(n, 1/2), ties dropped."""
    n = n_positive + n_negative
    return sum(math.comb(n, i) for i in range(n_positive, n + 1)) / 2 ** n
