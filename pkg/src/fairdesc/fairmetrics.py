"""Verification metrics and attribute-leakage probing.

Scoring is plain cosine similarity between descriptor rows (each row is its
own template).  ROC curves are built by exhaustive threshold placement over
the distinct scores with an accept-if-score>=threshold convention, and
TPR@FPR reads the curve with a conservative step convention: the TPR at the
largest achievable FPR that does not exceed the target (no interpolation).

Bias is the absolute difference between two designated groups' TPRs at a
fixed FPR; with three or more groups the population standard deviation of
the group TPRs is reported as well.  The trade-off coefficient

    (bias - bias_deb) / bias  -  (tpr - tpr_deb) / tpr

is 0 for an unchanged system, positive when bias falls faster than TPR, and
undefined (never silently 0) when the baseline bias or TPR is 0.

Leakage is measured by training a fresh selu MLP probe (128/64 hidden units)
on descriptors with identity-disjoint train/test splits and reporting its
held-out attribute accuracy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import nnkernel as nn
from .dataio import DescriptorSet
from .errors import BpcUndefinedError, ProtocolError, ScoringError
from .passcore import one_hot

PROBE_HIDDEN = (128, 64)


# ---------------------------------------------------------------------------
# Pairs
# ---------------------------------------------------------------------------


@dataclass
class PairList:
    """Verification protocol: row-index pairs with genuine flags.

    ``group`` tags a pair whose two endpoints share an attribute category
    (e.g. both category 1 of some attribute); untagged pairs use "".
    """

    i: np.ndarray
    j: np.ndarray
    genuine: np.ndarray
    group: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.i = np.asarray(self.i, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)
        self.genuine = np.asarray(self.genuine, dtype=bool)
        if not self.group:
            self.group = [""] * len(self.i)
        if not (len(self.i) == len(self.j) == len(self.genuine) == len(self.group)):
            raise ProtocolError("pair list arrays have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.i)


def make_pairs(
    ds: DescriptorSet,
    n_genuine: int,
    n_impostor: int,
    seed: int = 0,
    group_attribute: str | None = None,
) -> PairList:
    """Sample a verification protocol from a labeled descriptor set.

    Genuine pairs draw two distinct rows of one identity; impostor pairs draw
    rows of two different identities.  When group_attribute is given, pairs
    whose endpoints share that attribute's category are tagged with it.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9A125]))
    ids = ds.identity_labels
    rows_by_id = {int(g): np.flatnonzero(ids == g) for g in np.unique(ids)}
    eligible = [g for g, rows in rows_by_id.items() if len(rows) >= 2]
    if n_genuine > 0 and not eligible:
        raise ProtocolError("no identity has two or more rows; cannot draw genuine pairs")
    if n_impostor > 0 and len(rows_by_id) < 2:
        raise ProtocolError("need at least two identities for impostor pairs")
    i_idx: list[int] = []
    j_idx: list[int] = []
    flags: list[bool] = []
    for _ in range(n_genuine):
        g = eligible[int(rng.integers(0, len(eligible)))]
        a, b = rng.choice(rows_by_id[g], size=2, replace=False)
        i_idx.append(int(a))
        j_idx.append(int(b))
        flags.append(True)
    for _ in range(n_impostor):
        a = int(rng.integers(0, ds.n_rows))
        b = int(rng.integers(0, ds.n_rows))
        while ids[a] == ids[b]:
            b = int(rng.integers(0, ds.n_rows))
        i_idx.append(a)
        j_idx.append(b)
        flags.append(False)
    groups = [""] * (n_genuine + n_impostor)
    if group_attribute is not None:
        labels = ds.attribute(group_attribute).labels
        ii = np.array(i_idx, dtype=np.int64)
        jj = np.array(j_idx, dtype=np.int64)
        same = labels[ii] == labels[jj]
        groups = [
            str(int(labels[a])) if s else ""
            for a, s in zip(ii, same)
        ]
    return PairList(np.array(i_idx), np.array(j_idx), np.array(flags), groups)


def write_pairs_csv(pairs: PairList, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "genuine", "group"])
        for a, b, g, tag in zip(pairs.i, pairs.j, pairs.genuine, pairs.group):
            writer.writerow([int(a), int(b), int(g), tag])


def read_pairs_csv(path: str) -> PairList:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["i", "j", "genuine", "group"]:
        raise ProtocolError("pair CSV must have header i,j,genuine,group")
    body = rows[1:]
    if not body:
        raise ProtocolError("pair CSV has no pairs")
    try:
        i = np.array([int(r[0]) for r in body])
        j = np.array([int(r[1]) for r in body])
        genuine = np.array([bool(int(r[2])) for r in body])
        group = [r[3] for r in body]
    except (ValueError, IndexError) as exc:
        raise ProtocolError(f"malformed pair CSV row: {exc}") from exc
    return PairList(i, j, genuine, group)


# ---------------------------------------------------------------------------
# Scores and ROC
# ---------------------------------------------------------------------------


def _as_features(data: DescriptorSet | np.ndarray) -> np.ndarray:
    if isinstance(data, DescriptorSet):
        return np.asarray(data.features, dtype=np.float64)
    return np.asarray(data, dtype=np.float64)


def cosine_scores(data: DescriptorSet | np.ndarray, pairs: PairList) -> np.ndarray:
    """dot(u, v) / (|u| |v|) for every pair, in [-1, 1]."""
    x = _as_features(data)
    if len(pairs) == 0:
        raise ProtocolError("empty pair list")
    if pairs.i.max() >= x.shape[0] or pairs.j.max() >= x.shape[0]:
        raise ProtocolError("pair indices exceed the descriptor row count")
    referenced = np.unique(np.concatenate([pairs.i, pairs.j]))
    norms = np.linalg.norm(x[referenced], axis=1)
    bad = referenced[norms == 0.0]
    if bad.size:
        raise ScoringError(f"zero-norm descriptor row {int(bad[0])}")
    u = x[pairs.i]
    v = x[pairs.j]
    return np.sum(u * v, axis=1) / (
        np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    )


@dataclass
class RocCurve:
    """Threshold sweep: thresholds descending, rates non-decreasing.

    The leading sentinel threshold +inf contributes the (fpr 0, tpr 0) point;
    the final threshold (the minimum score) accepts everything, so (1, 1) is
    always reachable.
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray


def roc(scores: np.ndarray, genuine: np.ndarray) -> RocCurve:
    """Exhaustive ROC over all distinct score thresholds (accept when
    score >= threshold); counting only, nothing interpolated."""
    scores = np.asarray(scores, dtype=np.float64)
    genuine = np.asarray(genuine, dtype=bool)
    if scores.shape != genuine.shape or scores.ndim != 1:
        raise ProtocolError("scores and genuine flags must be equal-length vectors")
    n_gen = int(genuine.sum())
    n_imp = int((~genuine).sum())
    if n_gen == 0 or n_imp == 0:
        raise ProtocolError("need at least one genuine and one impostor pair")
    gen_sorted = np.sort(scores[genuine])
    imp_sorted = np.sort(scores[~genuine])
    thresholds = np.concatenate(([np.inf], np.unique(scores)[::-1]))
    tpr = (n_gen - np.searchsorted(gen_sorted, thresholds, side="left")) / n_gen
    fpr = (n_imp - np.searchsorted(imp_sorted, thresholds, side="left")) / n_imp
    return RocCurve(thresholds, fpr, tpr)


def tpr_at_fpr(curve: RocCurve, target_fpr: float) -> float:
    """TPR at the largest achievable FPR <= target (conservative step)."""
    if not 0.0 < target_fpr <= 1.0:
        raise ProtocolError(f"target FPR {target_fpr} outside (0, 1]")
    idx = int(np.searchsorted(curve.fpr, target_fpr, side="right")) - 1
    return float(curve.tpr[idx])


# ---------------------------------------------------------------------------
# Scalar fairness metrics
# ---------------------------------------------------------------------------


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ProtocolError(f"{name} must lie in [0, 1], got {value}")


def bias(tpr_g1: float, tpr_g2: float) -> float:
    """Absolute difference of two group TPRs at a common FPR."""
    _check_unit("tpr_g1", tpr_g1)
    _check_unit("tpr_g2", tpr_g2)
    return abs(tpr_g1 - tpr_g2)


def bpc(bias_base: float, bias_deb: float, tpr_base: float, tpr_deb: float) -> float:
    """Fractional bias reduction minus fractional TPR drop."""
    for name, value in (
        ("bias_base", bias_base),
        ("bias_deb", bias_deb),
        ("tpr_base", tpr_base),
        ("tpr_deb", tpr_deb),
    ):
        _check_unit(name, value)
    if bias_base <= 0.0:
        raise BpcUndefinedError("baseline bias is 0; trade-off coefficient undefined")
    if tpr_base <= 0.0:
        raise BpcUndefinedError("baseline TPR is 0; trade-off coefficient undefined")
    return (bias_base - bias_deb) / bias_base - (tpr_base - tpr_deb) / tpr_base


def group_tpr_std(tprs: list[float] | np.ndarray) -> float:
    """Population standard deviation of group TPRs (divide by n)."""
    values = np.asarray(tprs, dtype=np.float64)
    if values.size < 2:
        raise ProtocolError("group TPR spread needs at least two groups")
    for v in values:
        _check_unit("tpr", float(v))
    return float(np.std(values))


# ---------------------------------------------------------------------------
# Leakage probe
# ---------------------------------------------------------------------------


@dataclass
class ProbeConfig:
    iterations: int = 5000
    learning_rate: float = 1e-3
    batch_size: int = 256
    seed: int = 0
    hidden: tuple[int, ...] = PROBE_HIDDEN


@dataclass
class ProbeReport:
    attribute: str
    n_categories: int
    train_size: int
    test_size: int
    accuracy: float
    per_class_accuracy: list[float | None]
    architecture: str
    iterations: int
    learning_rate: float
    batch_size: int
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def leakage_probe(
    train_set: DescriptorSet,
    test_set: DescriptorSet,
    attribute: str,
    config: ProbeConfig | None = None,
) -> ProbeReport:
    """Train a fresh MLP probe on train features and report held-out accuracy.

    The probe is never part of any trained model; it only measures how much
    attribute signal survives in the descriptors.  Train and test identity
    sets must be disjoint, otherwise the probe could shortcut through
    identity memorization.
    """
    config = config or ProbeConfig()
    train_col = train_set.attribute(attribute)
    test_col = test_set.attribute(attribute)
    if train_col.n_categories != test_col.n_categories:
        raise ProtocolError(
            f"attribute {attribute!r} declares different category counts "
            "in train and test"
        )
    if train_set.dim != test_set.dim:
        raise ProtocolError("train and test descriptor dimensions differ")
    overlap = np.intersect1d(train_set.identity_labels, test_set.identity_labels)
    if overlap.size:
        raise ProtocolError(
            f"train and test share {overlap.size} identities; splits must be disjoint"
        )
    n_att = train_col.n_categories
    missing = sorted(set(range(n_att)) - set(int(c) for c in np.unique(train_col.labels)))
    if missing:
        raise ProtocolError(f"categories {missing} absent from the probe train split")

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x9B0BE]))
    sizes = [train_set.dim, *config.hidden, n_att]
    activations = ["selu"] * len(config.hidden) + ["softmax"]
    probe = nn.new_mlp(sizes, activations, rng)

    x_train = np.asarray(train_set.features, dtype=np.float64)
    y_train = train_col.labels
    n_train = x_train.shape[0]
    for _ in range(config.iterations):
        rows = rng.integers(0, n_train, size=config.batch_size)
        probs, cache = nn.forward(probe, x_train[rows])
        _, dprobs = nn.softmax_cross_entropy(probs, one_hot(y_train[rows], n_att))
        grads = nn.backward(probe, cache, dprobs)
        probe = nn.sgd_step(probe, grads, config.learning_rate)

    x_test = np.asarray(test_set.features, dtype=np.float64)
    probs, _ = nn.forward(probe, x_test)
    predicted = np.argmax(probs, axis=1)
    correct = predicted == test_col.labels
    per_class: list[float | None] = []
    for c in range(n_att):
        mask = test_col.labels == c
        per_class.append(float(np.mean(correct[mask])) if mask.any() else None)
    hidden_desc = "-".join(str(h) for h in config.hidden)
    return ProbeReport(
        attribute=attribute,
        n_categories=n_att,
        train_size=n_train,
        test_size=x_test.shape[0],
        accuracy=float(np.mean(correct)),
        per_class_accuracy=per_class,
        architecture=f"mlp[{hidden_desc}] selu hidden, softmax head",
        iterations=config.iterations,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# Full evaluation
# ---------------------------------------------------------------------------


@dataclass
class FprEntry:
    fpr: float
    tpr_overall: float
    group_tpr: dict[str, float]
    bias: float | None
    std: float | None


@dataclass
class BiasReport:
    bias_groups: tuple[str, str] | None
    entries: list[FprEntry]

    def entry(self, fpr: float) -> FprEntry:
        for e in self.entries:
            if e.fpr == fpr:
                return e
        raise ProtocolError(f"report has no entry for FPR {fpr}")

    def to_dict(self) -> dict:
        return {
            "bias_groups": list(self.bias_groups) if self.bias_groups else None,
            "per_fpr": [
                {
                    "fpr": e.fpr,
                    "tpr_overall": e.tpr_overall,
                    "group_tpr": e.group_tpr,
                    "bias": e.bias,
                    "std": e.std,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BiasReport":
        groups = data.get("bias_groups")
        return cls(
            tuple(groups) if groups else None,
            [
                FprEntry(
                    d["fpr"], d["tpr_overall"], dict(d["group_tpr"]), d["bias"], d["std"]
                )
                for d in data["per_fpr"]
            ],
        )


@dataclass
class BpcEntry:
    fpr: float
    bias_base: float
    bias_deb: float
    tpr_base: float
    tpr_deb: float
    bpc: float | None  # None when the baseline bias or TPR is 0


@dataclass
class BpcReport:
    entries: list[BpcEntry]

    def entry(self, fpr: float) -> BpcEntry:
        for e in self.entries:
            if e.fpr == fpr:
                return e
        raise ProtocolError(f"report has no entry for FPR {fpr}")

    def to_dict(self) -> dict:
        return {
            "per_fpr": [
                {
                    "fpr": e.fpr,
                    "bias_base": e.bias_base,
                    "bias_deb": e.bias_deb,
                    "tpr_base": e.tpr_base,
                    "tpr_deb": e.tpr_deb,
                    "bpc": e.bpc,
                }
                for e in self.entries
            ]
        }


def evaluate(
    data: DescriptorSet | np.ndarray,
    pairs: PairList,
    fprs: list[float],
    baseline: BiasReport | None = None,
    bias_groups: tuple[str, str] | None = None,
) -> tuple[BiasReport, BpcReport | None]:
    """Overall and group-wise TPR at each requested FPR, plus bias metrics.

    Group TPRs come from separate ROC curves over the group-tagged pairs
    only.  ``bias_groups`` designates the two groups whose TPR difference is
    the bias; by default the first and last group in sorted order.  Supplying
    a baseline report additionally yields the trade-off coefficients.
    """
    if not fprs:
        raise ProtocolError("at least one target FPR required")
    scores = cosine_scores(data, pairs)
    overall = roc(scores, pairs.genuine)
    group_names = sorted({g for g in pairs.group if g})
    if bias_groups is not None:
        absent = [g for g in bias_groups if g not in group_names]
        if absent:
            raise ProtocolError(f"designated groups absent from pairs: {absent}")
    elif len(group_names) >= 2:
        bias_groups = (group_names[0], group_names[-1])
    group_curves = {}
    for g in group_names:
        mask = np.array([tag == g for tag in pairs.group])
        try:
            group_curves[g] = roc(scores[mask], pairs.genuine[mask])
        except ProtocolError as exc:
            raise ProtocolError(
                f"group {g!r} lacks the pairs for its own curve: {exc}"
            ) from exc
    entries = []
    for f in fprs:
        group_tpr = {g: tpr_at_fpr(curve, f) for g, curve in group_curves.items()}
        bias_val = None
        if bias_groups is not None:
            bias_val = bias(group_tpr[bias_groups[0]], group_tpr[bias_groups[1]])
        std_val = None
        if len(group_names) >= 3:
            std_val = group_tpr_std([group_tpr[g] for g in group_names])
        entries.append(
            FprEntry(f, tpr_at_fpr(overall, f), group_tpr, bias_val, std_val)
        )
    report = BiasReport(bias_groups, entries)
    if baseline is None:
        return report, None
    bpc_entries = []
    for e in report.entries:
        base = baseline.entry(e.fpr)
        if base.bias is None or e.bias is None:
            raise ProtocolError(
                "trade-off coefficients need bias values in both reports"
            )
        try:
            value: float | None = bpc(base.bias, e.bias, base.tpr_overall, e.tpr_overall)
        except BpcUndefinedError:
            value = None
        bpc_entries.append(
            BpcEntry(e.fpr, base.bias, e.bias, base.tpr_overall, e.tpr_overall, value)
        )
    return report, BpcReport(bpc_entries)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def report_to_json(
    report: BiasReport, bpc_report: BpcReport | None = None, probe: ProbeReport | None = None
) -> str:
    payload: dict = {"bias_report": report.to_dict()}
    if bpc_report is not None:
        payload["bpc_report"] = bpc_report.to_dict()
    if probe is not None:
        payload["probe_report"] = probe.to_dict()
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def report_from_json(text: str) -> tuple[BiasReport, BpcReport | None]:
    payload = json.loads(text)
    report = BiasReport.from_dict(payload["bias_report"])
    bpc_report = None
    if "bpc_report" in payload:
        bpc_report = BpcReport(
            [
                BpcEntry(
                    d["fpr"], d["bias_base"], d["bias_deb"], d["tpr_base"],
                    d["tpr_deb"], d["bpc"],
                )
                for d in payload["bpc_report"]["per_fpr"]
            ]
        )
    return report, bpc_report


def report_to_csv_rows(
    report: BiasReport, bpc_report: BpcReport | None = None
) -> list[list[str]]:
    """Flat rows (fpr, metric, group, value), one metric per row."""
    rows = [["fpr", "metric", "group", "value"]]

    def fmt(v: float | None) -> str:
        return "" if v is None else repr(v)

    for e in report.entries:
        rows.append([repr(e.fpr), "tpr_overall", "", repr(e.tpr_overall)])
        for g in sorted(e.group_tpr):
            rows.append([repr(e.fpr), "tpr_group", g, repr(e.group_tpr[g])])
        rows.append([repr(e.fpr), "bias", "", fmt(e.bias)])
        rows.append([repr(e.fpr), "std", "", fmt(e.std)])
    if bpc_report is not None:
        for b in bpc_report.entries:
            rows.append([repr(b.fpr), "bpc", "", fmt(b.bpc)])
    return rows


def write_report_csv(
    path: str, report: BiasReport, bpc_report: BpcReport | None = None
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerows(report_to_csv_rows(report, bpc_report))
