"""Adversarial attribute-suppression models and their four-stage training.

The model family: a generator maps input descriptors to a lower-dimensional
representation, an identity classifier keeps the representation useful for
recognition, and one or two ensembles of attribute discriminators are trained
against the generator.  Training alternates

    stage 1  train generator + classifier on identity cross-entropy (once)
    stage 2  (re)initialize and train every discriminator (every T_ep episodes)
    stage 3  update generator + classifier with the combined loss that pushes
             the strongest discriminator toward uniform output
    stage 4  train the scheduled discriminator member(s) until they recover
             validation accuracy A_star or T_plat iterations elapse

Discriminator schedules: "oat" trains member ``episode mod K`` per episode
and freezes the rest; "aet" trains every member every episode.

Every random draw comes from a purpose-keyed stream derived from the config
seed, so runs are bit-reproducible and structurally-equivalent runs (e.g. a
two-attribute run whose second attribute is a single category) consume
identical streams for the shared parts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import nnkernel as nn
from .binio import ByteReader
from .dataio import DescriptorSet, _grouped_split_indices
from .errors import (
    BadMagicError,
    ConfigError,
    FormatError,
    IoError,
    LabelError,
    ShapeError,
    VersionError,
)

MODEL_MAGIC = b"PASSMODL"
MODEL_VERSION = 1

SCHEDULES = ("oat", "aet")
DISCRIMINATOR_HIDDEN = (128, 64)

# Purpose tags for the seeded RNG streams.
_P_INIT_MC = 1
_P_STAGE1 = 2
_P_EINIT = 3
_P_STAGE2 = 4
_P_STAGE3 = 5
_P_STAGE4 = 6
_P_VALSPLIT = 7

_SLOT_TAGS = ("_a", "_b")


def _stream(seed: int, purpose: int, slot: int = 0, episode: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, slot, episode]))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class PassConfig:
    """Every knob of the alternating training loop.

    The ``*_a`` / ``*_b`` fields override their single-attribute counterpart
    per ensemble in two-attribute runs; left at None they fall back to it.
    """

    lambda_: float = 10.0
    K: int = 3
    T_fc: int = 10000
    T_deb: int = 1200
    T_atrain: int = 30000
    T_plat: int = 2000
    T_ep: int = 40
    N_ep: int = 120
    A_star: float = 0.95
    alpha1: float = 1e-2
    alpha2: float = 1e-3
    alpha3: float = 1e-4
    batch_size: int = 400
    seed: int = 0
    out_dim: int = 256
    schedule: str = "oat"
    val_fraction: float = 0.1
    check_every: int = 50
    lambda_a: float | None = None
    lambda_b: float | None = None
    K_a: int | None = None
    K_b: int | None = None
    T_atrain_a: int | None = None
    T_atrain_b: int | None = None
    A_star_1: float | None = None
    A_star_2: float | None = None

    def validate(self) -> None:
        counters = {
            "T_fc": self.T_fc,
            "T_deb": self.T_deb,
            "T_atrain": self.T_atrain,
            "T_plat": self.T_plat,
            "T_ep": self.T_ep,
            "check_every": self.check_every,
            "batch_size": self.batch_size,
            "out_dim": self.out_dim,
        }
        for name, value in counters.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        for name in ("T_atrain_a", "T_atrain_b", "K_a", "K_b"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.N_ep < 0:
            raise ConfigError(f"N_ep must be >= 0, got {self.N_ep}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        for name in ("alpha1", "alpha2", "alpha3"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("lambda_", "lambda_a", "lambda_b"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("A_star", "A_star_1", "A_star_2"):
            value = getattr(self, name)
            if value is not None and not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    # Per-ensemble accessors (slot 0 = attribute a, slot 1 = attribute b).
    def lambda_for(self, slot: int) -> float:
        value = (self.lambda_a, self.lambda_b)[slot]
        return self.lambda_ if value is None else value

    def k_for(self, slot: int) -> int:
        value = (self.K_a, self.K_b)[slot]
        return self.K if value is None else value

    def t_atrain_for(self, slot: int) -> int:
        value = (self.T_atrain_a, self.T_atrain_b)[slot]
        return self.T_atrain if value is None else value

    def a_star_for(self, slot: int) -> float:
        value = (self.A_star_1, self.A_star_2)[slot]
        return self.A_star if value is None else value

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            key = "lambda" if f.name == "lambda_" else f.name
            out[key] = getattr(self, f.name)
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "PassConfig":
        known = {("lambda" if f.name == "lambda_" else f.name): f.name for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
            kwargs[known[key]] = value
        config = cls(**kwargs)
        config.validate()
        return config


# ---------------------------------------------------------------------------
# Model components
# ---------------------------------------------------------------------------


@dataclass
class Generator:
    """Single prelu-activated linear layer mapping descriptors down."""

    mlp: nn.Mlp


@dataclass
class IdentityClassifier:
    """Softmax linear head over identities."""

    mlp: nn.Mlp


@dataclass
class Discriminator:
    """Attribute classifier: selu hidden stack plus softmax head."""

    mlp: nn.Mlp


@dataclass
class Ensemble:
    members: list[Discriminator]
    schedule: str = "oat"
    episode_counter: int = 0
    attribute: str = ""
    n_categories: int = 0

    @property
    def k(self) -> int:
        return len(self.members)


@dataclass
class PassModel:
    generator: Generator
    classifier: IdentityClassifier
    ensembles: list[Ensemble]
    config: PassConfig
    input_dim: int
    n_identities: int


def new_generator(input_dim: int, out_dim: int, rng: np.random.Generator) -> Generator:
    return Generator(nn.new_mlp([input_dim, out_dim], ["prelu"], rng))


def new_classifier(in_dim: int, n_identities: int, rng: np.random.Generator) -> IdentityClassifier:
    return IdentityClassifier(nn.new_mlp([in_dim, n_identities], ["softmax"], rng))


def new_discriminator(
    in_dim: int,
    n_categories: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = DISCRIMINATOR_HIDDEN,
) -> Discriminator:
    sizes = [in_dim, *hidden, n_categories]
    activations = ["selu"] * len(hidden) + ["softmax"]
    return Discriminator(nn.new_mlp(sizes, activations, rng))


def new_ensemble(
    k: int,
    in_dim: int,
    n_categories: int,
    rng: np.random.Generator,
    schedule: str = "oat",
    attribute: str = "",
    hidden: tuple[int, ...] = DISCRIMINATOR_HIDDEN,
) -> Ensemble:
    members = [new_discriminator(in_dim, n_categories, rng, hidden) for _ in range(k)]
    return Ensemble(members, schedule, 0, attribute, n_categories)


def clone_model(model: PassModel) -> PassModel:
    return PassModel(
        Generator(nn.clone_mlp(model.generator.mlp)),
        IdentityClassifier(nn.clone_mlp(model.classifier.mlp)),
        [
            Ensemble(
                [Discriminator(nn.clone_mlp(m.mlp)) for m in e.members],
                e.schedule,
                e.episode_counter,
                e.attribute,
                e.n_categories,
            )
            for e in model.ensembles
        ],
        model.config,
        model.input_dim,
        model.n_identities,
    )


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"label outside [0, {n_classes})")
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def transform(generator: Generator, f_in: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Map input descriptors through the generator, in chunks."""
    f_in = np.asarray(f_in, dtype=np.float64)
    if f_in.ndim != 2 or f_in.shape[1] != generator.mlp.in_size:
        raise ShapeError(
            f"input has shape {f_in.shape}, generator expects "
            f"[B, {generator.mlp.in_size}]"
        )
    outputs = []
    for start in range(0, f_in.shape[0], chunk):
        out, _ = nn.forward(generator.mlp, f_in[start : start + chunk])
        outputs.append(out)
    return np.concatenate(outputs, axis=0)


def _class_terms(
    classifier: IdentityClassifier, f_out: np.ndarray, y_id: np.ndarray
) -> tuple[float, nn.Gradients, np.ndarray]:
    """Identity cross-entropy from an already-transformed batch.

    Returns (loss, classifier grads, d loss / d f_out).
    """
    probs, cache = nn.forward(classifier.mlp, f_out)
    loss, dprobs = nn.softmax_cross_entropy(probs, y_id)
    grads = nn.backward(classifier.mlp, cache, dprobs)
    dfout = nn.input_gradient(classifier.mlp, cache, dprobs)
    return loss, grads, dfout


def loss_class(
    generator: Generator,
    classifier: IdentityClassifier,
    f_in: np.ndarray,
    y_id: np.ndarray,
) -> tuple[float, nn.Gradients, nn.Gradients]:
    """Identity loss with gradients for both the generator and the classifier."""
    f_out, gcache = nn.forward(generator.mlp, f_in)
    loss, cls_grads, dfout = _class_terms(classifier, f_out, y_id)
    gen_grads = nn.backward(generator.mlp, gcache, dfout)
    return loss, gen_grads, cls_grads


def loss_att_member(
    member: Discriminator, f_out: np.ndarray, y_att: np.ndarray
) -> tuple[float, nn.Gradients]:
    """One member's attribute cross-entropy and its parameter gradients."""
    probs, cache = nn.forward(member.mlp, f_out)
    loss, dprobs = nn.softmax_cross_entropy(probs, y_att)
    return loss, nn.backward(member.mlp, cache, dprobs)


def loss_att(
    ensemble: Ensemble, f_out: np.ndarray, y_att: np.ndarray
) -> tuple[float, list[nn.Gradients]]:
    """Sum of member cross-entropies; gradients per member (generator frozen)."""
    total = 0.0
    grads = []
    for member in ensemble.members:
        loss, g = loss_att_member(member, f_out, y_att)
        total += loss
        grads.append(g)
    return total, grads


def _uniform_target(batch: int, n_categories: int) -> np.ndarray:
    return np.full((batch, n_categories), 1.0 / n_categories)


def loss_adv_member(member: Discriminator, f_out: np.ndarray) -> float:
    """Batch-mean cross-entropy against the uniform distribution.

    Minimized (at ln n_categories) exactly when the member outputs uniform
    probabilities, i.e. when it can no longer read the attribute.
    """
    probs, _ = nn.forward(member.mlp, f_out)
    loss, _ = nn.softmax_cross_entropy(probs, _uniform_target(*probs.shape))
    return loss


def _deb_terms(ensemble: Ensemble, f_out: np.ndarray) -> tuple[float, np.ndarray, int]:
    """Max member adversarial loss, its f_out gradient, and the argmax index.

    Ties break toward the lowest member index.  Only the selected member is
    backpropagated through; member parameters receive no gradient here.
    """
    if not ensemble.members:
        raise ShapeError("ensemble has no members")
    losses = []
    caches = []
    for member in ensemble.members:
        probs, cache = nn.forward(member.mlp, f_out)
        loss, dprobs = nn.softmax_cross_entropy(probs, _uniform_target(*probs.shape))
        losses.append(loss)
        caches.append((member, cache, dprobs))
    idx = int(np.argmax(losses))
    member, cache, dprobs = caches[idx]
    dfout = nn.input_gradient(member.mlp, cache, dprobs)
    return losses[idx], dfout, idx


def loss_deb(
    generator: Generator, ensemble: Ensemble, f_in: np.ndarray
) -> tuple[float, nn.Gradients, int]:
    """Debias loss: the strongest member's adversarial loss, differentiated
    with respect to the generator only."""
    f_out, gcache = nn.forward(generator.mlp, f_in)
    loss, dfout, idx = _deb_terms(ensemble, f_out)
    return loss, nn.backward(generator.mlp, gcache, dfout), idx


@dataclass
class BrTerms:
    """Combined bias-reducing loss and the gradients each stage-3 update uses."""

    total: float
    class_loss: float
    deb_losses: list[float]
    deb_member_indices: list[int]
    gen_grads: nn.Gradients
    cls_grads: nn.Gradients


def loss_br(model: PassModel, f_in: np.ndarray, y_id: np.ndarray) -> BrTerms:
    """Identity loss plus the weighted debias loss of each ensemble.

    The classifier gradient carries the identity term only; the generator
    gradient carries everything.  Discriminator parameters are untouched.
    """
    f_out, gcache = nn.forward(model.generator.mlp, f_in)
    class_loss, cls_grads, dfout = _class_terms(model.classifier, f_out, y_id)
    total = class_loss
    deb_losses: list[float] = []
    deb_indices: list[int] = []
    for slot, ensemble in enumerate(model.ensembles):
        lam = model.config.lambda_for(slot)
        deb, deb_dfout, idx = _deb_terms(ensemble, f_out)
        deb_losses.append(deb)
        deb_indices.append(idx)
        total = total + lam * deb
        dfout = dfout + lam * deb_dfout
    gen_grads = nn.backward(model.generator.mlp, gcache, dfout)
    return BrTerms(total, class_loss, deb_losses, deb_indices, gen_grads, cls_grads)


def select_members(schedule: str, episode: int, k: int) -> list[int]:
    """Stage-4 member choice: oat -> [episode mod k], aet -> all members."""
    if schedule not in SCHEDULES:
        raise ConfigError(f"schedule must be one of {SCHEDULES}")
    if episode < 0 or k < 1:
        raise ConfigError("episode must be >= 0 and k >= 1")
    if schedule == "oat":
        return [episode % k]
    return list(range(k))


# ---------------------------------------------------------------------------
# Training log
# ---------------------------------------------------------------------------


@dataclass
class TrainRecord:
    episode: int
    stage: int
    iteration: int
    loss_name: str
    value: float
    member_index: int = -1
    val_acc: float = float("nan")


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    def add(
        self,
        episode: int,
        stage: int,
        iteration: int,
        loss_name: str,
        value: float,
        member_index: int = -1,
        val_acc: float = float("nan"),
    ) -> None:
        self.records.append(
            TrainRecord(episode, stage, iteration, loss_name, value, member_index, val_acc)
        )

    def named(self, loss_name: str) -> list[TrainRecord]:
        return [r for r in self.records if r.loss_name == loss_name]

    def stage4_member_sequence(self, slot_tag: str = "") -> list[int]:
        """Selected member per episode, in episode order (oat diagnostics)."""
        return [
            r.member_index
            for r in self.records
            if r.loss_name == f"member_selected{slot_tag}"
        ]

    def reinit_episodes(self, slot_tag: str = "") -> list[int]:
        return [r.episode for r in self.records if r.loss_name == f"reinit{slot_tag}"]

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("episode,stage,iter,loss_name,value,member_index,val_acc\n")
            for r in self.records:
                val = "" if np.isnan(r.val_acc) else repr(r.val_acc)
                fh.write(
                    f"{r.episode},{r.stage},{r.iteration},{r.loss_name},"
                    f"{r.value!r},{r.member_index},{val}\n"
                )


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

TrainCallback = Callable[[str, int, PassModel], None]


def _slot_tag(slot: int, n_slots: int) -> str:
    return "" if n_slots == 1 else _SLOT_TAGS[slot]


def _member_accuracy(member: Discriminator, f_out: np.ndarray, labels: np.ndarray) -> float:
    probs, _ = nn.forward(member.mlp, f_out)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def train_pass(
    data: DescriptorSet,
    config: PassConfig,
    attribute: str | None = None,
    callback: TrainCallback | None = None,
) -> tuple[PassModel, TrainLog]:
    """Single-attribute training; see the module docstring for the stages."""
    if attribute is None:
        if len(data.attributes) != 1:
            raise ConfigError(
                "attribute must be named when the data carries "
                f"{len(data.attributes)} attribute columns"
            )
        attribute = next(iter(data.attributes))
    return _train(data, config, [attribute], callback)


def train_multipass(
    data: DescriptorSet,
    config: PassConfig,
    attribute_a: str | None = None,
    attribute_b: str | None = None,
    callback: TrainCallback | None = None,
) -> tuple[PassModel, TrainLog]:
    """Two-attribute training with one discriminator ensemble per attribute."""
    if attribute_a is None or attribute_b is None:
        names = list(data.attributes)
        if len(names) != 2:
            raise ConfigError(
                "attribute_a and attribute_b must be named when the data "
                f"carries {len(names)} attribute columns"
            )
        attribute_a, attribute_b = names
    if attribute_a == attribute_b:
        raise ConfigError("the two target attributes must differ")
    return _train(data, config, [attribute_a, attribute_b], callback)


def _train(
    data: DescriptorSet,
    config: PassConfig,
    targets: list[str],
    callback: TrainCallback | None,
) -> tuple[PassModel, TrainLog]:
    config.validate()
    for name in targets:
        if name not in data.attributes:
            raise ConfigError(f"data has no attribute {name!r}")
    n_slots = len(targets)
    seed = config.seed
    log = TrainLog()

    features = np.asarray(data.features, dtype=np.float64)
    ids = data.identity_labels
    n_identities = int(ids.max()) + 1
    att_labels = [data.attribute(name).labels for name in targets]
    att_counts = [data.attribute(name).n_categories for name in targets]

    # Held-out rows for the stage-4 accuracy checks, stratified over the
    # joint target categories so every category is represented.
    key = att_labels[0].copy()
    for labels, count in zip(att_labels[1:], att_counts[1:]):
        key = key * count + labels
    val_rng = _stream(seed, _P_VALSPLIT)
    train_idx, val_idx = _grouped_split_indices(
        key, (1.0 - config.val_fraction, config.val_fraction), val_rng, by_group=False
    )
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ConfigError(
            f"val_fraction {config.val_fraction} leaves an empty inner split "
            f"on {data.n_rows} rows"
        )
    x_train = features[train_idx]
    x_val = features[val_idx]
    id_train = ids[train_idx]
    att_train = [labels[train_idx] for labels in att_labels]
    att_val = [labels[val_idx] for labels in att_labels]
    n_train = x_train.shape[0]
    batch = config.batch_size

    def snapshot(event: str, episode: int, model: PassModel) -> None:
        if callback is not None:
            callback(event, episode, clone_model(model))

    # Stage 1: identity training of generator and classifier, run once.
    init_rng = _stream(seed, _P_INIT_MC)
    generator = new_generator(data.dim, config.out_dim, init_rng)
    classifier = new_classifier(config.out_dim, n_identities, init_rng)
    ensembles = [
        Ensemble([], config.schedule, 0, targets[s], att_counts[s])
        for s in range(n_slots)
    ]
    model = PassModel(generator, classifier, ensembles, config, data.dim, n_identities)
    snapshot("stage1_start", 0, model)
    stage1_rng = _stream(seed, _P_STAGE1)
    for n in range(config.T_fc):
        rows = stage1_rng.integers(0, n_train, size=batch)
        y = one_hot(id_train[rows], n_identities)
        loss, gen_grads, cls_grads = loss_class(
            model.generator, model.classifier, x_train[rows], y
        )
        model.generator = Generator(
            nn.sgd_step(model.generator.mlp, gen_grads, config.alpha1)
        )
        model.classifier = IdentityClassifier(
            nn.sgd_step(model.classifier.mlp, cls_grads, config.alpha1)
        )
        log.add(0, 1, n, "loss_class", loss)
    snapshot("stage1_end", 0, model)

    for episode in range(config.N_ep):
        # Stage 2: rebuild and retrain every discriminator on schedule.
        if episode % config.T_ep == 0:
            snapshot("stage2_start", episode, model)
            for slot in range(n_slots):
                tag = _slot_tag(slot, n_slots)
                einit_rng = _stream(seed, _P_EINIT, slot, episode)
                model.ensembles[slot] = new_ensemble(
                    config.k_for(slot),
                    config.out_dim,
                    att_counts[slot],
                    einit_rng,
                    config.schedule,
                    targets[slot],
                )
                model.ensembles[slot].episode_counter = episode
                log.add(episode, 2, -1, f"reinit{tag}", 1.0)
                stage2_rng = _stream(seed, _P_STAGE2, slot, episode)
                for n in range(config.t_atrain_for(slot)):
                    rows = stage2_rng.integers(0, n_train, size=batch)
                    f_out = transform(model.generator, x_train[rows])
                    y = one_hot(att_train[slot][rows], att_counts[slot])
                    total, member_grads = loss_att(model.ensembles[slot], f_out, y)
                    model.ensembles[slot].members = [
                        Discriminator(nn.sgd_step(m.mlp, g, config.alpha2))
                        for m, g in zip(model.ensembles[slot].members, member_grads)
                    ]
                    log.add(episode, 2, n, f"loss_att{tag}", total)
            snapshot("stage2_end", episode, model)

        # Stage 3: update generator and classifier against the ensembles.
        snapshot("stage3_start", episode, model)
        stage3_rng = _stream(seed, _P_STAGE3, 0, episode)
        for n in range(config.T_deb):
            rows = stage3_rng.integers(0, n_train, size=batch)
            y = one_hot(id_train[rows], n_identities)
            terms = loss_br(model, x_train[rows], y)
            model.generator = Generator(
                nn.sgd_step(model.generator.mlp, terms.gen_grads, config.alpha3)
            )
            model.classifier = IdentityClassifier(
                nn.sgd_step(model.classifier.mlp, terms.cls_grads, config.alpha3)
            )
            log.add(episode, 3, n, "loss_class", terms.class_loss)
            for slot in range(n_slots):
                tag = _slot_tag(slot, n_slots)
                log.add(
                    episode,
                    3,
                    n,
                    f"loss_deb{tag}",
                    terms.deb_losses[slot],
                    member_index=terms.deb_member_indices[slot],
                )
            log.add(episode, 3, n, "loss_br", terms.total)
        snapshot("stage3_end", episode, model)

        # Stage 4: train the scheduled member(s) until they recover accuracy.
        snapshot("stage4_start", episode, model)
        selected = [
            select_members(config.schedule, episode, config.k_for(slot))
            for slot in range(n_slots)
        ]
        for slot in range(n_slots):
            tag = _slot_tag(slot, n_slots)
            for k in selected[slot]:
                log.add(episode, 4, -1, f"member_selected{tag}", 1.0, member_index=k)
        f_out_val = transform(model.generator, x_val)
        stage4_rngs = [
            _stream(seed, _P_STAGE4, slot, episode) for slot in range(n_slots)
        ]
        for n in range(config.T_plat):
            if n % config.check_every == 0:
                all_recovered = True
                for slot in range(n_slots):
                    tag = _slot_tag(slot, n_slots)
                    accs = []
                    for k in selected[slot]:
                        acc = _member_accuracy(
                            model.ensembles[slot].members[k], f_out_val, att_val[slot]
                        )
                        accs.append(acc)
                        log.add(
                            episode, 4, n, f"val_acc{tag}", acc,
                            member_index=k, val_acc=acc,
                        )
                    if not min(accs) > config.a_star_for(slot):
                        all_recovered = False
                if all_recovered:
                    break
            for slot in range(n_slots):
                tag = _slot_tag(slot, n_slots)
                rows = stage4_rngs[slot].integers(0, n_train, size=batch)
                f_out = transform(model.generator, x_train[rows])
                y = one_hot(att_train[slot][rows], att_counts[slot])
                ensemble = model.ensembles[slot]
                for k in selected[slot]:
                    loss, grads = loss_att_member(ensemble.members[k], f_out, y)
                    ensemble.members[k] = Discriminator(
                        nn.sgd_step(ensemble.members[k].mlp, grads, config.alpha2)
                    )
                    log.add(episode, 4, n, f"loss_att_member{tag}", loss, member_index=k)
        for ensemble in model.ensembles:
            ensemble.episode_counter = episode + 1
        snapshot("stage4_end", episode, model)

    return model, log


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

_ACT_CODES = {"identity": 0, "prelu": 1, "selu": 2, "softmax": 3}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def _mlp_bytes(mlp: nn.Mlp) -> bytes:
    parts = [struct.pack("<I", len(mlp.layers))]
    for layer in mlp.layers:
        parts.append(
            struct.pack(
                "<IIB", layer.in_size, layer.out_size, _ACT_CODES[layer.activation]
            )
        )
        if layer.activation == "prelu":
            parts.append(layer.alpha.astype("<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(layer.bias.astype("<f8").tobytes())
    return b"".join(parts)


def _mlp_from_reader(r: ByteReader) -> nn.Mlp:
    (n_layers,) = r.unpack("<I")
    layers = []
    for _ in range(n_layers):
        in_size, out_size, code = r.unpack("<IIB")
        if code not in _ACT_NAMES:
            raise FormatError(f"unknown activation code {code}")
        activation = _ACT_NAMES[code]
        alpha = None
        if activation == "prelu":
            alpha = np.frombuffer(r.read(8 * out_size), dtype="<f8").copy()
        weights = (
            np.frombuffer(r.read(8 * out_size * in_size), dtype="<f8")
            .reshape(out_size, in_size)
            .copy()
        )
        bias = np.frombuffer(r.read(8 * out_size), dtype="<f8").copy()
        layers.append(nn.DenseLayer(weights, bias, activation, alpha))
    mlp = nn.Mlp(layers)
    mlp.validate()
    return mlp


def save_model(model: PassModel, path: str) -> None:
    """Write the checkpoint: magic, version, then tagged component sections."""
    meta = {
        "input_dim": model.input_dim,
        "out_dim": model.generator.mlp.out_size,
        "n_identities": model.n_identities,
        "config": model.config.to_dict(),
        "ensembles": [
            {
                "attribute": e.attribute,
                "n_categories": e.n_categories,
                "k": e.k,
                "schedule": e.schedule,
                "episode_counter": e.episode_counter,
            }
            for e in model.ensembles
        ],
    }
    sections: list[tuple[str, bytes]] = [
        ("META", json.dumps(meta, sort_keys=True).encode("utf-8")),
        ("M", _mlp_bytes(model.generator.mlp)),
        ("C", _mlp_bytes(model.classifier.mlp)),
    ]
    for slot, ensemble in enumerate(model.ensembles):
        for k, member in enumerate(ensemble.members):
            sections.append((f"E{slot}.{k}", _mlp_bytes(member.mlp)))
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(sections))]
    for tag, payload in sections:
        raw = tag.encode("ascii")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_model(path: str) -> PassModel:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    r = ByteReader(data)
    magic = r.read(len(MODEL_MAGIC))
    if magic != MODEL_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    version, n_sections = r.unpack("<II")
    if version != MODEL_VERSION:
        raise VersionError(f"unsupported model version {version}")
    sections: dict[str, bytes] = {}
    for _ in range(n_sections):
        (tag_len,) = r.unpack("<H")
        tag = r.read(tag_len).decode("ascii")
        (payload_len,) = r.unpack("<Q")
        sections[tag] = r.read(payload_len)
    if not r.done():
        raise FormatError("trailing bytes after checkpoint payload")
    for required in ("META", "M", "C"):
        if required not in sections:
            raise FormatError(f"checkpoint missing section {required!r}")
    meta = json.loads(sections["META"].decode("utf-8"))
    config = PassConfig.from_dict(meta["config"])
    generator = Generator(_mlp_from_reader(ByteReader(sections["M"])))
    classifier = IdentityClassifier(_mlp_from_reader(ByteReader(sections["C"])))
    ensembles = []
    for slot, info in enumerate(meta["ensembles"]):
        members = []
        for k in range(info["k"]):
            tag = f"E{slot}.{k}"
            if tag not in sections:
                raise FormatError(f"checkpoint missing section {tag!r}")
            members.append(Discriminator(_mlp_from_reader(ByteReader(sections[tag]))))
        ensembles.append(
            Ensemble(
                members,
                info["schedule"],
                info["episode_counter"],
                info["attribute"],
                info["n_categories"],
            )
        )
    return PassModel(
        generator,
        classifier,
        ensembles,
        config,
        meta["input_dim"],
        meta["n_identities"],
    )
