"""Two-phase WGAN-GP training with a demographic-parity penalty.

Phase I trains for fidelity only. Phase II adds ``-lambda_f * (E[y|s=0] -
E[y|s=1])`` to the generator loss so that the generated favorable rate of the
underprivileged group is pulled towards the privileged group's.
"""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import autodiff as ad
from .autodiff import DimensionError, Node
from .nets import CriticParams, GeneratorParams, critic_forward, generator_forward, init_params
from .tabular import FittedTransformer, TableSchema, fit

log = logging.getLogger(__name__)

FAIRNESS_GUARD = 1e-8
DIVERGENCE_PATIENCE = 3


class TrainingDiverged(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    t1: int = 170
    t2: int = 30
    n_crit: int = 4
    batch_size: int = 256
    lambda_p: float = 10.0
    lambda_f: float = 0.5
    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    tau: float = 0.2
    output_distribution: str = "uniform"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.t1 < 0 or self.t2 < 0:
            problems.append("epoch counts must be >= 0")
        if self.n_crit < 1:
            problems.append("n_crit must be >= 1")
        if self.batch_size < 2:
            problems.append("batch_size must be >= 2")
        if self.lambda_p < 0 or self.lambda_f < 0:
            problems.append("lambda_p and lambda_f must be >= 0")
        if self.tau <= 0:
            problems.append("tau must be > 0")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    critic_loss: float
    gen_loss: float
    gp: float
    batch_ds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    COLUMNS = ("epoch", "phase", "critic_loss", "gen_loss", "gp", "batch_ds")

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=list(self.COLUMNS))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for r in self.records:
                writer.writerow([r.epoch, r.phase] + [repr(float(getattr(r, k))) for k in self.COLUMNS[2:]])

    @classmethod
    def from_csv(cls, path: str | Path) -> TrainLog:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        types = {f.name: f.type for f in fields(EpochRecord)}
        recs = []
        for row in rows:
            recs.append(
                EpochRecord(
                    epoch=int(row["epoch"]),
                    phase=row["phase"],
                    **{k: float(row[k]) for k in types if k not in ("epoch", "phase")},
                )
            )
        return cls(recs)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def interpolate(real: np.ndarray, fake: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """``eps * real + (1 - eps) * fake`` with one ``eps`` per row."""
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, 1)
    return eps * real + (1.0 - eps) * fake


def gradient_penalty(critic: CriticParams, points: np.ndarray) -> Node:
    """Mean over rows of ``(||grad_x C(x)||_2 - 1)^2``, differentiable in the critic weights."""
    x = ad.parameter(points)
    scores = critic_forward(x, critic)
    (gx,) = ad.grad(ad.sum(scores), [x], create_graph=True)
    return ad.mean(ad.square(ad.sub(ad.row_l2_norm(gx), 1.0)))


def _critic_terms(real, fake, critic, rng, lambda_p, eps):
    real = np.asarray(real.value if isinstance(real, Node) else real, dtype=np.float64)
    fake = np.asarray(fake.value if isinstance(fake, Node) else fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise DimensionError(f"critic_loss: real batch {real.shape} vs fake batch {fake.shape}")
    if eps is None:
        eps = rng.random((len(real), 1))
    gp = gradient_penalty(critic, interpolate(real, fake, eps))
    wasserstein = ad.sub(ad.mean(critic_forward(fake, critic)), ad.mean(critic_forward(real, critic)))
    return ad.add(wasserstein, ad.scale(gp, lambda_p)), gp


def critic_loss(real, fake, critic: CriticParams, rng: np.random.Generator | None = None, lambda_p: float = 10.0, eps=None) -> Node:
    """``mean C(fake) - mean C(real) + lambda_p * gradient penalty``.

    ``fake`` is treated as a constant, so only critic weights receive
    gradients. ``eps`` overrides the per-row interpolation weights.
    """
    loss, _ = _critic_terms(real, fake, critic, rng, lambda_p, eps)
    return loss


def generator_loss_phase1(fake_scores: Node) -> Node:
    return ad.neg(ad.mean(fake_scores))


def fairness_term(fake: Node, fitted: FittedTransformer) -> Node:
    """Soft ``E[y|s=0] - E[y|s=1]`` over a generated batch.

    Uses the one-hot coordinates as probabilities, so on hard one-hots this is
    exactly ``|D_{s=0,y=1}|/|D_{s=0}| - |D_{s=1,y=1}|/|D_{s=1}|``.
    """
    schema = fitted.schema
    if schema.protected is None or schema.label is None:
        raise ConfigError("schema must designate a protected attribute and a label")
    s_block = fitted.blocks[schema.protected]
    y_block = fitted.blocks[schema.label]
    under = s_block.start + fitted.category_index(schema.protected, schema.underprivileged)
    priv = s_block.start + fitted.category_index(schema.protected, schema.privileged())
    fav = y_block.start + fitted.category_index(schema.label, schema.favorable)

    p_under = ad.take(fake, 1, under, under + 1)
    p_priv = ad.take(fake, 1, priv, priv + 1)
    p_fav = ad.take(fake, 1, fav, fav + 1)
    rate_under = ad.div(ad.sum(ad.mul(p_fav, p_under)), ad.add(ad.sum(p_under), FAIRNESS_GUARD))
    rate_priv = ad.div(ad.sum(ad.mul(p_fav, p_priv)), ad.add(ad.sum(p_priv), FAIRNESS_GUARD))
    return ad.sub(rate_under, rate_priv)


def generator_loss_phase2(fake_scores: Node, fairness_value: Node, lambda_f: float) -> Node:
    return ad.sub(ad.neg(ad.mean(fake_scores)), ad.scale(fairness_value, lambda_f))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _all_finite(loss: Node, grads: list[Node]) -> bool:
    return bool(np.isfinite(loss.value).all() and all(np.isfinite(g.value).all() for g in grads))


class Trainer:
    """Holds networks, optimiser state and the rng stream of one training run.

    Phases can be run incrementally; :meth:`clone` forks a run (e.g. after
    Phase I) so that continuations are identical to uninterrupted runs.
    """

    def __init__(self, table: pd.DataFrame, schema: TableSchema, config: TrainConfig):
        if len(table) == 0:
            raise ValueError("cannot train on an empty table")
        config.validate()
        self.config = config
        self.fitted = fit(table, schema, config.output_distribution)
        self.data = self.fitted.encode(table)
        self.rng = np.random.default_rng(config.seed)
        self.generator, self.critic = init_params(self.fitted, self.rng)
        self.generator.tau = config.tau
        opt = dict(alpha=config.alpha, beta1=config.beta1, beta2=config.beta2)
        self.gen_opt = ad.Adam(self.generator.parameters(), **opt)
        self.critic_opt = ad.Adam(self.critic.parameters(), **opt)
        self.log = TrainLog()
        self._bad_batches = 0
        self._has_fairness = schema.protected is not None and schema.label is not None

    @property
    def epoch(self) -> int:
        return len(self.log)

    def clone(self) -> Trainer:
        return copy.deepcopy(self)

    def _guard(self, ok: bool, what: str) -> bool:
        if ok:
            self._bad_batches = 0
            return True
        self._bad_batches += 1
        log.warning("non-finite %s at epoch %d (%d in a row)", what, self.epoch, self._bad_batches)
        if self._bad_batches >= DIVERGENCE_PATIENCE:
            raise TrainingDiverged(
                f"{what} was non-finite for {DIVERGENCE_PATIENCE} consecutive batches at epoch {self.epoch}"
            )
        return False

    def _critic_step(self, real: np.ndarray) -> tuple[float, float]:
        cfg = self.config
        z = self.rng.standard_normal((len(real), self.fitted.width))
        with ad.no_grad():
            fake = generator_forward(z, self.generator, self.rng, "soft").value
        loss, gp = _critic_terms(real, fake, self.critic, self.rng, cfg.lambda_p, None)
        grads = ad.grad(loss, self.critic_opt.params)
        if self._guard(_all_finite(loss, grads), "critic loss"):
            self.critic_opt.step(grads)
        return float(loss.value), float(gp.value)

    def _generator_step(self, m: int, phase: str) -> tuple[float, float]:
        cfg = self.config
        z = self.rng.standard_normal((m, self.fitted.width))
        fake = generator_forward(z, self.generator, self.rng, "soft")
        scores = critic_forward(fake, self.critic)
        # a schema without protected/label designations can still train Phase I
        fair = fairness_term(fake, self.fitted) if self._has_fairness or phase == "II" else None
        if phase == "I":
            loss = generator_loss_phase1(scores)
        else:
            loss = generator_loss_phase2(scores, fair, cfg.lambda_f)
        grads = ad.grad(loss, self.gen_opt.params)
        if self._guard(_all_finite(loss, grads), "generator loss"):
            self.gen_opt.step(grads)
        return float(loss.value), -float(fair.value) if fair is not None else float("nan")

    def run_epoch(self, phase: str) -> EpochRecord:
        """One shuffled pass over the data: per batch, n_crit critic updates then one generator update."""
        if phase not in ("I", "II"):
            raise ValueError(f"phase must be 'I' or 'II', got {phase!r}")
        cfg = self.config
        order = self.rng.permutation(len(self.data))
        c_losses, gps, g_losses, dss = [], [], [], []
        for start in range(0, len(order), cfg.batch_size):
            real = self.data[order[start : start + cfg.batch_size]]
            for _ in range(cfg.n_crit):
                c, gp = self._critic_step(real)
                c_losses.append(c)
                gps.append(gp)
            g, ds = self._generator_step(len(real), phase)
            g_losses.append(g)
            dss.append(ds)
        record = EpochRecord(
            epoch=self.epoch,
            phase=phase,
            critic_loss=float(np.mean(c_losses)),
            gen_loss=float(np.mean(g_losses)),
            gp=float(np.mean(gps)),
            batch_ds=float(np.mean(dss)),
        )
        self.log.records.append(record)
        log.debug("epoch %d phase %s: %s", record.epoch, phase, record)
        return record

    def run_phase(self, phase: str, epochs: int) -> None:
        for _ in range(epochs):
            self.run_epoch(phase)

    def fit(self) -> Trainer:
        self.run_phase("I", self.config.t1)
        self.run_phase("II", self.config.t2)
        return self


def train(
    real_table: pd.DataFrame, schema: TableSchema, config: TrainConfig
) -> tuple[GeneratorParams, CriticParams, FittedTransformer, TrainLog]:
    t = Trainer(real_table, schema, config).fit()
    return t.generator, t.critic, t.fitted, t.log


def generate(
    gen: GeneratorParams,
    fitted: FittedTransformer,
    n: int,
    seed: int = 0,
    mode: str = "sample",
    chunk: int = 8192,
) -> pd.DataFrame:
    """Sample ``n`` rows and decode them to the original table format.

    Each categorical head is decoded from its Gumbel-perturbed logits, i.e. a
    draw from the head's softmax. ``mode="hard"`` drops the noise and emits
    every head's most likely category, which collapses balanced columns onto
    one value.
    """
    rng = np.random.default_rng(seed)
    parts = []
    with ad.no_grad():
        for start in range(0, n, chunk):
            m = min(chunk, n - start)
            z = rng.standard_normal((m, fitted.width))
            parts.append(generator_forward(z, gen, rng, mode).value)
    batch = np.concatenate(parts) if parts else np.zeros((0, fitted.width))
    return fitted.decode(batch)
