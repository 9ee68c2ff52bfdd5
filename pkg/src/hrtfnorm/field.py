"""Auto-decoder neural field over source positions.

A small tanh MLP maps (encoded position, per-subject latent code) to a dB
magnitude spectrum. Training alternates two steps per subject and epoch:
first a gradient step on that subject's latent code (initialized at zero and
persisted across epochs), then a gradient step on the generator weights, both
on the mean squared error in dB. Unseen subjects are encoded afterwards by
optimizing a fresh latent code alone, starting from zero, against whatever
measurements they have; the decoder then reconstructs their spectra anywhere
on the training grid.

The cross-database harness trains on several (normalized) databases and
scores held-out databases by log-spectral distortion. All gradients are
written out by hand; plain fixed-step gradient descent keeps every run
reproducible bit-for-bit from its seed.

Model container "HRTFNF v1": magic ``HRTFNF1\\0``, u32 header length, UTF-8
JSON header (hyperparameters, entity ids, provenance, section shapes), then
an f64 little-endian payload holding the sections in header order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict, field as dc_field
from pathlib import Path

import numpy as np

from .core import (
    Database,
    FormatError,
    FrequencyGrid,
    SourcePosition,
    SubjectHrtf,
    ValidationError,
)
from .augment import mirror_augment
from .metrics import BandSelection, lsd
from .normalize import NormalizationMode, compute_average_hrtf, normalize
from .seeding import make_rng

FIELD_MAGIC = b"HRTFNF1\x00"


class DivergenceError(Exception):
    """Forward pass or training produced non-finite values."""


@dataclass(frozen=True)
class FieldHyperparams:
    latent_dim: int = 16
    hidden_width: int = 128
    hidden_layers: int = 3
    enc_freqs: int = 4  # sinusoidal frequency count per direction component
    gen_lr: float = 1e-3
    latent_lr: float = 1e-2
    epochs: int = 500
    latent_steps: int = 200  # inference-time latent descent steps
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "hidden_width", "hidden_layers", "enc_freqs",
                     "epochs", "latent_steps"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.gen_lr <= 0 or self.latent_lr <= 0:
            raise ValidationError("step sizes must be positive")

    @property
    def encoding_dim(self) -> int:
        return 3 + 2 * 3 * self.enc_freqs


def encode_position(p: SourcePosition, enc_freqs: int) -> np.ndarray:
    """Unit direction plus sin/cos(2^k * component) features, k < enc_freqs."""
    d = p.direction()
    parts = [d]
    for k in range(enc_freqs):
        arg = (2.0**k) * d
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts)


def encode_positions(positions: list[SourcePosition], enc_freqs: int) -> np.ndarray:
    if not positions:
        return np.zeros((0, 3 + 6 * enc_freqs))
    return np.stack([encode_position(p, enc_freqs) for p in positions])


@dataclass
class FieldModel:
    grid: FrequencyGrid
    hp: FieldHyperparams
    weights: list[np.ndarray]  # hidden layers then output layer
    biases: list[np.ndarray]
    latents: np.ndarray  # (entities, latent_dim)
    entity_ids: list[str]
    provenance: dict = dc_field(default_factory=dict)
    loss_curve: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))


def _init_params(hp: FieldHyperparams, n_bins: int):
    dims = [hp.encoding_dim + hp.latent_dim] + [hp.hidden_width] * hp.hidden_layers + [n_bins]
    weights, biases = [], []
    for layer in range(len(dims) - 1):
        rng = make_rng(hp.seed, "init", layer)
        bound = np.sqrt(6.0 / (dims[layer] + dims[layer + 1]))
        weights.append(rng.uniform(-bound, bound, (dims[layer], dims[layer + 1])))
        biases.append(np.zeros(dims[layer + 1]))
    return weights, biases


def _forward_batch(weights, biases, x):
    """Activations per layer; the last entry is the linear output."""
    acts = [x]
    h = x
    last = len(weights) - 1
    for layer, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if layer != last:
            h = np.tanh(h)
        acts.append(h)
    if not np.isfinite(acts[-1]).all():
        raise DivergenceError("non-finite activations in forward pass")
    return acts


def forward(model: FieldModel, p: SourcePosition, z: np.ndarray) -> np.ndarray:
    """Predicted dB spectrum at one position for latent code z."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.hp.latent_dim,):
        raise ValidationError(f"latent shape {z.shape} != ({model.hp.latent_dim},)")
    x = np.concatenate([encode_position(p, model.hp.enc_freqs), z])[None, :]
    return _forward_batch(model.weights, model.biases, x)[-1][0]


def _backward_batch(weights, acts, targets, latent_dim):
    """MSE gradients for all weights, biases, and the shared latent slice.

    The loss is the mean of squared errors over every element of the batch.
    Returns (weight_grads, bias_grads, latent_grad, loss).
    """
    out = acts[-1]
    residual = out - targets
    loss = float(np.mean(residual**2))
    delta = (2.0 / residual.size) * residual
    w_grads = [None] * len(weights)
    b_grads = [None] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        w_grads[layer] = acts[layer].T @ delta
        b_grads[layer] = delta.sum(axis=0)
        delta = delta @ weights[layer].T
        if layer != 0:
            delta = delta * (1.0 - acts[layer] ** 2)  # tanh'
    latent_grad = delta[:, -latent_dim:].sum(axis=0)
    return w_grads, b_grads, latent_grad, loss


def gradients(model: FieldModel, positions: list[SourcePosition], z: np.ndarray, targets: np.ndarray):
    """Analytic MSE gradients for one subject batch (all of its positions)."""
    enc = encode_positions(positions, model.hp.enc_freqs)
    x = np.hstack([enc, np.broadcast_to(z, (enc.shape[0], z.size))])
    acts = _forward_batch(model.weights, model.biases, x)
    return _backward_batch(model.weights, acts, np.asarray(targets, dtype=np.float64),
                           model.hp.latent_dim)


def _entities(dbs: list[Database]):
    """(entity id, encoded positions, left-ear targets) per subject per database."""
    out = []
    for db in dbs:
        for s in db.subjects:
            out.append((f"{db.name}/{s.subject_id}", db.positions, s.spectra[:, 0, :]))
    return out


def train(training_dbs: list[Database], hp: FieldHyperparams) -> FieldModel:
    """Two-step auto-decoder training over the left-ear spectra of all subjects.

    Per epoch and subject: one latent descent step, then one generator descent
    step at the updated latent. Latents start at zero and persist across
    epochs. Deterministic for a fixed seed.
    """
    if not training_dbs:
        raise ValidationError("need at least one training database")
    grid = training_dbs[0].grid
    for db in training_dbs[1:]:
        if db.grid != grid:
            raise ValidationError("training databases must share one frequency grid")

    entities = _entities(training_dbs)
    encodings = [encode_positions(pos, hp.enc_freqs) for _, pos, _ in entities]
    targets = [np.asarray(t, dtype=np.float64) for _, _, t in entities]
    weights, biases = _init_params(hp, grid.n_bins)
    latents = np.zeros((len(entities), hp.latent_dim))
    loss_curve = np.zeros(hp.epochs)

    for epoch in range(hp.epochs):
        epoch_losses = np.empty(len(entities))
        for m, enc in enumerate(encodings):
            rows = enc.shape[0]
            x = np.hstack([enc, np.broadcast_to(latents[m], (rows, hp.latent_dim))])
            acts = _forward_batch(weights, biases, x)
            _, _, z_grad, _ = _backward_batch(weights, acts, targets[m], hp.latent_dim)
            latents[m] -= hp.latent_lr * z_grad

            x = np.hstack([enc, np.broadcast_to(latents[m], (rows, hp.latent_dim))])
            acts = _forward_batch(weights, biases, x)
            w_grads, b_grads, _, loss = _backward_batch(weights, acts, targets[m], hp.latent_dim)
            for layer in range(len(weights)):
                weights[layer] -= hp.gen_lr * w_grads[layer]
                biases[layer] -= hp.gen_lr * b_grads[layer]
            epoch_losses[m] = loss
        mean_loss = float(np.mean(epoch_losses))
        if not np.isfinite(mean_loss):
            raise DivergenceError(f"training diverged at epoch {epoch}")
        loss_curve[epoch] = mean_loss

    provenance = {
        "training": {
            "databases": [db.name for db in training_dbs],
            "normalization": [db.provenance.get("normalization") for db in training_dbs],
        }
    }
    return FieldModel(grid, hp, weights, biases, latents,
                      [eid for eid, _, _ in entities], provenance, loss_curve)


def infer_latent(
    model: FieldModel, positions: list[SourcePosition], observed: np.ndarray
) -> tuple[np.ndarray, float]:
    """Latent descent from zero with the generator frozen.

    Returns the final latent code and the MSE evaluated at it.
    """
    observed = np.asarray(observed, dtype=np.float64)
    enc = encode_positions(positions, model.hp.enc_freqs)
    if observed.shape != (enc.shape[0], model.grid.n_bins):
        raise ValidationError(
            f"observed spectra shape {observed.shape} != ({enc.shape[0]}, {model.grid.n_bins})"
        )
    z = np.zeros(model.hp.latent_dim)
    rows = enc.shape[0]
    for _ in range(model.hp.latent_steps):
        x = np.hstack([enc, np.broadcast_to(z, (rows, model.hp.latent_dim))])
        acts = _forward_batch(model.weights, model.biases, x)
        _, _, z_grad, _ = _backward_batch(model.weights, acts, observed, model.hp.latent_dim)
        z = z - model.hp.latent_lr * z_grad
        if not np.isfinite(z).all():
            raise DivergenceError("latent inference diverged")
    x = np.hstack([enc, np.broadcast_to(z, (rows, model.hp.latent_dim))])
    final = _forward_batch(model.weights, model.biases, x)[-1]
    return z, float(np.mean((final - observed) ** 2))


def reconstruct(model: FieldModel, z: np.ndarray, positions: list[SourcePosition]) -> Database:
    """Single-subject database of generator outputs at the given positions.

    The generator is single-ear; both ear slots carry the same spectra.
    An empty position list yields an empty, flagged database.
    """
    z = np.asarray(z, dtype=np.float64)
    spectra = np.zeros((len(positions), 2, model.grid.n_bins))
    for i, p in enumerate(positions):
        out = forward(model, p, z)
        spectra[i, 0] = out
        spectra[i, 1] = out
    provenance = {
        "reconstruction": {
            "entities": len(model.entity_ids),
            "normalization": model.provenance.get("training", {}).get("normalization"),
            "empty": len(positions) == 0,
        }
    }
    return Database(
        "reconstruction",
        model.grid,
        list(positions),
        [SubjectHrtf("reconstructed", spectra)],
        provenance,
    )


@dataclass
class ExperimentReport:
    """Cross-database reconstruction outcome for one normalization setting."""

    mode: str  # normalization mode value or "none"
    train_names: list[str]
    test_name: str
    entity_ids: list[str]
    per_entity_lsd: np.ndarray
    mean_lsd: float
    final_train_loss: float

    def to_text(self) -> str:
        lines = [
            f"mode={self.mode}",
            f"train={','.join(self.train_names)}",
            f"test={self.test_name}",
            f"final train mse={self.final_train_loss:.6f}",
        ]
        lines += [f"{eid} lsd_db={v:.6f}" for eid, v in zip(self.entity_ids, self.per_entity_lsd)]
        lines.append(f"mean lsd_db={self.mean_lsd:.6f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["entity,lsd_db"]
        lines += [f"{eid},{v!r}" for eid, v in zip(self.entity_ids, self.per_entity_lsd)]
        lines.append(f"__mean__,{self.mean_lsd!r}")
        return "\n".join(lines) + "\n"


def cross_db_experiment(
    train_dbs: list[Database],
    test_db: Database,
    mode: NormalizationMode | None,
    hp: FieldHyperparams,
    band: BandSelection | None = None,
) -> ExperimentReport:
    """Train on several databases, reconstruct subjects of a held-out one.

    Every database (including the held-out one) is normalized by its own
    average under ``mode`` (or left raw when mode is None), then mirror-folded
    to left-ear entities. Per held-out entity: infer a latent from all of its
    positions, reconstruct, and score the dB distortion against its normalized
    spectra. Distortion against normalized truth equals distortion of the
    de-normalized prediction against raw truth, so scores are comparable
    across modes.
    """
    def prepare(db: Database) -> Database:
        if mode is not None:
            db = normalize(db, compute_average_hrtf(db, mode))
        return mirror_augment(db)

    prepared_train = [prepare(db) for db in train_dbs]
    prepared_test = prepare(test_db)
    model = train(prepared_train, hp)

    ids, values = [], []
    for s in prepared_test.subjects:
        observed = s.spectra[:, 0, :]
        z, _ = infer_latent(model, prepared_test.positions, observed)
        predicted = np.stack(
            [forward(model, p, z) for p in prepared_test.positions]
        )
        ids.append(f"{prepared_test.name}/{s.subject_id}")
        values.append(lsd(observed, predicted, prepared_test.grid, band))
    per_entity = np.array(values)
    return ExperimentReport(
        mode=mode.value if mode is not None else "none",
        train_names=[db.name for db in train_dbs],
        test_name=test_db.name,
        entity_ids=ids,
        per_entity_lsd=per_entity,
        mean_lsd=float(per_entity.mean()),
        final_train_loss=float(model.loss_curve[-1]),
    )


def _model_header(model: FieldModel, sections: list[tuple[str, tuple[int, ...]]]) -> dict:
    return {
        "hyperparams": asdict(model.hp),
        "sample_rate": model.grid.sample_rate,
        "n_bins": model.grid.n_bins,
        "entities": model.entity_ids,
        "provenance": model.provenance,
        "sections": [[name, list(shape)] for name, shape in sections],
        "epochs_recorded": int(model.loss_curve.size),
    }


def save_field_model(model: FieldModel, path) -> None:
    """Write the HRTFNF v1 model container, deterministically."""
    sections = []
    arrays = []
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        sections.append((f"W{layer}", w.shape))
        arrays.append(w)
        sections.append((f"b{layer}", b.shape))
        arrays.append(b)
    sections.append(("latents", model.latents.shape))
    arrays.append(model.latents)
    sections.append(("loss_curve", model.loss_curve.shape))
    arrays.append(model.loss_curve)

    header = json.dumps(_model_header(model, sections), sort_keys=True,
                        separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def load_field_model(path) -> FieldModel:
    data = Path(path).read_bytes()
    if len(data) < len(FIELD_MAGIC) or data[: len(FIELD_MAGIC)] != FIELD_MAGIC:
        raise FormatError(f"{path}: bad magic, not an HRTFNF v1 file")
    (header_len,) = struct.unpack_from("<I", data, 8)
    if len(data) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unparseable header: {exc}") from exc

    hp = FieldHyperparams(**header["hyperparams"])
    grid = FrequencyGrid(header["sample_rate"], header["n_bins"])
    offset = 12 + header_len
    arrays = {}
    for name, shape in header["sections"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: truncated payload at section {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: payload size does not match header sections")

    n_layers = hp.hidden_layers + 1
    weights = [arrays[f"W{l}"] for l in range(n_layers)]
    biases = [arrays[f"b{l}"] for l in range(n_layers)]
    return FieldModel(grid, hp, weights, biases, arrays["latents"],
                      list(header["entities"]), dict(header["provenance"]),
                      arrays["loss_curve"])
