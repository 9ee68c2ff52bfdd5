"""Command-line interface: the whole pipeline as deterministic subcommands.

Every run is fully specified by its flags; outputs are byte-identical across
repeated invocations with the same arguments. Exit codes: 0 success, 1
validation or processing error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import augment as augment_mod
from . import classify as classify_mod
from . import field as field_mod
from . import metrics as metrics_mod
from . import normalize as normalize_mod
from . import synth as synth_mod
from .core import (
    Database,
    FormatError,
    FrequencyGrid,
    SubjectHrtf,
    ValidationError,
    find_common_positions,
    load_database,
    save_database,
    select_positions,
)
from .svm import ConvergenceError


def _positions_for(name: str):
    if name != "grid12":
        raise ValidationError(f"unknown position grid {name!r} (available: grid12)")
    return synth_mod.grid12()


def _gamma_value(text: str):
    if text == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"--gamma must be a number or 'auto', got {text!r}") from None
    return value


def _mode_value(text: str, allow_none: bool = False):
    if allow_none and text == "none":
        return None
    try:
        return normalize_mod.NormalizationMode(text)
    except ValueError:
        choices = [m.value for m in normalize_mod.NormalizationMode]
        if allow_none:
            choices.append("none")
        raise ValidationError(f"--mode must be one of {choices}, got {text!r}") from None


def _band(args) -> metrics_mod.BandSelection:
    return metrics_mod.BandSelection(args.band_low, args.band_high)


def _hyperparams(args) -> field_mod.FieldHyperparams:
    return field_mod.FieldHyperparams(
        latent_dim=args.latent_dim,
        hidden_width=args.hidden_width,
        hidden_layers=args.hidden_layers,
        enc_freqs=args.enc_freqs,
        gen_lr=args.gen_lr,
        latent_lr=args.latent_lr,
        epochs=args.epochs,
        latent_steps=args.latent_steps,
        seed=args.seed,
    )


def _add_field_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--hidden-width", type=int, default=128)
    p.add_argument("--hidden-layers", type=int, default=3)
    p.add_argument("--enc-freqs", type=int, default=4)
    p.add_argument("--gen-lr", type=float, default=1e-3)
    p.add_argument("--latent-lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--latent-steps", type=int, default=200)


def _add_band_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--band-low", type=float, default=metrics_mod.DEFAULT_BAND_LOW_HZ)
    p.add_argument("--band-high", type=float, default=metrics_mod.DEFAULT_BAND_HIGH_HZ)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hrtfnorm",
        description="HRTF cross-database harmonization: synthesize, normalize, classify, reconstruct.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus of HRTFDB files")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--databases", type=int, default=4)
    p.add_argument("--subjects", type=int, default=18)
    p.add_argument("--positions", default="grid12")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-rate", type=int, default=44100)
    p.add_argument("--n-bins", type=int, default=65)
    p.add_argument("--pool", choices=["shared", "disjoint"], default="shared")

    p = sub.add_parser("augment", help="mirror right-ear data onto left-ear subjects")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("avg", help="compute a database's average-person response")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", default="per-position-per-ear")

    p = sub.add_parser("normalize", help="subtract an average response")
    p.add_argument("--input", required=True)
    p.add_argument("--avg", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("denormalize", help="add an average response back")
    p.add_argument("--input", required=True)
    p.add_argument("--avg", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("lsd", help="log-spectral distortion between two databases")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--output", help="per-position CSV")
    _add_band_flags(p)

    p = sub.add_parser("classify", help="database-identification cross-validation")
    p.add_argument("--input", nargs="+", required=True, help="HRTFDB files, one per class")
    p.add_argument("--subjects-per-db", type=int, default=18)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fold-strategy", choices=[s.value for s in classify_mod.FoldStrategy],
                   default=classify_mod.FoldStrategy.SUBJECT_DISJOINT.value)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--gamma", default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="confusion matrix CSV")

    p = sub.add_parser("train", help="train the neural-field generator")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--output", required=True, help="model file")
    p.add_argument("--loss-csv", help="write the epoch loss curve")
    p.add_argument("--seed", type=int, default=0)
    _add_field_flags(p)

    p = sub.add_parser("reconstruct", help="infer latents and reconstruct a database")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="observed HRTFDB file")
    p.add_argument("--output", required=True)

    p = sub.add_parser("experiment", help="cross-database reconstruction experiment")
    p.add_argument("--train", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mode", default="per-position-per-ear",
                   help="normalization mode or 'none'")
    p.add_argument("--output", help="per-entity LSD CSV")
    p.add_argument("--seed", type=int, default=0)
    _add_band_flags(p)
    _add_field_flags(p)

    p = sub.add_parser("info", help="inspect a container header")
    p.add_argument("--input", required=True)

    return parser


def _cmd_synth(args) -> int:
    positions = _positions_for(args.positions)
    grid = FrequencyGrid(args.sample_rate, args.n_bins)
    corpus = synth_mod.synth_corpus(
        args.databases, args.subjects, positions, grid,
        seed=args.seed, shared_pool=args.pool == "shared",
    )
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.pool == "shared":
        pool_db = corpus.pools[0].as_database("pool")
        save_database(pool_db, out / "pool.hrtfdb")
        written.append("pool.hrtfdb")
    else:
        for i, pool in enumerate(corpus.pools):
            save_database(pool.as_database(f"pool{i:02d}"), out / f"pool_{i:02d}.hrtfdb")
            written.append(f"pool_{i:02d}.hrtfdb")
    for db in corpus.databases:
        name = f"{db.name}.hrtfdb"
        save_database(db, out / name)
        written.append(name)
    for name in written:
        print(name)
    return 0


def _cmd_augment(args) -> int:
    db = load_database(args.input)
    save_database(augment_mod.mirror_augment(db), args.output)
    print(f"augmented {len(db.subjects)} subjects to {2 * len(db.subjects)}")
    return 0


def _cmd_avg(args) -> int:
    db = load_database(args.input)
    avg = normalize_mod.compute_average_hrtf(db, _mode_value(args.mode))
    normalize_mod.save_average(avg, args.output)
    print(f"average of {avg.subject_count} subjects ({avg.mode.value}) "
          f"fingerprint={avg.fingerprint()}")
    return 0


def _cmd_normalize(args) -> int:
    db = load_database(args.input)
    avg = normalize_mod.load_average(args.avg)
    save_database(normalize_mod.normalize(db, avg), args.output)
    print(f"normalized {db.name} with {avg.mode.value} average of {avg.source_name}")
    return 0


def _cmd_denormalize(args) -> int:
    db = load_database(args.input)
    avg = normalize_mod.load_average(args.avg)
    save_database(normalize_mod.denormalize(db, avg), args.output)
    print(f"denormalized {db.name}")
    return 0


def _cmd_lsd(args) -> int:
    truth = load_database(args.truth)
    pred = load_database(args.pred)
    band = _band(args)
    mean, per_subject = metrics_mod.database_lsd(truth, pred, band)
    for sid, value in per_subject.items():
        print(f"{sid} lsd_db={value:.6f}")
    print(f"mean lsd_db={mean:.6f}")
    if args.output:
        lines = ["subject,azimuth,elevation,lsd_db"]
        pred_by_id = {s.subject_id: s for s in pred.subjects}
        for s in truth.subjects:
            per_pos = metrics_mod.lsd_per_position(
                s.spectra, pred_by_id[s.subject_id].spectra, truth.grid, band
            )
            for p, v in zip(truth.positions, per_pos):
                lines.append(f"{s.subject_id},{p.azimuth!r},{p.elevation!r},{v!r}")
        Path(args.output).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _cmd_classify(args) -> int:
    dbs = [load_database(f) for f in args.input]
    positions = find_common_positions(dbs) if len(dbs) > 1 else list(dbs[0].positions)
    if not positions:
        raise ValidationError("databases share no positions")
    ds = classify_mod.build_dataset(dbs, positions, args.subjects_per_db, args.seed)
    report = classify_mod.cross_validate(
        ds,
        k=args.folds,
        strategy=classify_mod.FoldStrategy(args.fold_strategy),
        C=args.c,
        gamma=_gamma_value(args.gamma),
        seed=args.seed,
    )
    print(report.to_text(), end="")
    if args.output:
        Path(args.output).write_text(report.confusion_csv(), encoding="utf-8")
    return 0


def _cmd_train(args) -> int:
    dbs = [load_database(f) for f in args.input]
    model = field_mod.train(dbs, _hyperparams(args))
    field_mod.save_field_model(model, args.output)
    if args.loss_csv:
        lines = ["epoch,mse"] + [f"{e},{v!r}" for e, v in enumerate(model.loss_curve)]
        Path(args.loss_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"trained on {len(model.entity_ids)} entities, "
          f"final mse={model.loss_curve[-1]:.6f}")
    return 0


def _cmd_reconstruct(args) -> int:
    model = field_mod.load_field_model(args.model)
    observed = load_database(args.input)
    subjects = []
    for s in observed.subjects:
        z, mse = field_mod.infer_latent(model, observed.positions, s.spectra[:, 0, :])
        recon = field_mod.reconstruct(model, z, observed.positions)
        subjects.append(SubjectHrtf(s.subject_id, recon.subjects[0].spectra))
        print(f"{s.subject_id} inference mse={mse:.6f}")
    provenance = {"reconstruction": {"model_entities": len(model.entity_ids)}}
    if "normalization" in observed.provenance:
        provenance["normalization"] = observed.provenance["normalization"]
    out = Database(observed.name, model.grid, list(observed.positions), subjects, provenance)
    save_database(out, args.output)
    return 0


def _cmd_experiment(args) -> int:
    train_dbs = [load_database(f) for f in args.train]
    test_db = load_database(args.test)
    common = find_common_positions(train_dbs + [test_db])
    if not common:
        raise ValidationError("training and test databases share no positions")
    train_dbs = [select_positions(db, common) for db in train_dbs]
    test_db = select_positions(test_db, common)
    report = field_mod.cross_db_experiment(
        train_dbs, test_db, _mode_value(args.mode, allow_none=True),
        _hyperparams(args), _band(args),
    )
    print(report.to_text(), end="")
    if args.output:
        Path(args.output).write_text(report.to_csv(), encoding="utf-8")
    return 0


def _cmd_info(args) -> int:
    db = load_database(args.input)
    header = {
        "name": db.name,
        "sample_rate": db.grid.sample_rate,
        "n_bins": db.grid.n_bins,
        "positions": [[p.azimuth, p.elevation, p.distance] for p in db.positions],
        "subjects": db.subject_ids,
        "provenance": db.provenance,
    }
    print(json.dumps(header, indent=2, sort_keys=True))
    print(f"payload: {len(db.subjects)} subjects x {len(db.positions)} positions "
          f"x 2 ears x {db.grid.n_bins} bins")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "augment": _cmd_augment,
    "avg": _cmd_avg,
    "normalize": _cmd_normalize,
    "denormalize": _cmd_denormalize,
    "lsd": _cmd_lsd,
    "classify": _cmd_classify,
    "train": _cmd_train,
    "reconstruct": _cmd_reconstruct,
    "experiment": _cmd_experiment,
    "info": _cmd_info,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, FormatError, ConvergenceError,
            field_mod.DivergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
