"""Batch command-line front end.

Conventions: prediction-pair directories hold ``{region}_p.nii.gz`` and
``{region}_q.nii.gz`` per region (wt, tc, et); fused probabilities are
``{region}_prob.nii.gz``; label maps are one ``{case}.nii.gz`` per case;
certainty maps use challenge-style names ``{case}_unc_{whole,core,enhance}``.

Exit codes: 0 success, 1 per-case processing failure, 2 configuration or
usage error. Progress and summaries go to stderr; results go to files.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from .config import PipelineConfig, SurvivalConfig, default_config_yaml, load_config
from .ensemble import PredictionPair, ensemble_with_flips
from .metrics import compare_masks
from .nifti import read_label_volume, read_nifti, write_nifti
from .phantom import PRESETS, generate_phantom
from .refine import (
    REGION_ORDER,
    RegionLabel,
    brats_labels_to_masks,
    masks_to_brats_labels,
    refine_segmentation,
)
from .survival import (
    fit_fusion,
    fit_ols,
    load_model,
    predict_fused,
    save_model,
    cross_validate,
    extract_features,
)
from .tables import (
    read_case_table,
    read_survival_table,
    write_predictions_table,
    write_results_table,
    write_survival_table,
)
from .uncertainty import (
    certainty_from_q,
    certainty_negative_only,
    certainty_symmetric,
    evaluate_uncertainty,
    negative_only_uncertainty_raw,
    symmetric_uncertainty_raw,
)
from .volumes import Axis, Volume3D, standardize_nonzero

REGION_KEYS = ("wt", "tc", "et")
CHALLENGE_NAMES = {"wt": "whole", "tc": "core", "et": "enhance"}

_NIFTI_SUFFIXES = (".nii.gz", ".nii")


@dataclass
class RunManifest:
    """Resolved parameters plus every input file, checked before processing."""

    subcommand: str
    parameters: dict[str, object] = field(default_factory=dict)
    inputs: list[Path] = field(default_factory=list)

    def require(self, *paths: Path) -> None:
        self.inputs.extend(paths)

    def validate(self) -> None:
        missing = [str(p) for p in self.inputs if not p.exists()]
        if missing:
            shown = ", ".join(missing[:10])
            more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
            raise click.UsageError(f"{self.subcommand}: missing input file(s): {shown}{more}")


def _config(config_path) -> PipelineConfig:
    try:
        return load_config(config_path)
    except (ValueError, OSError) as exc:
        raise click.UsageError(f"bad configuration: {exc}") from exc


def _case_name(path: Path) -> str:
    for suffix in _NIFTI_SUFFIXES:
        if path.name.endswith(suffix):
            return path.name[: -len(suffix)]
    return path.name


def _nifti_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.name.endswith(_NIFTI_SUFFIXES))


def _find_nifti(directory: Path, stem: str) -> Path:
    for suffix in _NIFTI_SUFFIXES:
        candidate = directory / f"{stem}{suffix}"
        if candidate.exists():
            return candidate
    return directory / f"{stem}.nii.gz"  # manifest validation will name it


def _parse_axes(spec: str) -> list[Axis]:
    if not spec:
        return []
    try:
        return [Axis[token.strip().upper()] for token in spec.split(",") if token.strip()]
    except KeyError as exc:
        raise click.UsageError(f"unknown flip axis {exc.args[0]!r}; use X, Y, Z") from exc


@click.group()
def main():
    """Uncertainty-aware segmentation toolkit."""


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def standardize(in_path: Path, out_path: Path):
    """Standardize nonzero intensities to zero mean, unit variance per volume."""
    if in_path.is_dir():
        files = _nifti_files(in_path)
        if not files:
            raise click.UsageError(f"no NIfTI files in {in_path}")
        out_path.mkdir(parents=True, exist_ok=True)
        targets = [(f, out_path / f.name) for f in files]
    else:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        targets = [(in_path, out_path)]
    failures = 0
    for src, dst in targets:
        try:
            vol, header = read_nifti(src)
            write_nifti(standardize_nonzero(vol), dst, header_template=header)
        except (ValueError, OSError) as exc:
            click.echo(f"error: {src.name}: {exc}", err=True)
            failures += 1
    if failures:
        raise SystemExit(1)


@main.command()
@click.option("--pred", "pred_dirs", multiple=True, required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Prediction-pair directory; repeat per model/view.")
@click.option("--flips", default="", help="Comma-separated flip axes already applied upstream (X,Y,Z).")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
def ensemble(pred_dirs, flips, out_dir: Path):
    """Fuse (p, q) prediction pairs into one probability volume per region."""
    axes = _parse_axes(flips)
    manifest = RunManifest("ensemble", {"flips": flips})
    wanted = {}
    for region in REGION_KEYS:
        wanted[region] = [
            (_find_nifti(d, f"{region}_p"), _find_nifti(d, f"{region}_q")) for d in pred_dirs
        ]
        for p_path, q_path in wanted[region]:
            manifest.require(p_path, q_path)
    manifest.validate()
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        for region in REGION_KEYS:
            pairs = []
            for p_path, q_path in wanted[region]:
                p, header = read_nifti(p_path)
                q, _ = read_nifti(q_path)
                pairs.append(PredictionPair(p=p, q=q))
            fused = ensemble_with_flips(pairs, axes)
            write_nifti(fused, out_dir / f"{region}_prob.nii.gz", header_template=header)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc


@main.command()
@click.option("--prob-wt", required=True, type=click.Path(path_type=Path))
@click.option("--prob-tc", required=True, type=click.Path(path_type=Path))
@click.option("--prob-et", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", default=None, type=click.Path(path_type=Path))
@click.option("--out-labels", required=True, type=click.Path(path_type=Path))
@click.option("--out-report", default=None, type=click.Path(path_type=Path))
@click.option("--case-id", default=None, help="Case id for the report row (default: label file stem).")
def refine(prob_wt, prob_tc, prob_et, config_path, out_labels: Path, out_report, case_id):
    """Refine three probability channels into a BraTS label map."""
    cfg = _config(config_path)
    manifest = RunManifest("refine")
    manifest.require(prob_wt, prob_tc, prob_et)
    manifest.validate()
    try:
        p_wt, header = read_nifti(prob_wt)
        p_tc, _ = read_nifti(prob_tc)
        p_et, _ = read_nifti(prob_et)
        seg, report = refine_segmentation(p_wt, p_tc, p_et, cfg.refine)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    out_labels.parent.mkdir(parents=True, exist_ok=True)
    write_nifti(masks_to_brats_labels(seg), out_labels, header_template=header, dtype="uint8")
    for line in report.summary_lines():
        click.echo(line, err=True)
    if out_report is not None:
        row = {"case_id": case_id or _case_name(out_labels)}
        row.update(report.flat_record())
        write_results_table(out_report, [row], summary=False)


@main.command()
@click.option("--prob", "prob_path", default=None, type=click.Path(path_type=Path),
              help="Probability volume (symmetric / negative-only formulas).")
@click.option("--q", "q_path", default=None, type=click.Path(path_type=Path),
              help="Flip-probability volume (flip formula).")
@click.option("--formula", required=True, type=click.Choice(["flip", "symmetric", "negative-only"]))
@click.option("--raw", is_flag=True,
              help="Write the raw uncertainty formula instead of 100-is-certain output "
                   "(symmetric and negative-only only).")
@click.option("--dtype", type=click.Choice(["uint8", "float32"]), default="uint8",
              help="uint8 rounds to the integer challenge scale.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def uncertainty(prob_path, q_path, formula, raw, dtype, out_path: Path):
    """Convert model output to a 0-100 certainty map."""
    if formula == "flip":
        if q_path is None:
            raise click.UsageError("--formula flip requires --q")
        src = q_path
    else:
        if prob_path is None:
            raise click.UsageError(f"--formula {formula} requires --prob")
        src = prob_path
    if raw and formula == "flip":
        raise click.UsageError("--raw only applies to symmetric and negative-only formulas")
    manifest = RunManifest("uncertainty")
    manifest.require(src)
    manifest.validate()
    try:
        vol, header = read_nifti(src)
        if formula == "flip":
            cert = certainty_from_q(vol)
        elif formula == "symmetric":
            cert = symmetric_uncertainty_raw(vol) if raw else certainty_symmetric(vol)
        elif raw:
            cert = negative_only_uncertainty_raw(vol)
        else:
            cert = certainty_negative_only(vol)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    if dtype == "uint8":
        cert = Volume3D(np.rint(cert.data), cert.spacing)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_nifti(cert, out_path, header_template=header, dtype=dtype)


@main.command()
@click.option("--pred-dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--gt-dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--cert-dir", default=None, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out-csv", required=True, type=click.Path(path_type=Path))
@click.option("--jobs", default=1, type=int, show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(path_type=Path))
def evaluate(pred_dir: Path, gt_dir: Path, cert_dir, out_csv: Path, jobs, config_path):
    """Per-case Dice/HD95 (and uncertainty AUCs) against ground-truth label maps."""
    cfg = _config(config_path)
    pred_files = _nifti_files(pred_dir)
    if not pred_files:
        raise click.UsageError(f"no NIfTI files in {pred_dir}")
    cases = [_case_name(f) for f in pred_files]
    manifest = RunManifest("evaluate", {"jobs": jobs})
    plan = []
    for case, pred_file in zip(cases, pred_files):
        gt_file = _find_nifti(gt_dir, case)
        cert_files = None
        if cert_dir is not None:
            cert_files = {
                region: _find_nifti(cert_dir, f"{case}_unc_{CHALLENGE_NAMES[region]}")
                for region in REGION_KEYS
            }
            manifest.require(*cert_files.values())
        manifest.require(pred_file, gt_file)
        plan.append((case, pred_file, gt_file, cert_files))
    manifest.validate()

    sentinel = cfg.hd95_empty_sentinel
    thresholds = cfg.uncertainty_thresholds

    def one_case(item):
        case, pred_file, gt_file, cert_files = item
        pred_labels, _ = read_label_volume(pred_file)
        gt_labels, _ = read_label_volume(gt_file, expect_dims=pred_labels.dims)
        pred_seg = brats_labels_to_masks(pred_labels)
        gt_seg = brats_labels_to_masks(gt_labels)
        row: dict[str, object] = {"case_id": case}
        for region_key, region in zip(REGION_KEYS, REGION_ORDER):
            pred_mask = pred_seg.mask(region)
            gt_mask = gt_seg.mask(region)
            result = compare_masks(pred_mask, gt_mask, hd95_empty_sentinel=sentinel)
            row[f"dice_{region_key}"] = result.dice
            row[f"hd95_{region_key}"] = result.hd95
            if cert_files is not None:
                cert, _ = read_nifti(cert_files[region_key], expect_dims=pred_labels.dims)
                curve = evaluate_uncertainty(pred_mask, gt_mask, cert, thresholds)
                row[f"dice_auc_{region_key}"] = curve.dice_auc
                row[f"ftp_auc_{region_key}"] = curve.ftp_auc
                row[f"ftn_auc_{region_key}"] = curve.ftn_auc
        return row

    rows, failures = [], 0
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda item: _attempt(one_case, item), plan))
    else:
        outcomes = [_attempt(one_case, item) for item in plan]
    for (case, *_), outcome in zip(plan, outcomes):
        if isinstance(outcome, Exception):
            click.echo(f"error: {case}: {outcome}", err=True)
            failures += 1
        else:
            rows.append(outcome)
    write_results_table(out_csv, rows)
    if failures:
        raise SystemExit(1)


def _attempt(fn, item):
    try:
        return fn(item)
    except (ValueError, OSError) as exc:
        return exc


@main.command()
@click.option("--labels-dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--meta-csv", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out-csv", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", default=None, type=click.Path(path_type=Path))
def features(labels_dir: Path, meta_csv: Path, out_csv: Path, config_path):
    """Extract survival features (age, component counts) from label maps.

    The output doubles as scatter-plot data: survival days against age and
    the two component counts.
    """
    cfg = _config(config_path)
    try:
        meta = read_case_table(meta_csv, required=("case_id", "age"))
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    manifest = RunManifest("features")
    plan = []
    for row in meta:
        label_file = _find_nifti(labels_dir, row["case_id"])
        manifest.require(label_file)
        plan.append((row, label_file))
    manifest.validate()
    records, failures = [], 0
    for row, label_file in plan:
        try:
            labels, _ = read_label_volume(label_file)
            survival = row.get("survival_days") or None
            records.append(
                extract_features(
                    brats_labels_to_masks(labels),
                    age=float(row["age"]),
                    connectivity=cfg.refine.connectivity,
                    case_id=row["case_id"],
                    survival_days=float(survival) if survival else None,
                    resection_status=row.get("resection_status") or None,
                )
            )
        except (ValueError, OSError) as exc:
            click.echo(f"error: {row['case_id']}: {exc}", err=True)
            failures += 1
    write_survival_table(out_csv, records)
    if failures:
        raise SystemExit(1)


def _fit_fusion_from_config(scfg: SurvivalConfig, seed: int, records):
    return fit_fusion(
        records,
        seed=seed,
        ols_features=scfg.ols_features,
        forest_features=scfg.forest_features,
        n_trees=scfg.n_trees,
        max_depth=scfg.max_depth,
        cap_days=scfg.cap_days,
        override_prob=scfg.override_prob,
        override_days=scfg.override_days,
        bins=scfg.bins,
    )


def _fused_fitter(scfg: SurvivalConfig, seed: int):
    def fit(train):
        model = _fit_fusion_from_config(scfg, seed, train)
        return lambda rec: predict_fused(model, rec)

    return fit


def _ols_fitter(scfg: SurvivalConfig):
    def fit(train):
        model = fit_ols(train, feature_set=scfg.ols_features, cap_days=scfg.cap_days)
        return lambda rec: min(max(model.predict(rec), 0.0), scfg.cap_days)

    return fit


@main.command("survival-train")
@click.option("--features-csv", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--model-out", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", default=None, type=click.Path(path_type=Path))
def survival_train(features_csv, seed, model_out: Path, config_path):
    """Fit the fused OLS + random-forest survival model."""
    cfg = _config(config_path)
    try:
        records = read_survival_table(features_csv)
        model = _fit_fusion_from_config(cfg.survival, seed, records)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    model_out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_out)


@main.command("survival-predict")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--features-csv", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out-csv", required=True, type=click.Path(path_type=Path))
def survival_predict(model_path, features_csv, out_csv: Path):
    """Predict survival days for each case in a features table."""
    try:
        model = load_model(model_path)
        records = read_survival_table(features_csv)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    rows = [(rec.case_id, predict_fused(model, rec)) for rec in records]
    write_predictions_table(out_csv, rows)


@main.command("survival-cv")
@click.option("--features-csv", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--folds", default=5, type=int, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--out-csv", default=None, type=click.Path(path_type=Path))
@click.option("--config", "config_path", default=None, type=click.Path(path_type=Path))
def survival_cv(features_csv, folds, seed, out_csv, config_path):
    """Cross-validated accuracy of the fused model vs the OLS baseline."""
    cfg = _config(config_path)
    try:
        records = read_survival_table(features_csv)
        fused = cross_validate(records, _fused_fitter(cfg.survival, seed),
                               folds=folds, seed=seed, bins=cfg.survival.bins)
        baseline = cross_validate(records, _ols_fitter(cfg.survival),
                                  folds=folds, seed=seed, bins=cfg.survival.bins)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    lines = [("fold", "fused_accuracy", "ols_accuracy")]
    for i, (f_acc, o_acc) in enumerate(zip(fused, baseline), start=1):
        lines.append((str(i), repr(f_acc), repr(o_acc)))
    lines.append(("mean", repr(float(np.mean(fused))), repr(float(np.mean(baseline)))))
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        Path(out_csv).write_text("\r\n".join(",".join(row) for row in lines) + "\r\n")
    else:
        for row in lines:
            click.echo(",".join(row))


@main.command()
@click.option("--preset", default=None, type=click.Choice(sorted(PRESETS)))
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--count", default=1, type=int, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", default=None, type=click.Path(path_type=Path))
def phantom(preset, seed, count, out_dir: Path, config_path):
    """Generate synthetic phantom cases (probability, q and ground-truth volumes)."""
    cfg = _config(config_path)
    preset = preset or cfg.phantom.preset
    if preset not in PRESETS:
        raise click.UsageError(f"unknown phantom preset {preset!r}; choose from {sorted(PRESETS)}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "gt").mkdir(exist_ok=True)
    for i in range(count):
        case_seed = seed + i
        case = f"phantom-{case_seed:04d}"
        spec = PRESETS[preset](case_seed, dims=cfg.phantom.dims)
        data = generate_phantom(spec)
        for region_key, region in zip(REGION_KEYS, REGION_ORDER):
            write_nifti(data.p[region], out_dir / f"{case}_prob_{region_key}.nii.gz")
            write_nifti(data.q[region], out_dir / f"{case}_q_{region_key}.nii.gz")
        write_nifti(masks_to_brats_labels(data.gt), out_dir / "gt" / f"{case}.nii.gz", dtype="uint8")
        click.echo(f"generated {case}", err=True)


@main.command("init-config")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def init_config(out_path: Path):
    """Write the default configuration file."""
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(default_config_yaml())


if __name__ == "__main__":
    main()
