"""End-to-end orchestration: the black-box objective mapping (gamma, eta)
to the joint loss, final model fitting, holdout application and run
persistence.

A single evaluation filters and standardizes the cohort, trains the
feature transformer once, scores clustering stability over K patient-level
reshuffles, segments every patient with a final model, extracts texture
features, groups patients by risk and converts the log-rank p-value into
the significance loss; the joint loss blends stability and significance
with the weight alpha.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cohort as cohort_mod
from . import fae as fae_mod
from .bayesopt import Bounds, BoTrace, HyperParams, bo_run
from .clustering import (
    ClusterModel,
    LabelMap,
    calinski_harabasz,
    kmeans_fit,
    kmeans_predict,
    kmedoids_fit,
    stability_loss,
    stability_score,
)
from .cohort import Cohort, ModalityStats, apply_stats, fit_modality_stats, pooled_pixels
from .survival import (
    LogRankResult,
    km_fit,
    logrank_test,
    risk_grouping,
    significance_loss,
    write_km_csv,
)
from .texture import PatientFeatureVector, extract_features, feature_table


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class FaeSettings:
    hidden_width: int = 10
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 100
    batch_size: int = 256

    def to_config(self, n_modalities: int, seed: int) -> fae_mod.FaeConfig:
        return fae_mod.FaeConfig(
            n_modalities=n_modalities,
            hidden_width=self.hidden_width,
            learning_rate=self.learning_rate,
            adam_betas=tuple(self.adam_betas),
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=seed,
        )


@dataclass
class PipelineConfig:
    alpha: float = 0.5
    tau: float = 0.05
    k_trials: int = 10
    variant: str = "fae"
    split_fraction: float = 57.0 / 82.0
    gamma_bounds: tuple[float, float] = (0.0, 1.0)
    eta_bounds: tuple[int, int] = (3, 7)
    kmeans_n_init: int = 10
    kmeans_max_iter: int = 300
    n_initial: int = 10
    max_steps: int = 10
    epsilon: float = 1e-3
    patience: int = 5
    n_candidates: int = 2000
    penalty_loss: float = 2.0
    retrain_per_trial: bool = False
    variants_etas: tuple[int, ...] = (3, 4, 5, 6)
    seed: int = 0
    fae: FaeSettings = field(default_factory=FaeSettings)

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must be in [0,1]")
        if not (0.0 < self.tau < 1.0):
            raise ValueError("tau must be in (0,1)")
        if self.variant not in fae_mod.VARIANT_KINDS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if isinstance(self.fae, dict):
            self.fae = FaeSettings(**self.fae)

    def bounds(self) -> Bounds:
        return Bounds(
            gamma_lo=self.gamma_bounds[0],
            gamma_hi=self.gamma_bounds[1],
            eta_min=self.eta_bounds[0],
            eta_max=self.eta_bounds[1],
        )

    def to_json(self) -> str:
        payload = asdict(self)
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        payload = json.loads(text)
        for key in ("gamma_bounds", "eta_bounds", "variants_etas"):
            if key in payload:
                payload[key] = tuple(payload[key])
        if "fae" in payload and isinstance(payload["fae"], dict):
            if "adam_betas" in payload["fae"]:
                payload["fae"]["adam_betas"] = tuple(payload["fae"]["adam_betas"])
            payload["fae"] = FaeSettings(**payload["fae"])
        return cls(**payload)


@dataclass
class LossBreakdown:
    L_s: float
    L_p_raw: float
    L_p_oriented: float
    p_value: float
    L: float


def _derived_seeds(seed: int) -> dict[str, int]:
    state = np.random.SeedSequence(seed).generate_state(6)
    names = ("transform", "stability", "final_kmeans", "risk", "bo", "variants")
    return {name: int(state[i]) for i, name in enumerate(names)}


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(stage, exc) from exc


def _train_transform(filtered: Cohort, config: PipelineConfig, seed: int) -> fae_mod.FeatureTransform:
    fae_config = config.fae.to_config(filtered.n_modalities, seed)
    transform = fae_mod.build_variant(config.variant, fae_config)
    transform.train(pooled_pixels(filtered))
    return transform


def _latent_provider(transform, config: PipelineConfig):
    """Encoder for the stability trials; optionally retrains per reshuffle."""

    if not config.retrain_per_trial:
        def provider(train_part: Cohort, val_part: Cohort, _trial_seed: int):
            return (
                transform.encode(pooled_pixels(train_part)),
                transform.encode(pooled_pixels(val_part)),
            )
    else:
        def provider(train_part: Cohort, val_part: Cohort, trial_seed: int):
            fresh = _train_transform(train_part, config, trial_seed)
            return (
                fresh.encode(pooled_pixels(train_part)),
                fresh.encode(pooled_pixels(val_part)),
            )
    return provider


def _segment(filtered: Cohort, transform, eta: int, config: PipelineConfig, seed: int,
             n_workers: int = 1):
    """Final pixel clustering plus per-patient label maps and features."""
    latents = transform.encode(pooled_pixels(filtered))
    cluster_model = kmeans_fit(
        latents, eta, seed=seed, n_init=config.kmeans_n_init, max_iter=config.kmeans_max_iter
    )
    label_maps = _label_maps(filtered, transform, cluster_model)
    features = _features_for(label_maps, filtered, eta, n_workers)
    return cluster_model, label_maps, features


def _label_maps(cohort_std: Cohort, transform, cluster_model: ClusterModel) -> list[LabelMap]:
    maps = []
    for scan in cohort_std.scans:
        latents = transform.encode(scan.pixel_values)
        labels = kmeans_predict(cluster_model, latents)
        maps.append(LabelMap(scan.patient_id, labels, cluster_model.eta, scan.pixel_coords))
    return maps


def _features_for(label_maps: list[LabelMap], cohort_std: Cohort, eta: int,
                  n_workers: int = 1) -> list[PatientFeatureVector]:
    dims = {s.patient_id: s.image_dims for s in cohort_std.scans}

    def one(lm: LabelMap) -> PatientFeatureVector:
        return extract_features(lm, dims[lm.patient_id], eta)

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(one, label_maps))
    return [one(lm) for lm in label_maps]


def evaluate_theta(cohort: Cohort, theta: HyperParams, config: PipelineConfig,
                   n_workers: int = 1) -> LossBreakdown:
    """One black-box evaluation; deterministic given (cohort, config.seed,
    theta) and independent of n_workers."""
    theta.validate(config.bounds())
    seeds = _derived_seeds(config.seed)

    filtered, _stats = _stage("filter", fit_modality_stats, cohort, theta.gamma)
    transform = _stage("transform", _train_transform, filtered, config, seeds["transform"])
    provider = _latent_provider(transform, config)
    l_s, _per_trial = _stage(
        "stability",
        stability_loss,
        provider,
        filtered,
        theta.eta,
        config.k_trials,
        config.split_fraction,
        seeds["stability"],
        config.kmeans_n_init,
        config.kmeans_max_iter,
        n_workers,
    )
    _model, _maps, features = _stage(
        "segment", _segment, filtered, transform, theta.eta, config, seeds["final_kmeans"], n_workers
    )
    records = [filtered.survival_for(s.patient_id) for s in filtered.scans]
    ids = [s.patient_id for s in filtered.scans]
    _labels, logrank = _stage(
        "risk", risk_grouping, feature_table(features), ids, records, seeds["risk"]
    )
    l_p_raw = _stage("loss", significance_loss, logrank.p_value, config.tau, False)
    l_p_oriented = -l_p_raw
    joint = config.alpha * l_s + (1.0 - config.alpha) * l_p_oriented
    return LossBreakdown(
        L_s=l_s, L_p_raw=l_p_raw, L_p_oriented=l_p_oriented,
        p_value=logrank.p_value, L=joint,
    )


# ---------------------------------------------------------------------------
# final model and holdout application
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ModelBundle:
    modality_stats: ModalityStats
    transform: fae_mod.FeatureTransform
    cluster_model: ClusterModel
    feature_mean: np.ndarray
    feature_std: np.ndarray
    medoid_vectors: np.ndarray  # (2, n_features), standardized space
    high_risk_medoid: int
    theta_star: HyperParams
    variant: str

    @property
    def eta(self) -> int:
        return self.cluster_model.eta


@dataclass(eq=False)
class ApplyResult:
    label_maps: list[LabelMap]
    features: list[PatientFeatureVector]
    risk_labels: np.ndarray  # 1 = high risk, aligned with cohort scans
    logrank: LogRankResult
    km_curves: dict


def fit_final(cohort: Cohort, theta_star: HyperParams, config: PipelineConfig,
              n_workers: int = 1) -> ModelBundle:
    """Retrain transformer, pixel clustering and risk medoids at theta_star,
    keeping every statistic needed to process held-out data untouched."""
    theta_star.validate(config.bounds())
    seeds = _derived_seeds(config.seed)
    filtered, stats = _stage("filter", fit_modality_stats, cohort, theta_star.gamma)
    transform = _stage("transform", _train_transform, filtered, config, seeds["transform"])
    _model, _maps, features = _stage(
        "segment", _segment, filtered, transform, theta_star.eta, config,
        seeds["final_kmeans"], n_workers,
    )
    table = feature_table(features)
    mean = table.mean(axis=0)
    std = table.std(axis=0)
    std[std == 0.0] = 1.0
    standardized = (table - mean) / std
    medoid_idx, labels = _stage("risk", kmedoids_fit, standardized, 2, seeds["risk"])
    by_id = {r.patient_id: r for r in filtered.survival}
    ids = [s.patient_id for s in filtered.scans]
    group0 = [by_id[pid] for pid, lab in zip(ids, labels) if lab == 0]
    group1 = [by_id[pid] for pid, lab in zip(ids, labels) if lab == 1]
    if not group0 or not group1:
        raise PipelineStageError("risk", ValueError("degenerate risk grouping: single group"))
    high = 0 if km_fit(group0).median() < km_fit(group1).median() else 1
    return ModelBundle(
        modality_stats=stats,
        transform=transform,
        cluster_model=_model,
        feature_mean=mean,
        feature_std=std,
        medoid_vectors=standardized[medoid_idx],
        high_risk_medoid=high,
        theta_star=theta_star,
        variant=config.variant,
    )


def apply_bundle(bundle: ModelBundle, holdout: Cohort, n_workers: int = 1) -> ApplyResult:
    """Push a cohort through the stored transforms only; nothing refits."""
    n_stats = len(bundle.modality_stats.mean)
    if holdout.n_modalities != n_stats:
        raise ValueError(
            f"modality mismatch: cohort has {holdout.n_modalities}, bundle expects {n_stats}"
        )
    standardized = apply_stats(holdout, bundle.modality_stats)
    label_maps = _label_maps(standardized, bundle.transform, bundle.cluster_model)
    features = _features_for(label_maps, standardized, bundle.eta, n_workers)
    table = (feature_table(features) - bundle.feature_mean) / bundle.feature_std
    d2 = ((table[:, None, :] - bundle.medoid_vectors[None, :, :]) ** 2).sum(axis=2)
    assigned = d2.argmin(axis=1)
    risk_labels = (assigned == bundle.high_risk_medoid).astype(np.int64)
    by_id = {r.patient_id: r for r in standardized.survival}
    ids = [s.patient_id for s in standardized.scans]
    high = [by_id[pid] for pid, lab in zip(ids, risk_labels) if lab == 1]
    low = [by_id[pid] for pid, lab in zip(ids, risk_labels) if lab == 0]
    if not high or not low:
        raise ValueError("degenerate risk grouping on holdout: single group")
    logrank = logrank_test(high, low)
    curves = {"high": km_fit(high), "low": km_fit(low)}
    return ApplyResult(label_maps, features, risk_labels, logrank, curves)


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------


def variant_comparison(cohort: Cohort, gamma: float, etas, config: PipelineConfig,
                       seed: int | None = None, n_workers: int = 1) -> list[dict]:
    """Stability score and dispersion ratio for every variant at every eta,
    all measured on the same winsorized cohort."""
    seeds = _derived_seeds(config.seed if seed is None else seed)
    filtered, _ = fit_modality_stats(cohort, gamma)
    rows = []
    for kind in fae_mod.VARIANT_KINDS:
        variant_config = PipelineConfig(**{**asdict(config), "variant": kind})
        transform = _train_transform(filtered, variant_config, seeds["transform"])
        provider = _latent_provider(transform, variant_config)
        latents = transform.encode(pooled_pixels(filtered))
        for eta in etas:
            l_s, _ = stability_loss(
                provider, filtered, eta, config.k_trials, config.split_fraction,
                seeds["stability"], config.kmeans_n_init, config.kmeans_max_iter, n_workers,
            )
            model = kmeans_fit(
                latents, eta, seed=seeds["final_kmeans"],
                n_init=config.kmeans_n_init, max_iter=config.kmeans_max_iter,
            )
            labels = kmeans_predict(model, latents)
            rows.append(
                {
                    "variant": kind,
                    "eta": int(eta),
                    "stability_score": stability_score(l_s),
                    "ch": calinski_harabasz(latents, labels),
                }
            )
    return rows


def run_experiment(cohort: Cohort, config: PipelineConfig, out_dir: str | None = None,
                   n_workers: int = 1, include_variants: bool = True):
    """Optimize (gamma, eta), fit the final bundle, apply it back to the
    training cohort and persist every artifact under out_dir."""
    seeds = _derived_seeds(config.seed)

    def objective(theta: HyperParams) -> LossBreakdown:
        return evaluate_theta(cohort, theta, config, n_workers)

    trace = bo_run(
        objective,
        config.bounds(),
        n_initial=config.n_initial,
        max_steps=config.max_steps,
        convergence=(config.epsilon, config.patience),
        seed=seeds["bo"],
        n_candidates=config.n_candidates,
        penalty_loss=config.penalty_loss,
    )
    bundle = fit_final(cohort, trace.theta_star, config, n_workers)
    train_apply = apply_bundle(bundle, cohort, n_workers)
    variants = (
        variant_comparison(
            cohort, trace.theta_star.gamma, config.variants_etas, config,
            seeds["variants"], n_workers,
        )
        if include_variants and config.variants_etas
        else []
    )
    report = {"trace": trace, "bundle": bundle, "train_apply": train_apply, "variants": variants}
    if out_dir is not None:
        write_run_dir(out_dir, config, trace, bundle, train_apply, variants)
        report["out_dir"] = out_dir
    return trace, bundle, report


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def write_run_dir(out_dir: str, config: PipelineConfig, trace: BoTrace, bundle: ModelBundle,
                  train_apply: ApplyResult, variants: list[dict]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(config.to_json())
    trace.to_csv(os.path.join(out_dir, "trace.csv"))
    save_bundle(bundle, os.path.join(out_dir, "bundle"))
    write_km_csv(train_apply.km_curves, os.path.join(out_dir, "km_train.csv"), train_apply.logrank)
    labels_dir = os.path.join(out_dir, "labels")
    os.makedirs(labels_dir, exist_ok=True)
    for lm in train_apply.label_maps:
        with open(os.path.join(labels_dir, f"{lm.patient_id}.csv"), "w") as fh:
            fh.write("row,col,label\n")
            for (r, c), lab in zip(lm.pixel_coords, lm.labels):
                fh.write(f"{r},{c},{lab}\n")
    with open(os.path.join(out_dir, "variants.csv"), "w") as fh:
        fh.write("variant,eta,stability_score,ch\n")
        for row in variants:
            fh.write(
                "%s,%d,%s,%s\n"
                % (row["variant"], row["eta"], "%.17g" % row["stability_score"], "%.17g" % row["ch"])
            )


def save_bundle(bundle: ModelBundle, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    fae_mod.save_transform(bundle.transform, os.path.join(path, "transform.txt"))
    with open(os.path.join(path, "centroids.txt"), "w") as fh:
        for row in bundle.cluster_model.centroids:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")
    meta = {
        "modality_stats": asdict(bundle.modality_stats),
        "feature_mean": list(bundle.feature_mean),
        "feature_std": list(bundle.feature_std),
        "medoid_vectors": [list(row) for row in bundle.medoid_vectors],
        "high_risk_medoid": int(bundle.high_risk_medoid),
        "theta_star": {"gamma": bundle.theta_star.gamma, "eta": bundle.theta_star.eta},
        "variant": bundle.variant,
        "eta": bundle.eta,
        "inertia": bundle.cluster_model.inertia,
    }
    with open(os.path.join(path, "bundle.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(path: str) -> ModelBundle:
    with open(os.path.join(path, "bundle.json")) as fh:
        meta = json.load(fh)
    transform = fae_mod.load_transform(os.path.join(path, "transform.txt"))
    centroids = np.loadtxt(os.path.join(path, "centroids.txt"), ndmin=2)
    stats = ModalityStats(
        clip_lo=tuple(meta["modality_stats"]["clip_lo"]),
        clip_hi=tuple(meta["modality_stats"]["clip_hi"]),
        mean=tuple(meta["modality_stats"]["mean"]),
        std=tuple(meta["modality_stats"]["std"]),
    )
    cluster_model = ClusterModel(
        centroids=centroids, eta=int(meta["eta"]), inertia=float(meta["inertia"])
    )
    return ModelBundle(
        modality_stats=stats,
        transform=transform,
        cluster_model=cluster_model,
        feature_mean=np.asarray(meta["feature_mean"]),
        feature_std=np.asarray(meta["feature_std"]),
        medoid_vectors=np.asarray(meta["medoid_vectors"]),
        high_risk_medoid=int(meta["high_risk_medoid"]),
        theta_star=HyperParams(
            gamma=float(meta["theta_star"]["gamma"]), eta=int(meta["theta_star"]["eta"])
        ),
        variant=meta["variant"],
    )
