"""Experiment harness: cross-validation over the method ladder.

Methods, weakest to strongest supervision use:

* small_gap / small_lse / large_gap / large_lse: plain whole-image
  classifiers that pool the last feature map (average or log-sum-exp)
  before the classification head. These are the baselines.
* single_stage: the MIL network trained through its probability map with
  LSE pooling; the image score is the maximum cell probability.
* two_stage: single_stage plus the mined-ROI classifier, scored by the
  product of both stages.

single_stage and two_stage share one trained stage-1 network per fold.

Every artifact a run writes (config echo, folds, calibration, mining
manifests, score files, metrics, report, curves) is deterministic for a
fixed config: rerunning a pipeline produces byte-identical files.
Rendered plot images and torch checkpoints are outside that guarantee.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .core_types import (
    ConfigurationError,
    GrayscaleImage,
    ImageLabel,
    keyed_rng,
    load_dataset,
    save_dataset,
)
from .inference import infer_batch, read_results, write_results
from .metrics import (
    ScoredSet,
    evaluate_scores,
    pr_points,
    read_report,
    roc_points,
    three_class_report,
    write_curve,
    write_report,
    youden_threshold,
)
from .mining import CalibrationResult, MiningConfig, calibrate_threshold, mining_label_accuracy
from .nets import ArchConfig, enable_determinism, pool_features, stack_images
from .pooling import PoolKind, PoolingConfig, max_pool
from .stage1 import Stage1Config, Stage1Model, TrainConfig, forward_map, train_stage1
from .stage2 import Stage2Config, Stage2Model, train_stage2
from .synthetic import GenConfig, generate

METHODS = (
    "small_gap",
    "small_lse",
    "large_gap",
    "large_lse",
    "single_stage",
    "two_stage",
)


@dataclass(frozen=True)
class FoldSplit:
    """Index triples into the dataset list."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    gen: GenConfig
    n_folds: int = 5
    train_fraction: float = 0.70
    val_fraction: float = 0.10
    test_fraction: float = 0.20
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    small_widths: tuple[int, ...] = (8, 16, 32, 32)
    large_widths: tuple[int, ...] = (16, 32, 64, 64)
    large_convs_per_stage: int = 2
    stage2_widths: tuple[int, ...] = (12, 24, 48)
    lse_r: float = 50.0
    roi_size: int | None = None
    mining_k: int = 5
    target_sensitivity: float = 0.99
    stage1_epochs: int = 60
    stage1_batch: int = 8
    stage1_lr: float = 3e-3
    stage2_epochs: int = 16
    stage2_batch: int = 32
    stage2_lr: float = 2e-3
    plateau_patience: int = 6
    plateau_factor: float = 0.1
    recall_target: float = 0.95
    spec_target: float = 0.95

    def __post_init__(self) -> None:
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions sum to {total}, not 1")
        if min(self.train_fraction, self.val_fraction, self.test_fraction) <= 0:
            raise ConfigurationError("all split fractions must be positive")
        if self.n_folds < 2:
            raise ConfigurationError("need at least 2 folds")
        if abs(self.test_fraction * self.n_folds - 1.0) > 0.01:
            raise ConfigurationError(
                f"test_fraction {self.test_fraction} incompatible with "
                f"{self.n_folds} folds (one fold is the test split)"
            )
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigurationError(f"unknown methods {sorted(unknown)}")
        if not self.methods:
            raise ConfigurationError("no methods selected")
        stride = 2 ** len(self.small_widths)
        if self.gen.image_size < 4 * stride:
            raise ConfigurationError(
                f"image_size {self.gen.image_size} < 4x stage-1 stride {stride}"
            )

    # -- JSON round trip ----------------------------------------------------

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "gen"}
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        d["gen"] = {
            "n_images": self.gen.n_images,
            "image_size": self.gen.image_size,
            "positive_fraction": self.gen.positive_fraction,
            "hip_fraction": self.gen.hip_fraction,
            "distractor_count": list(self.gen.distractor_count),
            "lesion_contrast": list(self.gen.lesion_contrast),
            "seed": self.gen.seed,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        d = dict(d)
        g = dict(d.pop("gen"))
        g["distractor_count"] = tuple(g["distractor_count"])
        g["lesion_contrast"] = tuple(g["lesion_contrast"])
        for key in ("methods", "small_widths", "large_widths", "stage2_widths"):
            if key in d:
                d[key] = tuple(d[key])
        return ExperimentConfig(gen=GenConfig(**g), **d)

    def save(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @staticmethod
    def load(path: Path | str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentConfig.from_dict(json.load(fh))


def make_folds(
    labels: list[bool],
    n_folds: int,
    train_fraction: float,
    val_fraction: float,
    test_fraction: float,
    seed: int,
) -> list[FoldSplit]:
    """Stratified cross-validation splits.

    Each class is shuffled once and dealt round-robin to the folds, so
    per-class fold sizes differ by at most one. Fold f's members are its
    test split; the remainder splits into train and validation at the
    configured ratio, again per class. Any split left without one of the
    classes raises ConfigurationError.
    """
    if abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9:
        raise ConfigurationError("split fractions must sum to 1")
    pos = [i for i, y in enumerate(labels) if y]
    neg = [i for i, y in enumerate(labels) if not y]
    if not pos or not neg:
        raise ConfigurationError("dataset must contain both classes")
    by_class = {}
    for name, members in (("pos", pos), ("neg", neg)):
        arr = np.array(members)
        arr = arr[keyed_rng(seed, "folds", name).permutation(len(arr))]
        by_class[name] = [list(arr[f::n_folds]) for f in range(n_folds)]

    val_within = val_fraction / (train_fraction + val_fraction)
    splits = []
    for f in range(n_folds):
        test: list[int] = []
        train: list[int] = []
        val: list[int] = []
        for name in ("pos", "neg"):
            test += by_class[name][f]
            rest = [i for g in range(n_folds) if g != f for i in by_class[name][g]]
            n_val = int(round(val_within * len(rest)))
            val += rest[:n_val]
            train += rest[n_val:]
        for part, ids in (("train", train), ("val", val), ("test", test)):
            got = {labels[i] for i in ids}
            if got != {True, False}:
                raise ConfigurationError(
                    f"fold {f}: {part} split is missing a class "
                    f"(sizes pos={sum(labels[i] for i in ids)}, total={len(ids)})"
                )
        splits.append(
            FoldSplit(train=tuple(sorted(train)), val=tuple(sorted(val)), test=tuple(sorted(test)))
        )
    return splits


# ---------------------------------------------------------------------------
# checkpoints


def save_stage1(model: Stage1Model, path: Path | str) -> None:
    torch.save(
        {
            "kind": "stage1",
            "widths": list(model.cfg.arch.widths),
            "convs_per_stage": model.cfg.arch.convs_per_stage,
            "pool_kind": model.cfg.pooling.kind.value,
            "pool_r": model.cfg.pooling.r,
            "on_features": model.cfg.pooling.on_features,
            "roi_size": model.roi_size,
            "state": model.state_dict(),
            "history": model.history,
        },
        path,
    )


def load_stage1(path: Path | str) -> Stage1Model:
    blob = torch.load(path, weights_only=False)
    if blob.get("kind") != "stage1":
        raise ConfigurationError(f"{path} is not a stage-1 checkpoint")
    cfg = Stage1Config(
        arch=ArchConfig(tuple(blob["widths"]), blob["convs_per_stage"]),
        pooling=PoolingConfig(
            kind=PoolKind(blob["pool_kind"]), r=blob["pool_r"], on_features=blob["on_features"]
        ),
        roi_size=blob["roi_size"],
    )
    model = Stage1Model(cfg)
    model.load_state_dict(blob["state"])
    model.history = blob["history"]
    model.eval()
    return model


def save_stage2(model: Stage2Model, path: Path | str) -> None:
    torch.save(
        {
            "kind": "stage2",
            "widths": list(model.cfg.arch.widths),
            "convs_per_stage": model.cfg.arch.convs_per_stage,
            "with_subtype": model.cfg.with_subtype,
            "roi_size": model.roi_size,
            "state": model.state_dict(),
            "history": model.history,
        },
        path,
    )


def load_stage2(path: Path | str) -> Stage2Model:
    blob = torch.load(path, weights_only=False)
    if blob.get("kind") != "stage2":
        raise ConfigurationError(f"{path} is not a stage-2 checkpoint")
    cfg = Stage2Config(
        arch=ArchConfig(tuple(blob["widths"]), blob["convs_per_stage"]),
        with_subtype=blob["with_subtype"],
    )
    model = Stage2Model(cfg, roi_size=blob["roi_size"])
    model.load_state_dict(blob["state"])
    model.history = blob["history"]
    model.eval()
    return model


# ---------------------------------------------------------------------------
# pipeline stages; each maps to one CLI subcommand


def _stage1_key(method: str) -> str:
    # single_stage and two_stage share one MIL-trained network
    return "mil" if method in ("single_stage", "two_stage") else method


def _stage1_cfg(cfg: ExperimentConfig, method: str) -> Stage1Config:
    small = ArchConfig(cfg.small_widths)
    large = ArchConfig(cfg.large_widths, cfg.large_convs_per_stage)
    table = {
        "small_gap": (small, PoolKind.GAP, True),
        "small_lse": (small, PoolKind.LSE, True),
        "large_gap": (large, PoolKind.GAP, True),
        "large_lse": (large, PoolKind.LSE, True),
        "mil": (small, PoolKind.LSE, False),
    }
    arch, kind, on_features = table[_stage1_key(method)]
    return Stage1Config(
        arch=arch,
        pooling=PoolingConfig(kind=kind, r=cfg.lse_r, on_features=on_features),
        roi_size=cfg.roi_size,
    )


def _train_cfg(cfg: ExperimentConfig, stage: int) -> TrainConfig:
    if stage == 1:
        return TrainConfig(
            epochs=cfg.stage1_epochs,
            batch_size=cfg.stage1_batch,
            learning_rate=cfg.stage1_lr,
            plateau_patience=cfg.plateau_patience,
            plateau_factor=cfg.plateau_factor,
            seed=cfg.seed,
        )
    return TrainConfig(
        epochs=cfg.stage2_epochs,
        batch_size=cfg.stage2_batch,
        learning_rate=cfg.stage2_lr,
        plateau_patience=cfg.plateau_patience,
        plateau_factor=cfg.plateau_factor,
        seed=cfg.seed,
    )


def image_score(model: Stage1Model, image: GrayscaleImage) -> float:
    """Stage-1 test-time score: max cell probability for map-pooled models,
    the pooled-feature sigmoid for the baselines."""
    if model.cfg.pooling.on_features:
        enable_determinism()
        model.eval()
        with torch.no_grad():
            x = stack_images([image])
            feats = pool_features(model.backbone(x), model.cfg.pooling)
            return float(torch.sigmoid(model.head(feats)).flatten()[0])
    return max_pool(forward_map(model, image))[0]


def fold_dir(out_dir: Path | str, fold: int) -> Path:
    return Path(out_dir) / f"fold{fold}"


def _subset(dataset, ids: tuple[int, ...]):
    return [dataset[i] for i in ids]


def ensure_dataset(cfg: ExperimentConfig, out_dir: Path | str) -> list[tuple[GrayscaleImage, ImageLabel]]:
    """Generate the dataset once and reload it from disk afterwards."""
    root = Path(out_dir) / "dataset"
    if not (root / "manifest.jsonl").is_file():
        save_dataset(generate(cfg.gen), root)
    return load_dataset(root)


def ensure_folds(cfg: ExperimentConfig, out_dir: Path | str, dataset) -> list[FoldSplit]:
    path = Path(out_dir) / "folds.json"
    labels = [lbl.fractured for _, lbl in dataset]
    splits = make_folds(
        labels,
        cfg.n_folds,
        cfg.train_fraction,
        cfg.val_fraction,
        cfg.test_fraction,
        cfg.seed,
    )
    if not path.is_file():
        ids = [im.id for im, _ in dataset]
        rec = [
            {
                "train": [ids[i] for i in s.train],
                "val": [ids[i] for i in s.val],
                "test": [ids[i] for i in s.test],
            }
            for s in splits
        ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"folds": rec, "n_images": len(ids)}, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return splits


def cmd_train_stage1(cfg: ExperimentConfig, out_dir: Path | str, fold: int, method: str) -> Path:
    dataset = ensure_dataset(cfg, out_dir)
    split = ensure_folds(cfg, out_dir, dataset)[fold]
    fdir = fold_dir(out_dir, fold)
    fdir.mkdir(parents=True, exist_ok=True)
    key = _stage1_key(method)
    path = fdir / f"stage1_{key}.pt"
    if path.is_file():
        return path
    model = train_stage1(
        _subset(dataset, split.train),
        _train_cfg(cfg, 1),
        model_cfg=_stage1_cfg(cfg, method),
        val_dataset=_subset(dataset, split.val),
    )
    save_stage1(model, path)
    with open(fdir / f"history_stage1_{key}.json", "w", encoding="utf-8") as fh:
        json.dump(model.history, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def cmd_calibrate(cfg: ExperimentConfig, out_dir: Path | str, fold: int) -> CalibrationResult:
    """Mining threshold from training-split positives only."""
    fdir = fold_dir(out_dir, fold)
    ckpt = fdir / "stage1_mil.pt"
    if not ckpt.is_file():
        raise ConfigurationError(f"missing {ckpt}; run train-stage1 for this fold first")
    dataset = ensure_dataset(cfg, out_dir)
    split = ensure_folds(cfg, out_dir, dataset)[fold]
    model = load_stage1(ckpt)
    train_items = _subset(dataset, split.train)
    pos_ids = [im.id for im, lbl in train_items if lbl.fractured]
    scores = [image_score(model, im) for im, lbl in train_items if lbl.fractured]
    cal = calibrate_threshold(scores, cfg.target_sensitivity)
    with open(fdir / "calibration.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "p_hat": cal.p_hat,
                "target_sensitivity": cal.target_sensitivity,
                "achieved_sensitivity": cal.achieved_sensitivity,
                "n_positive_images": cal.n_positive_images,
                "image_ids": pos_ids,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    return cal


def _load_calibration(fdir: Path) -> CalibrationResult:
    path = fdir / "calibration.json"
    if not path.is_file():
        raise ConfigurationError(f"missing {path}; run calibrate for this fold first")
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    return CalibrationResult(
        p_hat=rec["p_hat"],
        target_sensitivity=rec["target_sensitivity"],
        achieved_sensitivity=rec["achieved_sensitivity"],
        n_positive_images=rec["n_positive_images"],
    )


def cmd_train_stage2(cfg: ExperimentConfig, out_dir: Path | str, fold: int) -> Path:
    fdir = fold_dir(out_dir, fold)
    ckpt = fdir / "stage1_mil.pt"
    if not ckpt.is_file():
        raise ConfigurationError(f"missing {ckpt}; run train-stage1 for this fold first")
    path = fdir / "stage2.pt"
    if path.is_file():
        return path
    dataset = ensure_dataset(cfg, out_dir)
    split = ensure_folds(cfg, out_dir, dataset)[fold]
    stage1 = load_stage1(ckpt)
    cal = _load_calibration(fdir)
    model, manifest = train_stage2(
        stage1,
        _subset(dataset, split.train),
        cal,
        MiningConfig(k=cfg.mining_k, seed=cfg.seed),
        _train_cfg(cfg, 2),
        model_cfg=Stage2Config(arch=ArchConfig(cfg.stage2_widths)),
        val_dataset=_subset(dataset, split.val),
    )
    save_stage2(model, path)
    manifest.write_tsv(fdir / "mining_manifest.tsv")
    with open(fdir / "history_stage2.json", "w", encoding="utf-8") as fh:
        json.dump(model.history, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def cmd_infer(cfg: ExperimentConfig, out_dir: Path | str, fold: int, method: str) -> Path:
    """Score the fold's test split with one method."""
    dataset = ensure_dataset(cfg, out_dir)
    split = ensure_folds(cfg, out_dir, dataset)[fold]
    fdir = fold_dir(out_dir, fold)
    test_items = _subset(dataset, split.test)

    if method == "two_stage":
        s1_path, s2_path = fdir / "stage1_mil.pt", fdir / "stage2.pt"
        for p in (s1_path, s2_path):
            if not p.is_file():
                raise ConfigurationError(f"missing {p}; run earlier stages first")
        stage1, stage2 = load_stage1(s1_path), load_stage2(s2_path)
        # operating point for the three-class decision, validation only
        val_items = _subset(dataset, split.val)
        val_results = infer_batch(stage1, stage2, [im for im, _ in val_items])
        val_scored = ScoredSet(
            scores=np.array([r.p_final for r in val_results]),
            labels=np.array([lbl.fractured for _, lbl in val_items]),
        )
        tau = youden_threshold(val_scored)
        # tau must be a usable decision threshold in (0, 1)
        tau = min(max(tau, 1e-6), 1.0 - 1e-6)
        with open(fdir / "tau.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"tau": tau, "val_image_ids": [im.id for im, _ in val_items]},
                fh,
                sort_keys=True,
                indent=2,
            )
            fh.write("\n")
        results = infer_batch(stage1, stage2, [im for im, _ in test_items], tau=tau)
        write_results(results, fdir / "results_two_stage.jsonl")
        scores = [r.p_final for r in results]
    else:
        ckpt = fdir / f"stage1_{_stage1_key(method)}.pt"
        if not ckpt.is_file():
            raise ConfigurationError(f"missing {ckpt}; run train-stage1 for this fold first")
        model = load_stage1(ckpt)
        scores = [image_score(model, im) for im, _ in test_items]

    path = fdir / f"scores_{method}.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for (im, lbl), score in zip(test_items, scores):
            fh.write(
                json.dumps(
                    {"image_id": im.id, "score": score, "fractured": lbl.fractured},
                    sort_keys=True,
                )
                + "\n"
            )
    return path


def cmd_eval(cfg: ExperimentConfig, out_dir: Path | str, fold: int, method: str) -> Path:
    fdir = fold_dir(out_dir, fold)
    scores_path = fdir / f"scores_{method}.jsonl"
    if not scores_path.is_file():
        raise ConfigurationError(f"missing {scores_path}; run infer first")
    with open(scores_path, "r", encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    scored = ScoredSet(
        scores=np.array([r["score"] for r in rows]),
        labels=np.array([r["fractured"] for r in rows]),
    )

    tc = None
    if method == "two_stage":
        dataset = ensure_dataset(cfg, out_dir)
        labels_by_id = {im.id: lbl for im, lbl in dataset}
        results = read_results(fdir / "results_two_stage.jsonl")
        for r in results:
            if r["p_final"] > r["p_s1"]:
                raise ConfigurationError(
                    f"chaining must not raise scores: {r['image_id']} has "
                    f"p_final {r['p_final']} > p_s1 {r['p_s1']}"
                )
        pairs = []
        for r in results:
            lbl = labels_by_id[r["image_id"]]
            actual = lbl.subtype.value if lbl.fractured else "no_finding"
            pairs.append((r["decision"], actual))
        tc = three_class_report(pairs)

    report = evaluate_scores(
        scored,
        recall_targets=(cfg.recall_target,),
        spec_targets=(cfg.spec_target,),
        three_class=tc,
    )
    path = fdir / f"metrics_{method}.json"
    write_report(report, path)
    write_curve(roc_points(scored), fdir / f"roc_{method}.tsv")
    write_curve(pr_points(scored), fdir / f"pr_{method}.tsv")
    return path


def cmd_report(cfg: ExperimentConfig, out_dir: Path | str) -> Path:
    """Aggregate per-fold metrics; arithmetic mean across folds."""
    out_dir = Path(out_dir)
    summary: dict = {"methods": {}, "n_folds": cfg.n_folds}
    for method in cfg.methods:
        per_fold = []
        for fold in range(cfg.n_folds):
            path = fold_dir(out_dir, fold) / f"metrics_{method}.json"
            if not path.is_file():
                raise ConfigurationError(f"missing {path}; run eval first")
            per_fold.append(read_report(path))
        entry = {
            "auc_folds": [r.auc for r in per_fold],
            "auc_mean": float(np.mean([r.auc for r in per_fold])),
        }
        for name in per_fold[0].points:
            vals = [r.points[name].value for r in per_fold]
            entry[f"{name}_folds"] = vals
            entry[f"{name}_mean"] = float(np.mean(vals))
        if all(r.three_class is not None for r in per_fold):
            accs = [r.three_class.accuracy for r in per_fold]
            entry["three_class_accuracy_folds"] = accs
            entry["three_class_accuracy_mean"] = float(np.mean(accs))
        summary["methods"][method] = entry
    path = out_dir / "report.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _plot_report(cfg, out_dir, summary)
    return path


def _plot_report(cfg: ExperimentConfig, out_dir: Path, summary: dict) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_roc, ax_bar) = plt.subplots(1, 2, figsize=(11, 4.5))
    for method in cfg.methods:
        curve = fold_dir(out_dir, 0) / f"roc_{method}.tsv"
        if curve.is_file():
            pts = np.loadtxt(curve, ndmin=2)
            ax_roc.plot(pts[:, 0], pts[:, 1], label=method)
    ax_roc.plot([0, 1], [0, 1], "k:", linewidth=0.8)
    ax_roc.set_xlabel("false positive rate")
    ax_roc.set_ylabel("true positive rate")
    ax_roc.set_title("ROC, fold 0")
    ax_roc.legend(fontsize=8)

    names = list(summary["methods"])
    means = [summary["methods"][m]["auc_mean"] for m in names]
    ax_bar.bar(range(len(names)), means)
    ax_bar.set_xticks(range(len(names)))
    ax_bar.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax_bar.set_ylabel("AUC (mean over folds)")
    ax_bar.set_ylim(0.5, 1.0)
    ax_bar.set_title(f"mean AUC over {summary['n_folds']} folds")
    fig.tight_layout()
    fig.savefig(out_dir / "plots.png", dpi=110)
    plt.close(fig)


def run_pipeline(
    cfg: ExperimentConfig,
    out_dir: Path | str,
    folds: list[int] | None = None,
    methods: tuple[str, ...] | None = None,
) -> Path:
    """All stages in order for every requested fold and method."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.json")
    dataset = ensure_dataset(cfg, out_dir)
    ensure_folds(cfg, out_dir, dataset)
    methods = methods if methods is not None else cfg.methods
    fold_list = folds if folds is not None else list(range(cfg.n_folds))
    for fold in fold_list:
        for method in methods:
            cmd_train_stage1(cfg, out_dir, fold, method)
        if "two_stage" in methods:
            cmd_calibrate(cfg, out_dir, fold)
            cmd_train_stage2(cfg, out_dir, fold)
        for method in methods:
            cmd_infer(cfg, out_dir, fold, method)
            cmd_eval(cfg, out_dir, fold, method)
    if set(fold_list) == set(range(cfg.n_folds)) and set(methods) == set(cfg.methods):
        cmd_report(cfg, out_dir)
    return out_dir


def mining_accuracy_for_fold(cfg: ExperimentConfig, out_dir: Path | str, fold: int) -> float:
    """Diagnostic: mined probable-positive hit rate against gt boxes."""
    from .mining import MiningManifest

    fdir = fold_dir(out_dir, fold)
    manifest = MiningManifest.read_tsv(fdir / "mining_manifest.tsv")
    dataset = ensure_dataset(cfg, out_dir)
    return mining_label_accuracy(manifest, {im.id: lbl for im, lbl in dataset})
