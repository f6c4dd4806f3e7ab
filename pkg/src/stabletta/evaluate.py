"""Evaluation harness: baseline / TTA / stabilized-TTA runs, N-K sweeps,
replay recording, conflict scans, and the statistics reports.

A run evaluates every sample once per run seed: obtain N per-pass logit rows
from the provider, aggregate (plain logit averaging for ``tta``, NSS-then-
average for ``stable_tta``), and score top-1/top-5 accuracy.  ``baseline``
is the single un-augmented pass.  Mean/std across seeds use the (n-1)
divisor; a single seed reports std 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugPolicyConfig, generate_passes, select_reference
from .conflict import sweep_fig10, write_sweep_csv
from .ensemble import (
    detect_conflict,
    nss_matrix,
    stable_tta_aggregate,
    topk_accuracy,
)
from .imaging import (
    ImageTensor,
    PreprocessConfig,
    decode_image,
    load_manifest,
    preprocess,
    standardize,
)
from .providers import (
    AdapterClient,
    ProviderError,
    ReplayProvider,
    SyntheticProvider,
    SyntheticTaskSpec,
)
from .stats import (
    DegenerateRegressorError,
    holder_fit,
    jb_over_groups,
    jensen_bound_check,
    logit_variance,
)
from .augment import input_variance

METHODS = ("baseline", "tta", "stable_tta")


# --- provider sources -------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSource:
    spec: SyntheticTaskSpec


@dataclass(frozen=True)
class ReplaySource:
    path: str


@dataclass(frozen=True)
class AdapterSource:
    command: str
    manifest_path: str
    preprocess: PreprocessConfig | None = None  # target size comes from HELLO
    timeout: float = 60.0


# --- configuration and report ----------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    method: str
    source: object
    n_experts: int = 32
    k: int = 10
    seeds: tuple = (1, 2, 3, 4, 5)
    batch_size: int = 16
    aug: AugPolicyConfig = field(default_factory=AugPolicyConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_experts < 1:
            raise ValueError(f"n_experts must be >= 1, got {self.n_experts}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class EvalReport:
    method: str
    n_experts: int
    k: int
    seeds: tuple
    acc1_per_seed: tuple
    acc5_per_seed: tuple
    acc1_mean: float
    acc1_std: float
    acc5_mean: float
    acc5_std: float
    num_samples: int
    num_classes: int
    skipped: int
    config_echo: dict
    notes: tuple = ()

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "n_experts": self.n_experts,
            "k": self.k,
            "seeds": list(self.seeds),
            "acc1_per_seed": list(self.acc1_per_seed),
            "acc5_per_seed": list(self.acc5_per_seed),
            "acc1_mean": self.acc1_mean,
            "acc1_std": self.acc1_std,
            "acc5_mean": self.acc5_mean,
            "acc5_std": self.acc5_std,
            "num_samples": self.num_samples,
            "num_classes": self.num_classes,
            "skipped": self.skipped,
            "config": self.config_echo,
            "notes": list(self.notes),
        }


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    std = 0.0 if v.size < 2 else float(v.std(ddof=1))
    return mean, std


def _effective_nk(cfg: EvalConfig, num_classes: int) -> tuple[int, int]:
    n = 1 if cfg.method == "baseline" else cfg.n_experts
    k = num_classes if cfg.method in ("baseline", "tta") else cfg.k
    if k > num_classes:
        raise ValueError(f"k={k} exceeds the class count {num_classes}")
    return n, k


def _aggregate(rows: np.ndarray, k_eff: int) -> np.ndarray:
    _, agg = stable_tta_aggregate(rows, k_eff)
    return agg


# --- per-source row pipelines ----------------------------------------------

def _synthetic_rows(spec, run_seed, n_eff):
    provider = SyntheticProvider(spec, run_seed)
    for i in range(provider.num_samples):
        rows = np.stack(
            [provider.pass_logits(i, p) for p in range(n_eff)]
        )
        yield provider.label(i), rows


def _replay_rows(provider: ReplayProvider, n_eff):
    for i in range(provider.num_samples):
        yield provider.label(i), provider.rows(i, n_eff)


def _unit_tensor_loader(pre_cfg: PreprocessConfig):
    def load(path) -> ImageTensor:
        return preprocess(decode_image(path), pre_cfg)

    return load


def _adapter_sample_rows(
    client: AdapterClient,
    x_unit: ImageTensor,
    ref,
    method: str,
    n_eff: int,
    aug: AugPolicyConfig,
    run_seed: int,
    sample_index: int,
    pre_cfg: PreprocessConfig,
    batch_size: int,
) -> np.ndarray:
    """Standardize the sample's passes and push them through the adapter."""
    if method == "baseline":
        tensors = [standardize(x_unit, pre_cfg)]
    else:
        passes = generate_passes(x_unit, ref, n_eff, aug, run_seed, sample_index)
        tensors = [standardize(t, pre_cfg) for t, _ in passes]
    rows = []
    for start in range(0, len(tensors), batch_size):
        chunk = tensors[start : start + batch_size]
        batch = np.stack([t.data for t in chunk]).astype("<f4")
        try:
            rows.append(client.infer(batch))
        except ProviderError as e:
            raise type(e)(
                f"sample {sample_index}, batch starting at pass {start}: {e}"
            ) from e
    return np.vstack(rows)


def _adapter_run_context(source: AdapterSource):
    client = AdapterClient(source.command, timeout=source.timeout)
    base = source.preprocess or PreprocessConfig(client.height, client.width)
    pre_cfg = replace(base, target_h=client.height, target_w=client.width)
    manifest = load_manifest(source.manifest_path, num_classes=None)
    return client, pre_cfg, manifest


def _safe_shutdown(client):
    if client is None:
        return
    try:
        client.shutdown()
    except ProviderError:
        client.close()


# --- public operations ------------------------------------------------------

def evaluate(cfg: EvalConfig) -> EvalReport:
    """Run the configured evaluation and report per-seed accuracies."""
    source = cfg.source
    notes = []
    client = None
    try:
        if isinstance(source, SyntheticSource):
            num_classes = source.spec.num_classes

            def run(run_seed, n_eff):
                return _synthetic_rows(source.spec, run_seed, n_eff)

        elif isinstance(source, ReplaySource):
            provider = ReplayProvider(source.path)
            num_classes = provider.num_classes

            def run(run_seed, n_eff):
                return _replay_rows(provider, n_eff)

        elif isinstance(source, AdapterSource):
            client, pre_cfg, manifest = _adapter_run_context(source)
            num_classes = client.num_classes
            loader = _unit_tensor_loader(pre_cfg)
            ref = select_reference(manifest, cfg.aug.reference_seed, loader)
            unit_cache = [loader(path) for path, _ in manifest.entries]

            def run(run_seed, n_eff):
                for i, (_, label) in enumerate(manifest.entries):
                    rows = _adapter_sample_rows(
                        client, unit_cache[i], ref, cfg.method, n_eff,
                        cfg.aug, run_seed, i, pre_cfg, cfg.batch_size,
                    )
                    yield label, rows

        else:
            raise ValueError(f"unknown source {source!r}")

        n_eff, k_eff = _effective_nk(cfg, num_classes)
        if cfg.method == "stable_tta" and cfg.k < 5:
            notes.append(
                "top-5 over NSS output with K < 5 can involve min-valued "
                "ties; ties resolve to the lowest class index"
            )
        acc1_per_seed, acc5_per_seed = [], []
        num_samples = 0
        k5 = None
        for run_seed in cfg.seeds:
            top1 = top5 = count = 0
            for label, rows in run(run_seed, n_eff):
                agg = _aggregate(rows, k_eff)
                if k5 is None:
                    k5 = min(5, agg.shape[0])
                top1 += topk_accuracy(agg, label, 1)
                top5 += topk_accuracy(agg, label, k5)
                count += 1
            acc1_per_seed.append(100.0 * top1 / count)
            acc5_per_seed.append(100.0 * top5 / count)
            num_samples = count
    finally:
        _safe_shutdown(client)

    acc1_mean, acc1_std = _mean_std(acc1_per_seed)
    acc5_mean, acc5_std = _mean_std(acc5_per_seed)
    return EvalReport(
        method=cfg.method,
        n_experts=cfg.n_experts,
        k=cfg.k,
        seeds=tuple(cfg.seeds),
        acc1_per_seed=tuple(acc1_per_seed),
        acc5_per_seed=tuple(acc5_per_seed),
        acc1_mean=acc1_mean,
        acc1_std=acc1_std,
        acc5_mean=acc5_mean,
        acc5_std=acc5_std,
        num_samples=num_samples,
        num_classes=num_classes,
        skipped=0,
        config_echo=_config_echo(cfg),
        notes=tuple(notes),
    )


def _config_echo(cfg: EvalConfig) -> dict:
    src = cfg.source
    if isinstance(src, SyntheticSource):
        source = {"provider": "synthetic", **src.spec.__dict__}
    elif isinstance(src, ReplaySource):
        source = {"provider": "replay", "path": src.path}
    else:
        source = {
            "provider": "adapter",
            "command": src.command,
            "manifest": src.manifest_path,
        }
    return {
        "method": cfg.method,
        "n_experts": cfg.n_experts,
        "k": cfg.k,
        "seeds": list(cfg.seeds),
        "batch_size": cfg.batch_size,
        "aug": {
            "lambda_min": cfg.aug.lambda_min,
            "lambda_max": cfg.aug.lambda_max,
            "cutmix_area_fraction": cfg.aug.cutmix_area_fraction,
            "p_mixup": cfg.aug.p_mixup,
            "reference_seed": cfg.aug.reference_seed,
        },
        "source": source,
    }


def write_eval_csv(report: EvalReport, path) -> None:
    """Per-seed accuracy rows plus mean/std, 6 decimal places."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["seed", "acc1", "acc5"])
        for seed, a1, a5 in zip(
            report.seeds, report.acc1_per_seed, report.acc5_per_seed
        ):
            out.writerow([seed, f"{a1:.6f}", f"{a5:.6f}"])
        out.writerow(["mean", f"{report.acc1_mean:.6f}", f"{report.acc5_mean:.6f}"])
        out.writerow(["std", f"{report.acc1_std:.6f}", f"{report.acc5_std:.6f}"])


DEFAULT_N_GRID = (4, 8, 16, 32)
DEFAULT_K_GRID = (1, 2, 5, 10, 20, "C")


@dataclass(frozen=True)
class SweepCell:
    n: int
    k: int
    acc1_mean: float
    acc1_std: float
    acc5_mean: float
    acc5_std: float


def sweep(cfg: EvalConfig, n_grid=DEFAULT_N_GRID, k_grid=DEFAULT_K_GRID):
    """One evaluate() per (N, K) grid cell with shared seeds.

    The literal entry "C" in the K grid resolves to the class count; numeric
    K values above C are dropped with a note (NSS is undefined there).
    Returns (cells, notes).
    """
    if not n_grid or not k_grid:
        raise ValueError("sweep grids must be nonempty")
    if isinstance(cfg.source, SyntheticSource):
        num_classes = cfg.source.spec.num_classes
    elif isinstance(cfg.source, ReplaySource):
        num_classes = ReplayProvider(cfg.source.path).num_classes
    else:
        raise ValueError("sweep supports synthetic and replay sources")
    notes = []
    ks = []
    for k in k_grid:
        resolved = num_classes if k == "C" else int(k)
        if resolved > num_classes:
            notes.append(f"dropped K={resolved}: exceeds C={num_classes}")
            continue
        if resolved not in ks:
            ks.append(resolved)
    cells = []
    for n in n_grid:
        for k in ks:
            report = evaluate(replace(cfg, n_experts=int(n), k=k))
            cells.append(
                SweepCell(
                    n=int(n),
                    k=k,
                    acc1_mean=report.acc1_mean,
                    acc1_std=report.acc1_std,
                    acc5_mean=report.acc5_mean,
                    acc5_std=report.acc5_std,
                )
            )
    return cells, notes


def write_sweep_cells_csv(cells, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["n", "k", "acc1_mean", "acc1_std", "acc5_mean", "acc5_std"])
        for c in cells:
            out.writerow(
                [c.n, c.k, f"{c.acc1_mean:.6f}", f"{c.acc1_std:.6f}",
                 f"{c.acc5_mean:.6f}", f"{c.acc5_std:.6f}"]
            )


def record_replay(
    manifest_path,
    adapter_command,
    aug: AugPolicyConfig,
    n_passes: int,
    seed: int,
    out_path,
    batch_size: int = 16,
    preprocess_cfg: PreprocessConfig | None = None,
    timeout: float = 60.0,
) -> tuple[int, int, int]:
    """Push every sample's N augmented passes through the adapter and write
    a replay file.  Returns (M, N, C).  Partial output is never left behind.
    """
    from .providers import replay_write

    if n_passes < 1:
        raise ValueError(f"n_passes must be >= 1, got {n_passes}")
    source = AdapterSource(
        command=adapter_command,
        manifest_path=manifest_path,
        preprocess=preprocess_cfg,
        timeout=timeout,
    )
    client, pre_cfg, manifest = _adapter_run_context(source)
    try:
        loader = _unit_tensor_loader(pre_cfg)
        ref = select_reference(manifest, aug.reference_seed, loader)
        m = len(manifest.entries)
        logits = np.empty((m, n_passes, client.num_classes), dtype=np.float32)
        labels = np.empty(m, dtype=np.int64)
        for i, (path, label) in enumerate(manifest.entries):
            rows = _adapter_sample_rows(
                client, loader(path), ref, "record", n_passes,
                aug, seed, i, pre_cfg, batch_size,
            )
            logits[i] = rows.astype("<f4")
            labels[i] = label
    finally:
        _safe_shutdown(client)
    replay_write(out_path, labels, logits)
    return m, n_passes, client.num_classes


PAIR_KEYS = ("hard_soft", "hard_logit", "soft_logit")


def conflict_scan(source, n_experts: int, k: int, run_seed: int = 1) -> dict:
    """Pairwise strategy-disagreement rates, raw logits vs after NSS."""
    if isinstance(source, SyntheticSource):
        provider = SyntheticProvider(source.spec, run_seed)
        rows_iter = _synthetic_rows(source.spec, run_seed, n_experts)
        num_classes = provider.num_classes
    elif isinstance(source, ReplaySource):
        provider = ReplayProvider(source.path)
        rows_iter = _replay_rows(provider, n_experts)
        num_classes = provider.num_classes
    else:
        raise ValueError("conflict scan supports synthetic and replay sources")
    if not 1 <= k <= num_classes:
        raise ValueError(f"k must be in [1, {num_classes}], got {k}")
    before = dict.fromkeys(PAIR_KEYS, 0)
    after = dict.fromkeys(PAIR_KEYS, 0)
    count = 0
    for _, rows in rows_iter:
        for counts, mat in ((before, rows), (after, nss_matrix(rows, k))):
            outcome = detect_conflict(mat)
            for a, b in outcome.conflict_pairs:
                counts[f"{a}_{b}"] += 1
        count += 1
    return {
        "num_samples": count,
        "n_experts": n_experts,
        "k": k,
        "before": {key: before[key] / count for key in PAIR_KEYS},
        "after": {key: after[key] / count for key in PAIR_KEYS},
    }


def jb_report(source, n_experts: int, run_seed: int = 1, alpha: float = 0.05):
    """Per-(image, class) normality tests over the provider's logit groups."""
    if isinstance(source, SyntheticSource):
        matrices = [rows for _, rows in _synthetic_rows(source.spec, run_seed, n_experts)]
    elif isinstance(source, ReplaySource):
        provider = ReplayProvider(source.path)
        matrices = [rows for _, rows in _replay_rows(provider, n_experts)]
    else:
        raise ValueError("jb report supports synthetic and replay sources")
    return jb_over_groups(matrices, alpha=alpha)


def write_jb_csv(report, results_path, ecdf_path) -> None:
    with open(results_path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["image_index", "class_index", "skew", "kurt", "jb", "p"])
        for image_index, class_index, r in report.results:
            out.writerow(
                [image_index, class_index, f"{r.skew:.17g}", f"{r.kurt:.17g}",
                 f"{r.jb:.17g}", f"{r.p_value:.17g}"]
            )
    with open(ecdf_path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["alpha", "fraction"])
        for p, frac in report.ecdf():
            out.writerow([f"{p:.17g}", f"{frac:.17g}"])


def holder_report(
    manifest_path,
    adapter_command,
    aug: AugPolicyConfig,
    n_passes: int,
    seed: int,
    batch_size: int = 16,
    preprocess_cfg: PreprocessConfig | None = None,
    timeout: float = 60.0,
) -> list[dict]:
    """Per-image power-law fit of logit distance vs input distance, with the
    induced variance bound.  Distances are taken on the tensors actually fed
    to the model (standardized passes).

    The run-wide reference image mixes with itself, so its passes are all
    identical and its fit is undefined; such images get a ``degenerate`` row
    instead of aborting the report.  If every image degenerates (for example
    an identity policy) there is nothing to fit and the degenerate-regressor
    error propagates.
    """
    source = AdapterSource(
        command=adapter_command,
        manifest_path=manifest_path,
        preprocess=preprocess_cfg,
        timeout=timeout,
    )
    client, pre_cfg, manifest = _adapter_run_context(source)
    out = []
    degenerate_count = 0
    try:
        loader = _unit_tensor_loader(pre_cfg)
        ref = select_reference(manifest, aug.reference_seed, loader)
        for i, (path, _) in enumerate(manifest.entries):
            x_unit = loader(path)
            passes = generate_passes(x_unit, ref, n_passes, aug, seed, i)
            tensors = [standardize(t, pre_cfg) for t, _ in passes]
            rows = _adapter_sample_rows(
                client, x_unit, ref, "holder", n_passes, aug, seed, i,
                pre_cfg, batch_size,
            )
            var_in = input_variance(tensors)
            var_z = logit_variance(rows)
            try:
                fit = holder_fit([t.data for t in tensors], rows)
            except DegenerateRegressorError:
                degenerate_count += 1
                nan = float("nan")
                out.append(
                    {
                        "image_index": i,
                        "c": nan,
                        "d": nan,
                        "r2": nan,
                        "pairs_used": 0,
                        "var_input": var_in,
                        "var_logits": var_z,
                        "jensen_bound": nan,
                        "satisfied": False,
                        "applicable": False,
                        "degenerate": True,
                    }
                )
                continue
            rep = jensen_bound_check(fit, var_in, var_z)
            out.append(
                {
                    "image_index": i,
                    "c": fit.c,
                    "d": fit.d,
                    "r2": fit.r2,
                    "pairs_used": fit.pairs_used,
                    "var_input": rep.var_input,
                    "var_logits": rep.var_logits,
                    "jensen_bound": rep.jensen_bound,
                    "satisfied": rep.satisfied,
                    "applicable": rep.applicable,
                    "degenerate": False,
                }
            )
    finally:
        _safe_shutdown(client)
    if out and degenerate_count == len(out):
        raise DegenerateRegressorError(
            "degenerate regressor: every image produced identical passes"
        )
    return out


def write_holder_csv(rows, path) -> None:
    cols = ["image_index", "c", "d", "r2", "pairs_used", "var_input",
            "var_logits", "jensen_bound", "satisfied", "applicable",
            "degenerate"]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for r in rows:
            out.writerow([r[c] if not isinstance(r[c], float) else f"{r[c]:.17g}"
                          for c in cols])


def fig10_report(
    n_experts: int = 32,
    trials: int = 10**5,
    seed: int = 1,
    paper_literal: bool = False,
    out_path=None,
):
    rows = sweep_fig10(
        n_experts=n_experts, trials=trials, seed=seed, paper_literal=paper_literal
    )
    if out_path is not None:
        write_sweep_csv(rows, out_path)
    return rows
