import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from analytics import log_relative_variance, shifted_logvar_objective
from attention import AttentionBatch, attention_error, exact_attention, rf_attention
from dataio import LabeledDataset, Regime, RegimeSpec, split_905_5, synth_regime
from errors import FavorError, InvalidArgument, NumericOverflow
from features import Family, Mechanism, draw_features, feature_values, log_feature_values
from kernelcore import KernelSpec, PointSet, log_kernel_matrix, moment_stats
from linalg import DrawScheme, FeatureDraws, derive_rng
from mechanisms import MechanismRegistry, default_registry, fit_for_attention
from models import ExperimentResult, FitDump, ResultRecord
from qmc import QmcCorrelation, antithetic_correlation

logger = logging.getLogger(__name__)

GAUSSIAN = KernelSpec(alpha=-0.5)

# Stream namespaces for derive_rng, so cells of different kinds never share draws
_SETS, _DRAWS, _SPLIT, _BATCH = 0, 1, 2, 3


def qmc_correlation(
    scheme: DrawScheme, psi: Optional[float], m: int, d: int
) -> Optional[QmcCorrelation]:
    """Correlation block for a QMC run: uniform psi, or the antithetic preset when psi is None"""
    if scheme is not DrawScheme.QMC:
        return None
    if psi is None:
        return antithetic_correlation(m, d)
    return QmcCorrelation.uniform(psi, d, m)


def _add_context(e: FavorError, context: str) -> FavorError:
    """Prefix the message in place, keeping the error type and attributes"""
    e.args = (f"{context}: {e}",) + e.args[1:]
    return e


# ============================================================================
# Nadaraya-Watson classification
# ============================================================================


def _predict_from_scores(
    scores: np.ndarray, degenerate: np.ndarray, majority: int
) -> Tuple[np.ndarray, int]:
    pred = np.argmax(np.where(np.isfinite(scores), scores, -np.inf), axis=1)
    pred[degenerate] = majority
    return pred, int(degenerate.sum())


def _majority(train: LabeledDataset) -> int:
    return int(np.argmax(np.bincount(train.labels, minlength=train.class_count)))


def exact_predict(
    train: LabeledDataset, queries: PointSet, sigma: float
) -> Tuple[np.ndarray, int]:
    """
    Gaussian-kernel Nadaraya-Watson prediction on sigma-scaled points.

    Class scores are accumulated in log space, so kernel underflow never
    changes the argmax.

    Returns:
        Tuple of (predicted labels, number of majority-class fallbacks)
    """
    log_k = log_kernel_matrix(queries.scaled(sigma), train.points.scaled(sigma), GAUSSIAN)
    scores = np.full((queries.size, train.class_count), -np.inf)
    for c in range(train.class_count):
        mask = train.labels == c
        if np.any(mask):
            scores[:, c] = logsumexp(log_k[:, mask], axis=1)
    degenerate = ~np.any(np.isfinite(scores), axis=1)
    return _predict_from_scores(scores, degenerate, _majority(train))


def rf_predict(
    train: LabeledDataset,
    queries: PointSet,
    sigma: float,
    mech: Mechanism,
    draws: FeatureDraws,
) -> Tuple[np.ndarray, int]:
    """Nadaraya-Watson prediction with the kernel replaced by P S^T"""
    xs = queries.scaled(sigma)
    ys = train.points.scaled(sigma)
    onehot = np.eye(train.class_count)[train.labels]

    if mech.family.positive:
        log_p = log_feature_values(mech, draws, xs, 1, alpha=GAUSSIAN.alpha)
        log_s = log_feature_values(mech, draws, ys, 2, alpha=GAUSSIAN.alpha)
        p = np.exp(log_p - log_p.max(axis=1, keepdims=True))
        s = np.exp(log_s - log_s.max())
        scores = p @ (s.T @ onehot)
        total = scores.sum(axis=1)
        degenerate = ~np.isfinite(total) | (total <= 0.0)
    else:
        p = feature_values(mech, draws, xs, 1, alpha=GAUSSIAN.alpha)
        s = feature_values(mech, draws, ys, 2, alpha=GAUSSIAN.alpha)
        scores = p @ (s.T @ onehot)
        degenerate = ~np.all(np.isfinite(scores), axis=1)
    return _predict_from_scores(scores, degenerate, _majority(train))


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(pred == labels))


class ExperimentRunner:
    """Main orchestrator for the seeded experiment harness"""

    def __init__(self, config, registry: Optional[MechanismRegistry] = None):
        self.config = config
        self.registry = registry or default_registry(config)

    def _map(self, fn: Callable, cells: Sequence, threads: Optional[int]) -> List[Any]:
        """Run cells in a thread pool; results come back in cell order"""
        workers = max(1, threads or self.config.THREADS)
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(fn, cells))

    def _check_names(self, mechs: Sequence[str]):
        unknown = [m for m in mechs if m not in self.registry.builders]
        if unknown:
            raise InvalidArgument(f"unknown mechanisms {unknown}; known: {self.registry.names()}")

    # ------------------------------------------------------------------------
    # Variance comparison
    # ------------------------------------------------------------------------

    def _sample_sets(
        self,
        sigma: float,
        rng: np.random.Generator,
        regime: Regime,
        d: int,
        l: int,
        csv_x: Optional[PointSet],
        csv_y: Optional[PointSet],
    ) -> Tuple[PointSet, PointSet]:
        if csv_x is None:
            return synth_regime(RegimeSpec(regime=regime, sigma=sigma, l=l, d=d), rng)

        def pick(source: PointSet) -> PointSet:
            idx = rng.choice(source.size, size=min(l, source.size), replace=False)
            return PointSet(points=source.points[np.sort(idx)] * sigma)

        return pick(csv_x), pick(csv_y if csv_y is not None else csv_x)

    def _trig_log_rel_var(
        self, mech: Mechanism, xs: PointSet, ys: PointSet, rng: np.random.Generator
    ) -> Tuple[float, float]:
        """Mean log(Var / K^2) and mean log E[Z^2] of single-draw TrigRF products, by Monte Carlo"""
        n = self.config.VARIANCE_MC_SAMPLES
        chunk = max(1, int(self.config.MC_CHUNK))
        total = np.zeros((xs.size, ys.size))
        total_sq = np.zeros((xs.size, ys.size))
        for start in range(0, n, chunk):
            draws = draw_features(mech, min(chunk, n - start), xs.dim, rng)
            p = feature_values(mech, draws, xs, 1)
            s = feature_values(mech, draws, ys, 2)
            total += p @ s.T
            total_sq += (p * p) @ (s * s).T
        mean = total / n
        second = np.maximum(total_sq / n, np.finfo(float).tiny)
        var = np.maximum(second - mean**2, np.finfo(float).tiny)
        log_k = log_kernel_matrix(xs, ys)
        return float(np.mean(np.log(var) - 2.0 * log_k)), float(np.mean(np.log(second)))

    def variance_compare(
        self,
        mechs: Sequence[str],
        sigmas: Sequence[float],
        regime: Regime = Regime.NORMAL,
        d: int = 8,
        l: Optional[int] = None,
        set_pairs: Optional[int] = None,
        seed: Optional[int] = None,
        csv_x: Optional[PointSet] = None,
        csv_y: Optional[PointSet] = None,
        threads: Optional[int] = None,
    ) -> ExperimentResult:
        """
        Mean log relative variance log(Var / K^2) of a single-feature estimator.

        Every mechanism is fitted on each sampled pair of sets and evaluated on
        all of its pairs. Sets depend only on (seed, sigma, pair index), so all
        mechanisms see the same data.

        Returns:
            ExperimentResult with "mean_log_rel_var" and "mean_log_second_moment"
            records per (mechanism, sigma)
        """
        self._check_names(mechs)
        seed = self.config.SEED if seed is None else seed
        l = l or self.config.VARIANCE_L
        set_pairs = set_pairs or self.config.VARIANCE_SET_PAIRS
        if csv_x is not None:
            d = csv_x.dim

        def run(cell: Tuple[int, int]) -> List[ResultRecord]:
            mech_idx, sigma_idx = cell
            name, sigma = mechs[mech_idx], float(sigmas[sigma_idx])
            rel_vars, second_moments = [], []
            try:
                for t in range(set_pairs):
                    rng = derive_rng(seed, _SETS, sigma_idx, t)
                    xs, ys = self._sample_sets(sigma, rng, regime, d, l, csv_x, csv_y)
                    fitted = self.registry.build(name, moment_stats(xs, ys))
                    if fitted.mechanism.family is Family.TRIG:
                        draw_rng = derive_rng(seed, _DRAWS, mech_idx, sigma_idx, t)
                        rel_var, second = self._trig_log_rel_var(fitted.mechanism, xs, ys, draw_rng)
                    else:
                        rel_var = float(log_relative_variance(fitted.mechanism, xs, ys).mean())
                        second = shifted_logvar_objective(fitted.mechanism, xs, ys)
                    rel_vars.append(rel_var)
                    second_moments.append(second)
                values = {
                    "mean_log_rel_var": float(np.mean(rel_vars)),
                    "mean_log_second_moment": float(np.mean(second_moments)),
                }
            except NumericOverflow as e:
                logger.warning("%s at sigma=%g overflowed: %s", name, sigma, e)
                values = {"mean_log_rel_var": float("inf"), "mean_log_second_moment": float("inf")}
            except FavorError as e:
                raise _add_context(e, f"{name} at sigma={sigma:g}")
            logger.info("variance_compare %s sigma=%g: %s", name, sigma, values["mean_log_rel_var"])
            return [
                ResultRecord(
                    mechanism=name, M=1, sigma=sigma, metric=metric, value=value, seed=seed, L=l
                )
                for metric, value in values.items()
            ]

        cells = [(i, j) for i in range(len(mechs)) for j in range(len(sigmas))]
        records = [r for cell_records in self._map(run, cells, threads) for r in cell_records]
        return ExperimentResult(
            command="variance-compare",
            config={
                "mechs": list(mechs),
                "sigmas": [float(s) for s in sigmas],
                "regime": None if csv_x is not None else regime.value,
                "source": "csv" if csv_x is not None else "synthetic",
                "cross": csv_y is not None,
                "d": d,
                "L": l,
                "set_pairs": set_pairs,
                "seed": seed,
            },
            records=records,
        )

    # ------------------------------------------------------------------------
    # Kernel classification
    # ------------------------------------------------------------------------

    def kernel_classify(
        self,
        dataset: LabeledDataset,
        mechs: Sequence[str],
        m_grid: Optional[Sequence[int]] = None,
        sigmas: Optional[Sequence[float]] = None,
        seeds: Optional[int] = None,
        seed: Optional[int] = None,
        scheme: DrawScheme = DrawScheme.ORTHOGONAL,
        qmc_psi: Optional[float] = None,
        threads: Optional[int] = None,
    ) -> ExperimentResult:
        """
        Nadaraya-Watson classification with the Gaussian kernel, exact and approximated.

        Features use orthogonal draws unless another scheme is given.
        The 90/5/5 split is drawn once from the seed and shared by every
        mechanism. sigma is picked once per mechanism and M, by validation
        accuracy averaged over feature seeds; the reported accuracy is the mean
        test accuracy over feature seeds at that sigma.
        """
        self._check_names(mechs)
        seed = self.config.SEED if seed is None else seed
        m_grid = list(m_grid or self.config.M_GRID)
        seeds = seeds or self.config.CLASSIFY_SEEDS
        if sigmas is None:
            lo, hi, count = self.config.SIGMA_GRID
            sigmas = np.logspace(np.log10(lo), np.log10(hi), int(count)).tolist()
        sigmas = [float(s) for s in sigmas]

        train, val, test = split_905_5(dataset, derive_rng(seed, _SPLIT))
        d = dataset.points.dim

        # exact baseline
        val_acc = [accuracy(exact_predict(train, val.points, s)[0], val.labels) for s in sigmas]
        best = int(np.argmax(val_acc))
        pred, exact_fallbacks = exact_predict(train, test.points, sigmas[best])
        records = [
            ResultRecord(
                mechanism="exact",
                M=0,
                sigma=sigmas[best],
                metric=metric,
                value=value,
                seed=seed,
            )
            for metric, value in (
                ("accuracy", accuracy(pred, test.labels)),
                ("fallbacks", float(exact_fallbacks)),
            )
        ]

        fitted = {
            (name, j): self.registry.build(
                name, moment_stats(train.points.scaled(s), train.points.scaled(s))
            ).mechanism
            for name in mechs
            for j, s in enumerate(sigmas)
        }

        def run(cell: Tuple[int, int]) -> List[ResultRecord]:
            mech_idx, m_idx = cell
            name, m = mechs[mech_idx], m_grid[m_idx]
            corr = qmc_correlation(scheme, qmc_psi, m, d)
            # seeds x sigmas; NaN marks an overflowed (seed, sigma) cell
            val_acc = np.full((seeds, len(sigmas)), np.nan)
            test_acc = np.full((seeds, len(sigmas)), np.nan)
            fallbacks = np.zeros((seeds, len(sigmas)))
            for r in range(seeds):
                for j, s in enumerate(sigmas):
                    base = fitted[(name, j)]
                    mech = Mechanism(base.family, base.params, scheme, corr, name=name)
                    draw_rng = derive_rng(seed, _DRAWS, mech_idx, m_idx, r, j)
                    draws = draw_features(mech, m, d, draw_rng)
                    try:
                        v_pred, _ = rf_predict(train, val.points, s, mech, draws)
                        t_pred, t_fallbacks = rf_predict(train, test.points, s, mech, draws)
                    except NumericOverflow:
                        continue
                    val_acc[r, j] = accuracy(v_pred, val.labels)
                    test_acc[r, j] = accuracy(t_pred, test.labels)
                    fallbacks[r, j] = t_fallbacks

            # one sigma per (mechanism, M): best validation accuracy averaged over seeds
            usable = ~np.all(np.isnan(val_acc), axis=0)
            if not np.any(usable):
                logger.warning("kernel_classify %s M=%d overflowed for every sigma", name, m)
                return [
                    ResultRecord(mechanism=name, M=m, metric="accuracy", value=np.inf, seed=seed)
                ]
            mean_val = np.where(usable, np.nanmean(np.where(usable, val_acc, 0.0), axis=0), -np.inf)
            best_j = int(np.argmax(mean_val))
            value = float(np.nanmean(test_acc[:, best_j]))
            logger.info(
                "kernel_classify %s M=%d: sigma %g, accuracy %.4f", name, m, sigmas[best_j], value
            )
            return [
                ResultRecord(
                    mechanism=name, M=m, sigma=sigmas[best_j], metric=metric, value=v, seed=seed
                )
                for metric, v in (
                    ("accuracy", value),
                    ("fallbacks", float(fallbacks[:, best_j].sum())),
                )
            ]

        cells = [(i, j) for i in range(len(mechs)) for j in range(len(m_grid))]
        for cell_records in self._map(run, cells, threads):
            records.extend(cell_records)

        return ExperimentResult(
            command="kernel-classify",
            config={
                "mechs": list(mechs),
                "M_grid": m_grid,
                "sigmas": sigmas,
                "seeds": seeds,
                "seed": seed,
                "scheme": scheme.value,
                "qmc_psi": qmc_psi,
                "splits": [train.size, val.size, test.size],
                "classes": dataset.class_count,
            },
            records=records,
        )

    # ------------------------------------------------------------------------
    # Attention benchmark
    # ------------------------------------------------------------------------

    def attention_bench(
        self,
        lengths: Sequence[int],
        d: int = 16,
        m: Optional[int] = None,
        mech_name: str = "sderf",
        seeds: int = 3,
        seed: Optional[int] = None,
        scheme: DrawScheme = DrawScheme.IID,
        qmc_psi: Optional[float] = None,
        include_timings: bool = True,
        threads: Optional[int] = None,
    ) -> ExperimentResult:
        """
        Exact vs random-feature attention on Gaussian batches.

        Records the median relative error per length and, with timings, the
        median wall time of both paths plus log-log slopes of time against L.
        Timed runs execute on a single worker.
        """
        self._check_names([mech_name])
        seed = self.config.SEED if seed is None else seed
        m = m or self.config.DEFAULT_M
        corr = qmc_correlation(scheme, qmc_psi, m, d)

        def run(cell: Tuple[int, int]) -> Tuple[float, float, float]:
            length_idx, r = cell
            length = int(lengths[length_idx])
            rng = derive_rng(seed, _BATCH, length_idx, r)
            q, k, v = (rng.standard_normal((length, d)) for _ in range(3))
            batch = AttentionBatch(q=q, k=k, v=v)
            mech = fit_for_attention(batch, mech_name, self.registry, scheme, corr).mechanism

            start = time.perf_counter()
            y_exact = exact_attention(batch)
            exact_time = time.perf_counter() - start
            start = time.perf_counter()
            y_rf, _ = rf_attention(batch, mech, m, derive_rng(seed, _DRAWS, length_idx, r))
            rf_time = time.perf_counter() - start
            return attention_error(y_exact, y_rf), exact_time, rf_time

        cells = [(i, r) for i in range(len(lengths)) for r in range(seeds)]
        outcomes = self._map(run, cells, 1 if include_timings else threads)

        def record(name: str, mm: int, metric: str, value: float, length=None):
            return ResultRecord(
                mechanism=name, M=mm, metric=metric, value=value, seed=seed, L=length
            )

        records = []
        exact_times, rf_times = [], []
        for i, length in enumerate(lengths):
            rows = np.array(outcomes[i * seeds : (i + 1) * seeds])
            error = float(np.median(rows[:, 0]))
            records.append(record(mech_name, m, "attention_error", error, int(length)))
            if include_timings:
                exact_times.append(float(np.median(rows[:, 1])))
                rf_times.append(float(np.median(rows[:, 2])))
                records.append(
                    record("exact", 0, "time_seconds", exact_times[-1], int(length))
                )
                records.append(
                    record(mech_name, m, "time_seconds", rf_times[-1], int(length))
                )
            logger.info("attention_bench L=%d: error %.4g", length, error)

        if include_timings and len(lengths) >= 2:
            log_l = np.log(np.asarray(lengths, dtype=float))
            for name, times, mm in (("exact", exact_times, 0), (mech_name, rf_times, m)):
                slope = np.polyfit(log_l, np.log(np.maximum(times, 1e-12)), 1)[0]
                records.append(record(name, mm, "time_slope", float(slope)))

        return ExperimentResult(
            command="attention-bench",
            config={
                "lengths": [int(x) for x in lengths],
                "d": d,
                "M": m,
                "mechanism": mech_name,
                "seeds": seeds,
                "seed": seed,
                "scheme": scheme.value,
                "qmc_psi": qmc_psi,
                "timings": include_timings,
            },
            records=records,
        )

    # ------------------------------------------------------------------------
    # Parameter dump
    # ------------------------------------------------------------------------

    def fit_dump(
        self,
        mech_name: str,
        xs: PointSet,
        ys: Optional[PointSet] = None,
        source: Optional[Dict[str, Any]] = None,
    ) -> ExperimentResult:
        """Fit one mechanism and emit its parameters with full precision"""
        self._check_names([mech_name])
        ys = xs if ys is None else ys
        fitted = self.registry.build(mech_name, moment_stats(xs, ys))
        records = []
        if fitted.report is not None:
            for metric in ("objective_value", "phi"):
                records.append(
                    ResultRecord(
                        mechanism=mech_name,
                        M=0,
                        metric=metric,
                        value=getattr(fitted.report, metric),
                        seed=self.config.SEED,
                    )
                )
        return ExperimentResult(
            command="fit-dump",
            config={
                "mechanism": mech_name,
                "d": xs.dim,
                "L_x": xs.size,
                "L_y": ys.size,
                **(source or {}),
            },
            records=records,
            parameters=FitDump.from_fitted(fitted),
        )
