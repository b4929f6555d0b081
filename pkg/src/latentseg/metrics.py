"""Evaluation measures for binary-map prediction: MAE, max F, weighted F, S, E.

Conventions follow the standard saliency/DIS reference implementations:
beta^2 = 0.3 for the thresholded F-measure, beta^2 = 1 for the weighted
F-measure, alpha = 0.5 for the structure measure, and a shared 256-point
threshold grid k/255 for the F and E sweeps. Predictions are continuous maps
in [0, 1]; ground truth is binary.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

EPS = 1e-20
THRESHOLDS = np.arange(256, dtype=np.float64) / 255.0

METRIC_COLUMNS = ("f_max", "f_weighted", "e_measure", "s_measure", "mae")


def binarize_at(P: np.ndarray, tau: float) -> np.ndarray:
    """Binarize at level tau; level 0 keeps strictly positive responses so a
    binary prediction reproduces itself at every grid threshold."""
    return P > 0.0 if tau == 0.0 else P >= tau


def _as_pred(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.min() < -1e-9 or P.max() > 1.0 + 1e-9:
        raise ValueError(f"prediction values outside [0,1]: [{P.min()}, {P.max()}]")
    return np.clip(P, 0.0, 1.0)


def _as_gt(G) -> np.ndarray:
    G = np.asarray(G)
    if G.dtype != bool:
        G = G > 0.5
    return G


def _check_shapes(P, G):
    if P.shape != G.shape:
        raise ValueError(f"shape mismatch: pred {P.shape} vs gt {G.shape}")


def mae(P, G) -> float:
    """Mean absolute error between a prediction map and a binary ground truth."""
    P = _as_pred(P)
    G = _as_gt(G)
    _check_shapes(P, G)
    return float(np.mean(np.abs(P - G.astype(np.float64))))


def f_max(P, G) -> float:
    """Max F-measure over 256 binarization thresholds, beta^2 = 0.3."""
    P = _as_pred(P)
    G = _as_gt(G)
    _check_shapes(P, G)
    if not G.any():
        warnings.warn("f_max: ground truth has no foreground, returning 0 by convention")
        return 0.0
    beta2 = 0.3
    gt_sum = G.sum()
    bins = P[None, :, :] >= THRESHOLDS[:, None, None]
    bins[0] = P > 0.0
    tp = np.logical_and(bins, G[None, :, :]).sum(axis=(1, 2)).astype(np.float64)
    pred_sum = bins.sum(axis=(1, 2)).astype(np.float64)
    prec = np.where(pred_sum > 0, tp / np.maximum(pred_sum, 1), 0.0)
    rec = tp / gt_sum
    denom = beta2 * prec + rec
    f = np.where(denom > 0, (1.0 + beta2) * prec * rec / np.maximum(denom, EPS), 0.0)
    return float(f.max())


def _gaussian_kernel_7x5() -> np.ndarray:
    # 7x7 kernel, sigma 5, normalized (matches fspecial('gaussian', 7, 5))
    ax = np.arange(7, dtype=np.float64) - 3.0
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx**2 + yy**2) / (2.0 * 5.0**2))
    return k / k.sum()


# ties in nearest-foreground distance are broken toward the row-major-first
# foreground pixel; above this pair count the exact search is too big and the
# library distance transform (its own tie-breaking) takes over
_EXACT_NEAREST_LIMIT = 64_000_000


def _nearest_foreground(G: np.ndarray):
    """Distance to and index of the nearest foreground pixel, exact lexicographic
    tie-break (first in row-major order)."""
    h, w = G.shape
    fg_r, fg_c = np.nonzero(G)
    n_fg = fg_r.size
    if h * w * n_fg > _EXACT_NEAREST_LIMIT:
        dst, idx = ndimage.distance_transform_edt(~G, return_indices=True)
        return dst, idx[0], idx[1]

    rows = np.arange(h)[:, None].repeat(w, axis=1).ravel()
    cols = np.arange(w)[None, :].repeat(h, axis=0).ravel()
    best_d = np.empty(h * w, dtype=np.int64)
    best_i = np.empty(h * w, dtype=np.int64)
    chunk = max(1, 2**22 // max(n_fg, 1))
    for start in range(0, h * w, chunk):
        sl = slice(start, start + chunk)
        dr = rows[sl, None] - fg_r[None, :]
        dc = cols[sl, None] - fg_c[None, :]
        d2 = dr * dr + dc * dc
        amin = np.argmin(d2, axis=1)  # first minimum = row-major-first fg pixel
        best_i[sl] = amin
        best_d[sl] = d2[np.arange(d2.shape[0]), amin]
    dst = np.sqrt(best_d.astype(np.float64)).reshape(h, w)
    return dst, fg_r[best_i].reshape(h, w), fg_c[best_i].reshape(h, w)


def f_weighted(P, G) -> float:
    """Weighted F-measure: dependency- and distance-weighted errors, beta^2 = 1.

    Background errors are propagated from the nearest foreground pixel, smoothed
    with a 7x7 Gaussian (sigma 5), and down-weighted by distance to the
    foreground via B = 2 - exp(ln(0.5)/5 * D).
    """
    P = _as_pred(P)
    G = _as_gt(G)
    _check_shapes(P, G)
    if not G.any():
        warnings.warn("f_weighted: ground truth has no foreground, returning 0 by convention")
        return 0.0

    E = np.abs(P - G.astype(np.float64))

    dst, src_r, src_c = _nearest_foreground(G)
    Et = E.copy()
    Et[~G] = E[src_r[~G], src_c[~G]]

    EA = ndimage.convolve(Et, _gaussian_kernel_7x5(), mode="constant", cval=0.0)
    min_e_ea = E.copy()
    sel = G & (EA < E)
    min_e_ea[sel] = EA[sel]

    B = np.ones_like(E)
    B[~G] = 2.0 - np.exp(np.log(0.5) / 5.0 * dst[~G])
    Ew = min_e_ea * B

    tpw = G.sum() - Ew[G].sum()
    fpw = Ew[~G].sum()
    rec = 1.0 - Ew[G].mean()
    prec = tpw / (EPS + tpw + fpw)
    return float(2.0 * rec * prec / (EPS + rec + prec))


def _ssim_region(pred: np.ndarray, gt: np.ndarray) -> float:
    # structural similarity of one region, as used by the structure measure
    if pred.size == 0:
        return 0.0
    n = pred.size
    x = pred.mean()
    y = gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + EPS)
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0.0:
        return float(a / (b + EPS))
    return 1.0 if b == 0.0 else 0.0


def _s_object(P: np.ndarray, G: np.ndarray) -> float:
    def obj(vals: np.ndarray) -> float:
        if vals.size == 0:
            return 0.0
        x = vals.mean()
        sx = vals.std()
        return float(2.0 * x / (x * x + 1.0 + sx + EPS))

    o_fg = obj(P[G])
    o_bg = obj(1.0 - P[~G])
    mu = G.mean()
    return mu * o_fg + (1.0 - mu) * o_bg


def _s_region(P: np.ndarray, G: np.ndarray) -> float:
    rows, cols = G.shape
    total = G.sum()
    j = np.arange(rows, dtype=np.float64)
    i = np.arange(cols, dtype=np.float64)
    X = int(round(float((G.sum(axis=0) * i).sum() / total)))
    Y = int(round(float((G.sum(axis=1) * j).sum() / total)))

    area = rows * cols
    w1 = X * Y / area
    w2 = (cols - X) * Y / area
    w3 = X * (rows - Y) / area
    w4 = 1.0 - w1 - w2 - w3

    gd = G.astype(np.float64)
    q1 = _ssim_region(P[:Y, :X], gd[:Y, :X])
    q2 = _ssim_region(P[:Y, X:], gd[:Y, X:])
    q3 = _ssim_region(P[Y:, :X], gd[Y:, :X])
    q4 = _ssim_region(P[Y:, X:], gd[Y:, X:])
    return w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4


def s_measure(P, G, alpha: float = 0.5) -> float:
    """Structure measure: alpha-weighted object and region similarity.

    Degenerate conventions: all-background GT -> 1 - mean(P); all-foreground
    GT -> mean(P).
    """
    P = _as_pred(P)
    G = _as_gt(G)
    _check_shapes(P, G)
    y = G.mean()
    if y == 0.0:
        return float(1.0 - P.mean())
    if y == 1.0:
        return float(P.mean())
    score = alpha * _s_object(P, G) + (1.0 - alpha) * _s_region(P, G)
    return float(max(score, 0.0))


def e_measure(P, G, mode: str = "mean") -> float:
    """Enhanced-alignment measure averaged over the 256-point threshold grid.

    mode="adaptive" uses the single adaptive threshold 2*mean(P) instead of the
    sweep (kept for completeness; the mean-over-thresholds variant is the one
    reported).
    """
    P = _as_pred(P)
    G = _as_gt(G)
    _check_shapes(P, G)
    if mode == "mean":
        taus = THRESHOLDS
    elif mode == "adaptive":
        taus = np.array([min(2.0 * P.mean(), 1.0)])
    else:
        raise ValueError(f"unknown e_measure mode {mode!r}")

    gd = G.astype(np.float64)
    g_mean = gd.mean()
    scores = np.empty(len(taus))
    for k, tau in enumerate(taus):
        binp = binarize_at(P, tau).astype(np.float64)
        if g_mean == 0.0:
            enhanced = 1.0 - binp
        elif g_mean == 1.0:
            enhanced = binp
        else:
            phi_g = gd - g_mean
            phi_p = binp - binp.mean()
            align = 2.0 * phi_g * phi_p / (phi_g**2 + phi_p**2 + EPS)
            enhanced = (align + 1.0) ** 2 / 4.0
        scores[k] = enhanced.mean()
    return float(scores.mean())


def compute_all(P, G) -> dict:
    """All five measures for one prediction/ground-truth pair."""
    return {
        "f_max": f_max(P, G),
        "f_weighted": f_weighted(P, G),
        "e_measure": e_measure(P, G),
        "s_measure": s_measure(P, G),
        "mae": mae(P, G),
    }


@dataclass
class MetricsReport:
    """Per-image metric records plus arithmetic-mean aggregates."""

    per_image: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def add(self, image_id: str, values: dict):
        rec = {"id": image_id}
        rec.update({k: float(values[k]) for k in METRIC_COLUMNS})
        self.per_image.append(rec)

    @property
    def count(self) -> int:
        return len(self.per_image)

    @property
    def aggregate(self) -> dict:
        if not self.per_image:
            return {k: float("nan") for k in METRIC_COLUMNS}
        return {
            k: float(np.mean([rec[k] for rec in self.per_image])) for k in METRIC_COLUMNS
        }

    def to_csv(self) -> str:
        # column order mirrors the usual benchmark tables: F_max, F_w, E, S, M
        lines = ["id," + ",".join(METRIC_COLUMNS)]
        for rec in sorted(self.per_image, key=lambda r: r["id"]):
            lines.append(
                rec["id"] + "," + ",".join(f"{rec[k]:.6f}" for k in METRIC_COLUMNS)
            )
        agg = self.aggregate
        lines.append("mean," + ",".join(f"{agg[k]:.6f}" for k in METRIC_COLUMNS))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "count": self.count,
                "aggregate": self.aggregate,
                "per_image": sorted(self.per_image, key=lambda r: r["id"]),
                "skipped": self.skipped,
            },
            indent=2,
        )


def evaluate_pairs(pairs) -> MetricsReport:
    """Score an iterable of (id, prediction, ground truth) triples."""
    report = MetricsReport()
    for image_id, P, G in sorted(pairs, key=lambda x: x[0]):
        report.add(image_id, compute_all(P, G))
    return report


def evaluate_dirs(pred_dir, gt_dir) -> MetricsReport:
    """Score matching 8-bit grayscale files from two directories.

    Files are matched by stem; unmatched ids are recorded in report.skipped.
    """
    from pathlib import Path

    from PIL import Image

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {p.stem: p for p in sorted(pred_dir.iterdir()) if p.suffix.lower() == ".png"}
    gts = {p.stem: p for p in sorted(gt_dir.iterdir()) if p.suffix.lower() == ".png"}

    report = MetricsReport()
    for stem in sorted(set(preds) | set(gts)):
        if stem not in preds or stem not in gts:
            report.skipped.append(stem)
            continue
        P = np.asarray(Image.open(preds[stem]).convert("L"), dtype=np.float64) / 255.0
        G = np.asarray(Image.open(gts[stem]).convert("L"), dtype=np.float64) / 255.0
        report.add(stem, compute_all(P, G))
    if report.skipped:
        warnings.warn(f"evaluate: skipped unmatched ids: {report.skipped}")
    return report
