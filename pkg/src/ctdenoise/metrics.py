"""Image quality metrics on unit-scaled images, plus batch reports.

PSNR is defined through RMSE with data range 1.0, which is the convention
that makes reported (PSNR, RMSE) pairs internally consistent; identical
images get an explicit +inf sentinel. SSIM is the single-scale index with
the canonical 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03.
"""

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .ctdata import TRAIN_WINDOW, hu_scale, read_ctf
from .errors import ConfigError, DataError, NumericsError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def rmse(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"rmse shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b, max_val=1.0):
    """20*log10(max_val / rmse); +inf for identical images."""
    r = rmse(a, b)
    if r == 0.0:
        return math.inf
    return 20.0 * math.log10(max_val / r)


def psnr_from_rmse(r, max_val=1.0):
    if r <= 0:
        return math.inf
    return 20.0 * math.log10(max_val / r)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, data_range=1.0):
    """Mean single-scale SSIM over sliding Gaussian windows (valid region)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ConfigError(
            f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    win = _gaussian_window()
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    e_aa = convolve2d(a * a, win, mode="valid")
    e_bb = convolve2d(b * b, win, mode="valid")
    e_ab = convolve2d(a * b, win, mode="valid")
    var_a = e_aa - mu_a ** 2
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    ids: list
    psnr: list
    ssim: list
    rmse: list

    @property
    def mean(self):
        return (
            float(np.mean(self.psnr)),
            float(np.mean(self.ssim)),
            float(np.mean(self.rmse)),
        )

    @property
    def std(self):
        with np.errstate(invalid="ignore"):  # inf psnr rows make std nan
            return (
                float(np.std(self.psnr)),
                float(np.std(self.ssim)),
                float(np.std(self.rmse)),
            )

    def check_consistency(self, tol_db=1e-3):
        """psnr == -20*log10(rmse) (data range 1) must hold row by row."""
        for sid, p, r in zip(self.ids, self.psnr, self.rmse):
            if r > 0 and abs(p + 20.0 * math.log10(r)) > tol_db:
                raise NumericsError(
                    f"psnr/rmse inconsistency for {sid}: {p} vs rmse {r}"
                )


def _fmt(v):
    if math.isinf(v):
        return "inf"
    return format(v, ".9g")


def write_report_csv(report: MetricReport, path):
    report.check_consistency()
    mean, std = report.mean, report.std
    with open(path, "w") as f:
        f.write("id,psnr_db,ssim,rmse\n")
        for sid, p, s, r in zip(report.ids, report.psnr, report.ssim, report.rmse):
            f.write(f"{sid},{_fmt(p)},{_fmt(s)},{_fmt(r)}\n")
        f.write(f"mean,{_fmt(mean[0])},{_fmt(mean[1])},{_fmt(mean[2])}\n")
        f.write(f"std,{_fmt(std[0])},{_fmt(std[1])},{_fmt(std[2])}\n")


def _id_map(directory):
    """Slice id -> path. In mixed dataset dirs the _full half is the reference."""
    if not os.path.isdir(directory):
        raise DataError(f"directory {directory} does not exist")
    out = {}
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".ctf"):
            continue
        stem = name[: -len(".ctf")]
        sid = stem.split("_", 1)[0]
        if sid in out:
            have_full = out[sid].endswith("_full.ctf")
            if name.endswith("_full.ctf") and not have_full:
                out[sid] = os.path.join(directory, name)
            elif name.endswith("_full.ctf") == have_full:
                raise DataError(f"ambiguous slice id {sid!r} in {directory}")
            continue
        out[sid] = os.path.join(directory, name)
    if not out:
        raise DataError(f"no .ctf slices in {directory}")
    return out


def _load_unit(path):
    values, unit = read_ctf(path)
    return hu_scale(values, TRAIN_WINDOW) if unit == "hu" else values


def evaluate_run(denoised_dir, reference_dir, out_csv=None) -> MetricReport:
    """Per-pair metrics for matching slice ids, plus aggregates."""
    den = _id_map(denoised_dir)
    ref = _id_map(reference_dir)
    if set(den) != set(ref):
        missing = sorted(set(den) ^ set(ref))
        raise DataError(f"unmatched slice ids between directories: {missing}")
    report = MetricReport([], [], [], [])
    for sid in sorted(den):
        a = _load_unit(den[sid])
        b = _load_unit(ref[sid])
        report.ids.append(sid)
        report.psnr.append(psnr(a, b))
        report.ssim.append(ssim(a, b))
        report.rmse.append(rmse(a, b))
    report.check_consistency()
    if out_csv:
        write_report_csv(report, out_csv)
    return report
