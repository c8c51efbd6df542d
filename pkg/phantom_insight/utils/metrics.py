import json
from dataclasses import astuple, dataclass

import numpy as np
import py_sod_metrics

from phantom_insight.utils.errors import InvalidArgumentError

THRESHOLD = 0.5
COLUMNS = ["S_alpha", "Fw_beta", "E_phi", "M", "mDice", "mIoU"]


class AverageMeter(object):
    """Computes and stores the average and current value"""

    def __init__(self):
        self.reset()

    def reset(self):
        self.val = 0
        self.avg = 0
        self.sum = 0
        self.count = 0

    def update(self, val, n=1):
        self.val = val
        self.sum += val * n
        self.count += n

    def get_avg(self, percentage=False):
        return self.sum / self.count if not percentage else self.sum * 100 / self.count


def _check_pair(gt, pred):
    gt, pred = np.asarray(gt), np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise InvalidArgumentError(f"gt {gt.shape} and prediction {pred.shape} differ in size")
    return gt.astype(bool), pred


def dice_iou(gt, pred):
    """Dice and IoU of the prediction binarized at 0.5; two empty masks score 1."""
    gt, pred = _check_pair(gt, pred)
    binary = pred >= THRESHOLD
    inter = np.logical_and(gt, binary).sum()
    total = gt.sum() + binary.sum()
    if total == 0:
        return 1.0, 1.0
    return 2.0 * inter / total, inter / (total - inter)


def pixel_metrics(gts, preds):
    """(MAE, mDice, mIoU) over aligned frame lists."""
    if len(gts) != len(preds):
        raise InvalidArgumentError(f"got {len(gts)} gt frames but {len(preds)} predictions")
    if not gts:
        raise InvalidArgumentError("no frames to evaluate")
    maes, dices, ious = [], [], []
    for gt, pred in zip(gts, preds):
        g, p = _check_pair(gt, pred)
        maes.append(np.abs(p - g).mean())
        dice, iou = dice_iou(g, p)
        dices.append(dice)
        ious.append(iou)
    return float(np.mean(maes)), float(np.mean(dices)), float(np.mean(ious))


def s_measure(gt, pred, alpha=0.5):
    """Structure measure scored on the raw [0, 1] prediction."""
    gt, pred = _check_pair(gt, pred)
    return float(py_sod_metrics.Smeasure(alpha=alpha).cal_sm(pred, gt))


def weighted_f(gt, pred, beta=1.0):
    """Weighted F-measure on the raw prediction; 0 when the gt is empty."""
    gt, pred = _check_pair(gt, pred)
    if not gt.any():
        return 0.0
    return float(py_sod_metrics.WeightedFmeasure(beta=beta).cal_wfm(pred, gt))


def e_measure(gt, pred):
    """Enhanced-alignment measure of the prediction binarized at 0.5."""
    gt, pred = _check_pair(gt, pred)
    g = gt.astype(np.float64)
    p = (pred >= THRESHOLD).astype(np.float64)
    mean_gt = g.mean()
    if mean_gt == 0.0:
        enhanced = 1.0 - p
    elif mean_gt == 1.0:
        enhanced = p
    else:
        phi_g = g - mean_gt
        phi_p = p - p.mean()
        align = 2.0 * phi_g * phi_p / (phi_g * phi_g + phi_p * phi_p + 1e-20)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


@dataclass
class MetricReport:
    s_alpha: float
    f_w_beta: float
    e_phi: float
    mae: float
    m_dice: float
    m_iou: float

    def values(self):
        return astuple(self)

    def to_json(self, **extra):
        record = dict(extra)
        record.update(zip(COLUMNS, self.values()))
        record["E_phi_threshold"] = THRESHOLD
        return json.dumps(record)

    @classmethod
    def mean(cls, reports):
        if not reports:
            raise InvalidArgumentError("no reports to average")
        return cls(*np.mean([r.values() for r in reports], axis=0).tolist())


def evaluate_video(gts, preds):
    """Per-frame metrics averaged over the frames that have predictions."""
    if len(preds) == 0:
        raise InvalidArgumentError("empty prediction set")
    mae, m_dice, m_iou = pixel_metrics(gts, preds)
    s = [s_measure(g, p) for g, p in zip(gts, preds)]
    e = [e_measure(g, p) for g, p in zip(gts, preds)]

    # Frames with empty gt are left out of the weighted-F mean
    scored = [weighted_f(g, p) for g, p in zip(gts, preds) if np.asarray(g).any()]
    if scored:
        fw = float(np.mean(scored))
    else:
        fw = 1.0 if all(not (np.asarray(p) >= THRESHOLD).any() for p in preds) else 0.0

    return MetricReport(
        s_alpha=float(np.mean(s)), f_w_beta=fw, e_phi=float(np.mean(e)), mae=mae, m_dice=m_dice, m_iou=m_iou
    )


def format_table(rows):
    """Fixed-width table; rows are (name, MetricReport) pairs."""
    width = max([len("video")] + [len(name) for name, _ in rows])
    lines = [f"{'video':<{width}}  " + "  ".join(f"{c:>8}" for c in COLUMNS)]
    for name, report in rows:
        lines.append(f"{name:<{width}}  " + "  ".join(f"{v:>8.4f}" for v in report.values()))
    return "\n".join(lines)


