import numpy as np

from fermech import CLASS_NAMES, NUM_CLASSES


def confusion_matrix(y_true, y_pred, k=NUM_CLASSES):
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def per_class_f1(cm):
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def mean_f1(per_class):
    return float(np.mean(np.asarray(per_class, dtype=np.float64)))


def macro_f1(y_true, y_pred):
    return mean_f1(per_class_f1(confusion_matrix(y_true, y_pred)))


def format_f1_table(rows):
    """Aligned text table: one row per method, per-class F1 then the mean.

    ``rows`` is a sequence of ``(name, per_class_f1)`` pairs.
    """
    names = [n for n, _ in rows]
    width = max([len("Method")] + [len(n) for n in names])
    cols = list(CLASS_NAMES) + ["MEAN"]
    lines = ["  ".join(["Method".ljust(width)] + [c.rjust(6) for c in cols])]
    for name, f1 in rows:
        vals = [f"{v:.4f}" for v in f1] + [f"{mean_f1(f1):.4f}"]
        lines.append("  ".join([name.ljust(width)] + vals))
    return "\n".join(lines) + "\n"


def f1_table_csv_rows(rows):
    header = ["method"] + [c.lower() for c in CLASS_NAMES] + ["mean"]
    body = [[name] + [f"{v:.4f}" for v in f1] + [f"{mean_f1(f1):.4f}"] for name, f1 in rows]
    return header, body
