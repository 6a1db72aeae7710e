"""CSV readers and writers for features, labels, predictions and scores.

Row numbers in error messages count the header as row 1.
"""

import csv
import math

import numpy as np

from fermech import CLASS_NAMES
from fermech.errors import DataError

SCORE_HEADER = ["id", "an", "di", "fe", "ha", "sa", "su"]
LABEL_INDEX = {name: k for k, name in enumerate(CLASS_NAMES)}
SCORE_ROW_TOL = 1e-6


def label_to_index(text, path="<labels>", row=0):
    try:
        return LABEL_INDEX[text.strip().upper()]
    except KeyError:
        raise DataError(f"{path}: row {row}: unknown expression label {text!r}") from None


def _fmt(x):
    return repr(float(x))


def _rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows[0], rows[1:]


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _check_ids(path, ids):
    seen = set()
    for k, i in enumerate(ids):
        if i in seen:
            raise DataError(f"{path}: row {k + 2}: duplicate id {i!r}")
        seen.add(i)


def write_features(path, ids, features):
    f = np.asarray(features, dtype=np.float64)
    header = ["id"] + [f"f{k}" for k in range(f.shape[1])]
    _write(path, header, ([i] + [_fmt(v) for v in row] for i, row in zip(ids, f)))


def read_features(path):
    header, rows = _rows(path)
    d = len(header) - 1
    if d < 1 or header[0] != "id" or header[1:] != [f"f{k}" for k in range(d)]:
        raise DataError(f"{path}: row 1: expected header id,f0,...,f{{d-1}}")
    ids, data = [], []
    for n, row in enumerate(rows, start=2):
        if len(row) != d + 1:
            raise DataError(f"{path}: row {n}: expected {d + 1} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise DataError(f"{path}: row {n}: non-numeric feature value") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}: row {n}: non-finite feature value")
        ids.append(row[0])
        data.append(vals)
    _check_ids(path, ids)
    return ids, np.array(data, dtype=np.float64).reshape(len(ids), d)


def write_labels(path, ids, labels, changed=None):
    header = ["id", "label"] + (["changed"] if changed is not None else [])
    rows = []
    for k, (i, y) in enumerate(zip(ids, labels)):
        row = [i, CLASS_NAMES[int(y)]]
        if changed is not None:
            row.append(str(int(bool(changed[k]))))
        rows.append(row)
    _write(path, header, rows)


def read_labels(path):
    """Read ``id,label`` (optionally with a trailing ``changed`` column)."""
    header, rows = _rows(path)
    if header[:2] != ["id", "label"] or len(header) > 3 or header[2:] not in ([], ["changed"]):
        raise DataError(f"{path}: row 1: expected header id,label[,changed]")
    ids, labels = [], []
    for n, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {n}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[0])
        labels.append(label_to_index(row[1], path, n))
    _check_ids(path, ids)
    return ids, np.array(labels, dtype=np.int64)


def write_scores(path, ids, scores):
    s = np.asarray(scores, dtype=np.float64)
    _write(path, SCORE_HEADER, ([i] + [_fmt(v) for v in row] for i, row in zip(ids, s)))


def read_scores(path):
    header, rows = _rows(path)
    if [h.strip().lower() for h in header] != SCORE_HEADER:
        raise DataError(f"{path}: row 1: expected header {','.join(SCORE_HEADER)}")
    ids, data = [], []
    for n, row in enumerate(rows, start=2):
        if len(row) != len(SCORE_HEADER):
            raise DataError(f"{path}: row {n}: expected {len(SCORE_HEADER)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise DataError(f"{path}: row {n}: non-numeric score") from None
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise DataError(f"{path}: row {n}: scores must be finite and non-negative")
        if abs(sum(vals) - 1.0) > SCORE_ROW_TOL:
            raise DataError(f"{path}: row {n}: scores sum to {sum(vals)!r}, not 1")
        ids.append(row[0])
        data.append(vals)
    _check_ids(path, ids)
    return ids, np.array(data, dtype=np.float64).reshape(len(ids), len(SCORE_HEADER) - 1)


def read_predictions_any(path):
    """Labels from either a prediction file or a score file (argmax)."""
    header, _ = _rows(path)
    if [h.strip().lower() for h in header] == SCORE_HEADER:
        ids, s = read_scores(path)
        return ids, np.argmax(s, axis=1)
    return read_labels(path)


def align(path, ids, ref_ids):
    """Indices that reorder ``ids`` to match ``ref_ids`` exactly."""
    pos = {i: k for k, i in enumerate(ids)}
    missing = [i for i in ref_ids if i not in pos]
    extra = len(ids) - len(ref_ids)
    if missing or extra:
        what = f"missing id {missing[0]!r}" if missing else f"{extra} unexpected id(s)"
        raise DataError(f"{path}: sample ids do not match the reference set ({what})")
    return np.array([pos[i] for i in ref_ids], dtype=np.int64)
