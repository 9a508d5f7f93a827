"""Readers and writers for datasets, tracks, edges, embeddings and metrics.

Every writer has an exact inverse reader. Parse failures raise
:class:`~gnntrack.errors.FormatError` naming the file and line.
"""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import FormatError
from .features import DESCRIPTOR_DIM, CellInstance, FrameRecord
from .lineage import LineageForest, Trajectory

FRAME_DIR = "frames"
LABEL_DIR = "labels"
GT_TRACKS = "gt_tracks.txt"
_FRAME_RE = re.compile(r"^t(\d+)\.pgm$")


# ------------------------------------------------------------------------- PGM

def write_pgm(path, array):
    """Binary (P5) PGM, 16-bit big-endian when any value exceeds 255."""
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValueError(f"PGM holds 2D grids, got shape {a.shape}")
    if a.size and (a.min() < 0 or a.max() > 65535):
        raise ValueError("PGM values must lie in 0..65535")
    maxval = 65535 if a.size and a.max() > 255 else 255
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + a.astype(dtype).tobytes())


def _pgm_tokens(data, path, count):
    """First ``count`` header tokens of a PGM file plus the offset just past them."""
    tokens, pos, line = [], 0, 1
    while len(tokens) < count:
        if pos >= len(data):
            raise FormatError(path, line, "truncated header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            line += ch == b"\n"
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append((data[start:pos].decode("ascii", "replace"), line))
    return tokens, pos, line


def read_pgm(path):
    data = Path(path).read_bytes()
    magic = data[:2].decode("ascii", "replace")
    if magic not in ("P2", "P5"):
        raise FormatError(path, 1, f"not a PGM file (magic {magic!r})")
    tokens, pos, line = _pgm_tokens(data, path, 4)
    try:
        w, h, maxval = (int(tok) for tok, _ in tokens[1:])
    except ValueError:
        bad = next((ln for tok, ln in tokens[1:] if not tok.isdigit()), line)
        raise FormatError(path, bad, "width, height and maxval must be integers") from None
    if w < 1 or h < 1 or not 0 < maxval <= 65535:
        raise FormatError(path, line, f"invalid dimensions {w}x{h} or maxval {maxval}")
    if magic == "P5":
        dtype = ">u2" if maxval > 255 else "u1"
        body = data[pos + 1:]
        need = w * h * np.dtype(dtype).itemsize
        if len(body) < need:
            raise FormatError(path, line + 1, f"expected {need} bytes of pixels, found {len(body)}")
        arr = np.frombuffer(body[:need], dtype=dtype).reshape(h, w)
    else:
        text = data[pos:].decode("ascii", "replace")
        vals = []
        for k, row in enumerate(text.splitlines()):
            row = row.split("#", 1)[0]
            for tok in row.split():
                if not tok.isdigit():
                    raise FormatError(path, line + k, f"bad pixel value {tok!r}")
                vals.append(int(tok))
        if len(vals) != w * h:
            raise FormatError(path, line, f"expected {w * h} pixel values, found {len(vals)}")
        arr = np.array(vals).reshape(h, w)
    if arr.size and arr.max() > maxval:
        raise FormatError(path, line, f"pixel value exceeds maxval {maxval}")
    return arr.astype(np.int64)


# --------------------------------------------------------------------- datasets

def write_dataset(out_dir, frames, forest=None, meta=None):
    out = Path(out_dir)
    (out / FRAME_DIR).mkdir(parents=True, exist_ok=True)
    (out / LABEL_DIR).mkdir(parents=True, exist_ok=True)
    for f in frames:
        image = np.rint(np.asarray(f.image)).astype(np.int64)
        write_pgm(out / FRAME_DIR / f"t{f.t:03d}.pgm", image)
        write_pgm(out / LABEL_DIR / f"t{f.t:03d}.pgm", f.labels)
    if forest is not None:
        write_tracks(out / GT_TRACKS, forest)
    if meta is not None:
        write_json(out / "dataset.json", meta)
    return out


def read_dataset(path):
    """Frames sorted by index plus the ground-truth forest when present (else ``None``)."""
    root = Path(path)
    fdir, ldir = root / FRAME_DIR, root / LABEL_DIR
    if not fdir.is_dir() or not ldir.is_dir():
        raise FileNotFoundError(f"{root} needs '{FRAME_DIR}/' and '{LABEL_DIR}/' subdirectories")
    frames = []
    for p in sorted(fdir.iterdir()):
        m = _FRAME_RE.match(p.name)
        if not m:
            continue
        lp = ldir / p.name
        if not lp.exists():
            raise FileNotFoundError(f"label map {lp} missing for frame {p}")
        image = read_pgm(p).astype(np.float64)
        labels = read_pgm(lp)
        if image.shape != labels.shape:
            raise FormatError(lp, 2, f"shape {labels.shape} differs from frame {image.shape}")
        frames.append(FrameRecord(int(m.group(1)), image, labels))
    if not frames:
        raise FileNotFoundError(f"no frames matching tNNN.pgm in {fdir}")
    frames.sort(key=lambda f: f.t)
    gt = read_tracks(root / GT_TRACKS) if (root / GT_TRACKS).exists() else None
    return frames, gt


# ----------------------------------------------------------------------- tracks

def instances_path(track_path):
    p = Path(track_path)
    return p.with_name(f"{p.stem}_instances.csv")


def write_tracks(path, forest):
    """``n t_init t_fin parent`` per trajectory plus ``<stem>_instances.csv``."""
    lines = [f"{tr.n} {tr.t_init} {tr.t_fin} {tr.parent}" for tr in forest.tracks]
    Path(path).write_text("".join(l + "\n" for l in lines))
    with open(instances_path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "label", "cell"])
        rows = sorted((t, lab, tr.n) for tr in forest.tracks for t, lab in tr.instances)
        w.writerows(rows)


def read_tracks(path):
    path = Path(path)
    spans = {}
    for k, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4 or not all(re.fullmatch(r"-?\d+", p) for p in parts):
            raise FormatError(path, k, "expected 4 integers 'n t_init t_fin parent'")
        n, a, b, par = map(int, parts)
        if n in spans:
            raise FormatError(path, k, f"duplicate track {n}")
        spans[n] = (a, b, par, k)
    members = {n: [] for n in spans}
    ipath = instances_path(path)
    for k, row in _csv_rows(ipath, ["frame", "label", "cell"]):
        t, lab, n = _ints(row, ipath, k)
        if n not in members:
            raise FormatError(ipath, k, f"cell {n} not in {path.name}")
        members[n].append((t, lab))
    tracks = []
    for n, (a, b, par, k) in spans.items():
        tr = Trajectory(n, par, a, b, sorted(members[n]))
        try:
            tr.validate()
        except ValueError as e:
            raise FormatError(path, k, str(e)) from None
        tracks.append(tr)
    forest = LineageForest(tracks)
    try:
        forest.validate()
    except ValueError as e:
        raise FormatError(path, 0, str(e)) from None
    return forest


# ------------------------------------------------------------------ detections

def _detection_header(ndim):
    axes = [f"centroid_{a}" for a in range(ndim)]
    box = [f"bbox_min_{a}" for a in range(ndim)] + [f"bbox_max_{a}" for a in range(ndim)]
    return (["frame", "label"] + axes + ["int_min", "int_max", "int_mean", "int_std", "area"] + box
            + ["major", "minor", "eccentricity"] + [f"d{k}" for k in range(DESCRIPTOR_DIM)])


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_detections(path, instances):
    """One row per cell instance; empty cells mark absent shape fields."""
    ndim = instances[0].ndim if instances else 2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_detection_header(ndim))
        for c in sorted(instances, key=lambda c: c.key):
            box = (list(c.bbox_min) + list(c.bbox_max)) if c.bbox_min is not None else [None] * (2 * ndim)
            w.writerow([c.t, c.label] + [_fmt(v) for v in c.centroid]
                       + [_fmt(v) for v in (c.int_min, c.int_max, c.int_mean, c.int_std, c.area)]
                       + ["" if v is None else int(v) for v in box]
                       + [_fmt(v) for v in (c.major, c.minor, c.eccentricity)]
                       + [_fmt(v) for v in c.descriptor])


def read_detections(path):
    path = Path(path)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise FormatError(path, 1, "empty file")
    ndim = sum(h.startswith("centroid_") for h in header)
    rows = _csv_rows(path, _detection_header(ndim))
    out = []
    for k, row in rows:
        try:
            vals = [None if v == "" else float(v) for v in row[2:]]
            t, lab = int(row[0]), int(row[1])
        except ValueError as e:
            raise FormatError(path, k, str(e)) from None
        cent = tuple(vals[:ndim])
        i = ndim
        imin, imax, imean, istd, area = vals[i:i + 5]
        i += 5
        box = vals[i:i + 2 * ndim]
        i += 2 * ndim
        major, minor, ecc = vals[i:i + 3]
        desc = np.array(vals[i + 3:], dtype=np.float64)
        has_box = box[0] is not None
        out.append(CellInstance(
            t=t, label=lab, centroid=cent, int_min=imin, int_max=imax, int_mean=imean, int_std=istd,
            area=area, bbox_min=tuple(int(v) for v in box[:ndim]) if has_box else None,
            bbox_max=tuple(int(v) for v in box[ndim:]) if has_box else None,
            major=major, minor=minor, eccentricity=ecc, descriptor=desc))
    return out


# ----------------------------------------------------------- embeddings, edges

def write_embeddings(path, keys, emb):
    emb = np.asarray(emb, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "label"] + [f"e{k}" for k in range(emb.shape[1])])
        for (t, lab), row in zip(keys, emb):
            w.writerow([t, lab] + [repr(float(v)) for v in row])


def read_embeddings(path):
    path = Path(path)
    keys, rows = [], []
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[:2] != ["frame", "label"]:
        raise FormatError(path, 1, "header must start with 'frame,label'")
    for k, row in _csv_rows(path, header):
        try:
            keys.append((int(row[0]), int(row[1])))
            rows.append([float(v) for v in row[2:]])
        except ValueError as e:
            raise FormatError(path, k, str(e)) from None
    return keys, np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 2)


EDGE_HEADER = ["src_frame", "src_label", "dst_frame", "dst_label", "prob", "active", "gt"]


def write_edges(path, keys, probs, active=None, gt=None):
    """Candidate edges with probabilities; ``active``/``gt`` columns may be blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_HEADER)
        for e, ((a, b), p) in enumerate(zip(keys, probs)):
            w.writerow([a[0], a[1], b[0], b[1], repr(float(p)),
                        "" if active is None else int(active[e]), "" if gt is None else int(gt[e])])


def read_edges(path):
    path = Path(path)
    keys, probs, active, gt = [], [], [], []
    for k, row in _csv_rows(path, EDGE_HEADER):
        try:
            st, sl, dt, dl = (int(v) for v in row[:4])
            keys.append(((st, sl), (dt, dl)))
            probs.append(float(row[4]))
            active.append(None if row[5] == "" else bool(int(row[5])))
            gt.append(None if row[6] == "" else bool(int(row[6])))
        except ValueError as e:
            raise FormatError(path, k, str(e)) from None
    return {"keys": keys, "probs": np.array(probs), "active": active, "gt": gt}


# ----------------------------------------------------------------- json / csv

def write_json(path, obj):
    """Stable, sorted JSON so identical content gives identical bytes."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(path, e.lineno, e.msg) from None


def write_curve(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _csv_rows(path, header):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != list(header):
            raise FormatError(path, 1, f"expected header {','.join(header)}")
        rows = []
        for k, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(path, k, f"expected {len(header)} fields, found {len(row)}")
            rows.append((k, row))
    return rows


def _ints(row, path, line):
    try:
        return [int(v) for v in row]
    except ValueError:
        raise FormatError(path, line, f"expected integers, got {row}") from None
