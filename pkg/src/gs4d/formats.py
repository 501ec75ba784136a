"""File formats: splat PLY, PFM float maps, PNG images, track tables, manifests.

Binary layouts are little-endian and carry 32-bit floats, the de-facto
interchange precision for splat files and float maps.  Saving therefore
quantizes float64 parameters once; loading returns exactly the stored values
and re-saving reproduces the file byte for byte.

Our own container formats are versioned (PLY via a comment line, the manifest
via a ``version`` key); files written by a newer version are rejected rather
than misread.  PFM and PNG are fixed external formats identified by their
magic alone, and the manifest that indexes them carries the dataset version.
"""

import csv
import json
import warnings

import numpy as np
from PIL import Image

from .cloud import GaussianCloud
from .sh import degree_for_coeffs

PLY_VERSION = 1
MANIFEST_VERSION = 1

TRACK_HEADER = ["track_id", "frame", "u", "v", "visible"]


# --------------------------------------------------------------------------
# splat PLY


def _ply_property_names(n_coeffs):
    names = ["x", "y", "z"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (n_coeffs - 1))]
    names.append("opacity")
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def save_cloud(path, cloud):
    """Write a cloud as binary little-endian PLY in the common splat layout.

    Log-scales and opacity logits are stored raw (no activation applied);
    ``f_rest`` holds the higher SH coefficients channel-major, all red
    coefficients first.  Gaussian ids are not part of the layout and are
    reassigned consecutively on load.
    """
    n = len(cloud)
    k = cloud.sh.shape[1]
    names = _ply_property_names(k)
    header = ["ply", "format binary_little_endian 1.0",
              f"comment gs4d_ply_version {PLY_VERSION}", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    rest = np.swapaxes(cloud.sh[:, 1:, :], 1, 2).reshape(n, 3 * (k - 1))
    columns = np.concatenate(
        [
            cloud.means,
            cloud.sh[:, 0, :],
            rest,
            cloud.opacity_logits[:, None],
            cloud.log_scales,
            cloud.rotations,
        ],
        axis=1,
    )
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(columns, dtype="<f4").tobytes())


def load_cloud(path):
    """Read a splat PLY.  Unknown extra properties are ignored with a warning."""
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"end_header\n"
    end = blob.find(marker)
    if not blob.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    try:
        lines = blob[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise ValueError(f"{path}: malformed PLY header") from exc

    n_vertex = None
    fields = []
    for line in lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1:] != ["binary_little_endian", "1.0"]:
                raise ValueError(f"{path}: unsupported PLY format {' '.join(parts[1:])}")
        elif parts[0] == "comment":
            if len(parts) == 3 and parts[1] == "gs4d_ply_version":
                if int(parts[2]) > PLY_VERSION:
                    raise ValueError(
                        f"{path}: written by a newer version ({parts[2]} > {PLY_VERSION})"
                    )
        elif parts[0] == "element":
            if parts[1] != "vertex" or n_vertex is not None:
                raise ValueError(f"{path}: only a single vertex element is supported")
            n_vertex = int(parts[2])
        elif parts[0] == "property":
            if n_vertex is None:
                raise ValueError(f"{path}: property outside an element")
            if parts[1] == "float":
                fields.append((parts[2], "<f4"))
            elif parts[1] == "double":
                fields.append((parts[2], "<f8"))
            else:
                raise ValueError(f"{path}: unsupported property type {parts[1]}")
    if n_vertex is None or not fields:
        raise ValueError(f"{path}: PLY header lacks a vertex element")

    dtype = np.dtype(fields)
    payload = blob[end + len(marker):]
    if len(payload) < n_vertex * dtype.itemsize:
        raise ValueError(
            f"{path}: truncated payload ({len(payload)} bytes for {n_vertex} vertices)"
        )
    rows = np.frombuffer(payload, dtype=dtype, count=n_vertex)

    present = {name for name, _ in fields}
    n_rest = sum(1 for name in present if name.startswith("f_rest_"))
    if n_rest % 3 != 0:
        raise ValueError(f"{path}: f_rest property count {n_rest} is not divisible by 3")
    k = 1 + n_rest // 3
    degree_for_coeffs(k)
    names = _ply_property_names(k)
    missing = [name for name in names if name not in present]
    if missing:
        raise ValueError(f"{path}: missing splat properties {missing}")
    extras = sorted(present - set(names))
    if extras:
        warnings.warn(f"{path}: ignoring unknown PLY properties {extras}")

    def grab(cols):
        return np.stack([rows[c].astype(np.float64) for c in cols], axis=-1)

    sh = np.empty((n_vertex, k, 3))
    sh[:, 0, :] = grab(["f_dc_0", "f_dc_1", "f_dc_2"])
    if k > 1:
        rest = grab([f"f_rest_{i}" for i in range(3 * (k - 1))])
        sh[:, 1:, :] = np.swapaxes(rest.reshape(n_vertex, 3, k - 1), 1, 2)
    return GaussianCloud(
        means=grab(["x", "y", "z"]),
        rotations=grab(["rot_0", "rot_1", "rot_2", "rot_3"]),
        log_scales=grab(["scale_0", "scale_1", "scale_2"]),
        opacity_logits=rows["opacity"].astype(np.float64),
        sh=sh,
    )


# --------------------------------------------------------------------------
# PFM float maps


def write_pfm(path, image):
    """Write a 1- or 3-channel float map; rows bottom-up, scale -1 (little-endian)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        magic = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM stores 1- or 3-channel images, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n".encode("ascii") + b"-1.0\n")
        fh.write(np.flipud(img).astype("<f4").tobytes())


def read_pfm(path):
    """Read a PFM into float64, honoring the byte order the scale line declares."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf", b"PF"):
        raise ValueError(f"{path}: not a PFM file (bad magic {blob[:2]!r})")
    channels = 3 if parts[0] == b"PF" else 1
    try:
        w, h = (int(tok) for tok in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PFM header") from exc
    # the sign encodes byte order; the magnitude (a display scale) is
    # universally written as 1 and ignored by readers, including this one
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    payload = parts[3]
    if len(payload) < count * 4:
        raise ValueError(
            f"{path}: truncated PFM payload ({len(payload)} bytes, need {count * 4})"
        )
    data = np.frombuffer(payload, dtype=dtype, count=count)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def save_flow(path, flow):
    """Store a 2-channel flow field as a 3-channel PFM with a zero pad channel."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got shape {flow.shape}")
    padded = np.concatenate([flow, np.zeros(flow.shape[:2] + (1,))], axis=2)
    write_pfm(path, padded)


def load_flow(path):
    img = read_pfm(path)
    if img.ndim != 3:
        raise ValueError(f"{path}: flow PFM must be 3-channel")
    return img[:, :, :2].copy()


# --------------------------------------------------------------------------
# PNG images


def save_png(path, image):
    """Quantize a float image in [0, 1] to 8-bit and write it as PNG."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError(f"PNG image must be (H, W) or (H, W, 3), got shape {img.shape}")
    quantized = np.clip(np.rint(img * 255.0), 0.0, 255.0).astype(np.uint8)
    Image.fromarray(quantized).save(path, format="PNG")


def load_png(path):
    """Read a PNG back to float64 in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    return arr.astype(np.float64) / 255.0


# --------------------------------------------------------------------------
# track tables


def write_tracks(path, ids, uv, visible):
    """Write persistent 2D tracks as CSV rows ``track_id,frame,u,v,visible``.

    ``uv`` is (K, T, 2), ``visible`` (K, T); frames are written 1-based.
    Coordinates are formatted with ``repr`` so they parse back exactly.
    """
    ids = np.asarray(ids)
    uv = np.asarray(uv, dtype=np.float64)
    vis = np.asarray(visible)
    k, t = uv.shape[:2]
    if ids.shape != (k,) or vis.shape != (k, t):
        raise ValueError("ids, uv and visible disagree on track count or frame count")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACK_HEADER)
        for i in range(k):
            for frame in range(t):
                writer.writerow([
                    int(ids[i]), frame + 1,
                    repr(float(uv[i, frame, 0])), repr(float(uv[i, frame, 1])),
                    int(bool(vis[i, frame])),
                ])


def read_tracks(path):
    """Read a track CSV back to ``(ids, uv, visible)`` arrays.

    Requires persistence: every track id must appear exactly once at every
    frame 1..T.  The visibility column must be 0 or 1.
    """
    per_id = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACK_HEADER:
            raise ValueError(f"{path}: expected header {TRACK_HEADER}, got {header}")
        for row in reader:
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(f"{path}: malformed track row {row}")
            tid, frame = int(row[0]), int(row[1])
            if row[4] not in ("0", "1"):
                raise ValueError(f"{path}: visibility must be 0 or 1, got {row[4]!r}")
            entry = per_id.setdefault(tid, {})
            if frame in entry:
                raise ValueError(f"{path}: duplicate entry for track {tid} frame {frame}")
            entry[frame] = (float(row[2]), float(row[3]), int(row[4]))
    if not per_id:
        raise ValueError(f"{path}: no track rows")
    frames = sorted(next(iter(per_id.values())))
    n_frames = len(frames)
    if frames != list(range(1, n_frames + 1)):
        raise ValueError(f"{path}: frames must cover 1..T, got {frames}")
    ids = np.array(sorted(per_id), dtype=np.int64)
    uv = np.empty((ids.size, n_frames, 2))
    vis = np.empty((ids.size, n_frames), dtype=bool)
    for i, tid in enumerate(ids):
        entry = per_id[tid]
        if sorted(entry) != frames:
            raise ValueError(f"{path}: track {tid} is not persistent over 1..{n_frames}")
        for frame in frames:
            u, v, flag = entry[frame]
            uv[i, frame - 1] = (u, v)
            vis[i, frame - 1] = bool(flag)
    return ids, uv, vis


# --------------------------------------------------------------------------
# manifests


def write_manifest(path, payload):
    """Write a JSON manifest with the format version stamped in."""
    doc = dict(payload)
    doc["version"] = MANIFEST_VERSION
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("version")
    if not isinstance(version, int):
        raise ValueError(f"{path}: manifest lacks an integer version")
    if version > MANIFEST_VERSION:
        raise ValueError(
            f"{path}: written by a newer version ({version} > {MANIFEST_VERSION})"
        )
    return doc
