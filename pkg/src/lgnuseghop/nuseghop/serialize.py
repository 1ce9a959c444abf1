"""Self-describing binary container for fitted models.

Layout: magic "NSHM", u32 version, then five length-prefixed sections in a
fixed order (config, kernels, spectral bases, selected indices, tree
ensemble). Each section payload is a tagged tree of dicts / lists /
scalars / ndarrays with raw array bytes, so a round trip is bit-exact.
"""

import struct
from dataclasses import asdict

import numpy as np

from ..gbt import GradientBoostedTrees
from .model import NuSegHopConfig, NuSegHopModel
from .saab import PcaBasis, SaabKernel

MAGIC = b"NSHM"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _dump_tree(obj, out):
    if obj is None:
        out.append(b"N")
    elif isinstance(obj, bool):
        out.append(b"B" + (b"\x01" if obj else b"\x00"))
    elif isinstance(obj, int):
        out.append(b"I" + struct.pack("<q", obj))
    elif isinstance(obj, float):
        out.append(b"F" + struct.pack("<d", obj))
    elif isinstance(obj, str):
        raw = obj.encode("utf-8")
        out.append(b"S" + struct.pack("<I", len(raw)) + raw)
    elif isinstance(obj, np.ndarray):
        dt = obj.dtype.str.encode("ascii")
        out.append(b"A" + struct.pack("<B", len(dt)) + dt)
        out.append(struct.pack("<B", obj.ndim))
        out.append(struct.pack(f"<{obj.ndim}q", *obj.shape))
        out.append(np.ascontiguousarray(obj).tobytes())
    elif isinstance(obj, (list, tuple)):
        out.append(b"L" + struct.pack("<I", len(obj)))
        for item in obj:
            _dump_tree(item, out)
    elif isinstance(obj, dict):
        out.append(b"D" + struct.pack("<I", len(obj)))
        for key in obj:
            _dump_tree(str(key), out)
            _dump_tree(obj[key], out)
    else:
        raise ModelFormatError(f"cannot serialize {type(obj)!r}")


def _load_tree(buf, pos):
    tag = buf[pos:pos + 1]
    pos += 1
    if tag == b"N":
        return None, pos
    if tag == b"B":
        return buf[pos] == 1, pos + 1
    if tag == b"I":
        return struct.unpack("<q", buf[pos:pos + 8])[0], pos + 8
    if tag == b"F":
        return struct.unpack("<d", buf[pos:pos + 8])[0], pos + 8
    if tag == b"S":
        ln = struct.unpack("<I", buf[pos:pos + 4])[0]
        pos += 4
        return buf[pos:pos + ln].decode("utf-8"), pos + ln
    if tag == b"A":
        dl = buf[pos]
        pos += 1
        dt = np.dtype(buf[pos:pos + dl].decode("ascii"))
        pos += dl
        nd = buf[pos]
        pos += 1
        shape = struct.unpack(f"<{nd}q", buf[pos:pos + 8 * nd])
        pos += 8 * nd
        count = int(np.prod(shape)) if nd else 1
        nbytes = count * dt.itemsize
        arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dt).reshape(shape)
        return arr.copy(), pos + nbytes
    if tag == b"L":
        ln = struct.unpack("<I", buf[pos:pos + 4])[0]
        pos += 4
        items = []
        for _ in range(ln):
            item, pos = _load_tree(buf, pos)
            items.append(item)
        return items, pos
    if tag == b"D":
        ln = struct.unpack("<I", buf[pos:pos + 4])[0]
        pos += 4
        d = {}
        for _ in range(ln):
            key, pos = _load_tree(buf, pos)
            val, pos = _load_tree(buf, pos)
            d[key] = val
        return d, pos
    raise ModelFormatError(f"bad tag {tag!r} at offset {pos - 1}")


def _tree_bytes(obj):
    parts = []
    _dump_tree(obj, parts)
    return b"".join(parts)


def _kernel_tree(kernel):
    if kernel is None:
        return None
    return {"w": kernel.w, "energies": kernel.energies,
            "input_dims": list(kernel.input_dims),
            "dc_included": kernel.dc_included}


def _kernel_from_tree(tree):
    if tree is None:
        return None
    return SaabKernel(w=tree["w"], energies=tree["energies"],
                      input_dims=tuple(tree["input_dims"]),
                      dc_included=tree["dc_included"])


def _basis_tree(basis):
    if basis is None:
        return None
    return {"mean": basis.mean, "components": basis.components,
            "energies": basis.energies}


def _basis_from_tree(tree):
    if tree is None:
        return None
    return PcaBasis(mean=tree["mean"], components=tree["components"],
                    energies=tree["energies"])


def save_model(path, model):
    sections = [
        _tree_bytes(asdict(model.config)),
        _tree_bytes({"layer1": _kernel_tree(model.layer1),
                     "layer2": [_kernel_tree(k) for k in model.layer2]}),
        _tree_bytes({"spectral1": [_basis_tree(b) for b in model.spectral1],
                     "spectral2": [[_basis_tree(b) for b in row]
                                   for row in model.spectral2],
                     "feature_total": int(model.feature_total)}),
        _tree_bytes(model.selected),
        _tree_bytes({"feat": model.classifier.feat,
                     "thr": model.classifier.thr,
                     "value": model.classifier.value,
                     "learning_rate": float(model.classifier.learning_rate),
                     "base_margin": float(model.classifier.base_margin),
                     "depth": int(model.classifier.depth)}),
    ]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for payload in sections:
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ModelFormatError(f"{path}: bad magic")
    version = struct.unpack("<I", buf[4:8])[0]
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    pos = 8
    sections = []
    for _ in range(5):
        ln = struct.unpack("<Q", buf[pos:pos + 8])[0]
        pos += 8
        sections.append(buf[pos:pos + ln])
        pos += ln
    config_d, _ = _load_tree(sections[0], 0)
    kernels, _ = _load_tree(sections[1], 0)
    spectral, _ = _load_tree(sections[2], 0)
    selected, _ = _load_tree(sections[3], 0)
    trees, _ = _load_tree(sections[4], 0)
    classifier = GradientBoostedTrees(
        feat=trees["feat"], thr=trees["thr"], value=trees["value"],
        learning_rate=trees["learning_rate"], base_margin=trees["base_margin"],
        depth=trees["depth"])
    return NuSegHopModel(
        config=NuSegHopConfig(**config_d),
        layer1=_kernel_from_tree(kernels["layer1"]),
        layer2=[_kernel_from_tree(k) for k in kernels["layer2"]],
        spectral1=[_basis_from_tree(b) for b in spectral["spectral1"]],
        spectral2=[[_basis_from_tree(b) for b in row]
                   for row in spectral["spectral2"]],
        selected=selected,
        classifier=classifier,
        feature_total=spectral["feature_total"],
    )
