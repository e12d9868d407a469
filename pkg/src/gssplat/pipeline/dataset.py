"""On-disk scene datasets.

Layout of one scene directory::

    cameras.json        camera file with top-level "scene_id", "scene_extent", "n_classes"
                        and a per-view "split" of "source" or "novel"
    rgb/0000.ppm        8-bit binary RGB
    depth/0000.pfm      float32 planar depth, 0 = invalid
    label/0000.pgm      8-bit class ids, 255 = unlabelled (directory optional)

A dataset root holds scene directories plus ``manifest.json``::

    {"version": 1, "scenes": [{"id": "scene_000", "path": "scene_000"}, ...],
     "splits": {"train": ["scene_000", ...], "test": [...]}}

Converting ScanNet or Replica means writing this layout: export colour frames as PPM,
convert millimetre depth PNGs to metres in PFM (0 stays invalid), remap the benchmark
label ids to ``[0, η)`` with unmapped ids set to 255, and copy each frame's
camera-to-world matrix into ``world_from_camera``. No converter ships here.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..geometry import load_cameras, save_cameras
from ..imageio import read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm
from .views import ViewSet

MANIFEST_VERSION = 1
SOURCE, NOVEL = "source", "novel"


def write_scene(directory, source: ViewSet, novel: ViewSet | None = None):
    """Write source (and optionally novel) views; returns the directory path."""
    d = Path(directory)
    for sub in ("rgb", "depth", "label"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    sets = [(SOURCE, source)] + ([(NOVEL, novel)] if novel is not None else [])
    cams, extra = [], []
    i = 0
    for split, views in sets:
        for k in range(len(views)):
            name = f"{i:04d}"
            write_ppm(d / "rgb" / f"{name}.ppm", views.images[k])
            write_pfm(d / "depth" / f"{name}.pfm", views.depths[k])
            if views.labels is not None:
                write_pgm(d / "label" / f"{name}.pgm", views.labels[k].astype(np.uint8))
            cams.append(views.cameras[k])
            extra.append({"split": split})
            i += 1
    meta = {"scene_id": source.scene_id, "scene_extent": float(source.scene_extent),
            "n_classes": source.n_classes}
    save_cameras(d / "cameras.json", cams, extra, meta)
    return d


def read_scene(directory):
    """Returns ``(source ViewSet, novel ViewSet or None)``."""
    d = Path(directory)
    cam_path = d / "cameras.json"
    if not cam_path.exists():
        raise FormatError(f"{d}: no cameras.json")
    cams, entries = load_cameras(cam_path)
    meta = json.loads(cam_path.read_text())
    groups = {SOURCE: [], NOVEL: []}
    for cam, entry in zip(cams, entries):
        split = entry.get("split", SOURCE)
        if split not in groups:
            raise FormatError(f"{cam_path}: unknown split {split!r}")
        groups[split].append((entry["name"], cam))

    def load(items):
        if not items:
            return None
        imgs, deps, labs = [], [], []
        for name, cam in items:
            img = read_ppm(d / "rgb" / f"{name}.ppm")
            dep = read_pfm(d / "depth" / f"{name}.pfm")
            if img.shape[:2] != (cam.height, cam.width) or dep.shape != img.shape[:2]:
                raise FormatError(f"{d}: view {name} size does not match its camera")
            imgs.append(img)
            deps.append(dep)
            lab_path = d / "label" / f"{name}.pgm"
            labs.append(read_pgm(lab_path) if lab_path.exists() else None)
        labels = None if any(x is None for x in labs) else np.stack(labs)
        return ViewSet(np.stack(imgs), np.stack(deps), [c for _, c in items], labels,
                       meta.get("scene_id", d.name), float(meta.get("scene_extent", 1.0)),
                       meta.get("n_classes"))

    source = load(groups[SOURCE])
    if source is None:
        raise FormatError(f"{d}: scene has no source views")
    return source, load(groups[NOVEL])


def write_manifest(root, scene_ids, train, test):
    doc = {"version": MANIFEST_VERSION,
           "scenes": [{"id": s, "path": s} for s in scene_ids],
           "splits": {"train": list(train), "test": list(test)}}
    Path(root, "manifest.json").write_text(json.dumps(doc, indent=1))


def read_manifest(root):
    path = Path(root) / "manifest.json"
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{root}: no manifest.json") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if doc.get("version") != MANIFEST_VERSION or "scenes" not in doc:
        raise FormatError(f"{path}: unsupported manifest")
    return doc


def is_scene_dir(path):
    return (Path(path) / "cameras.json").exists()


def load_split(root, split):
    """Scenes of one manifest split as a list of ``(source, novel)`` pairs.

    A bare scene directory is accepted too and yields that single scene.
    """
    root = Path(root)
    if is_scene_dir(root):
        return [read_scene(root)]
    doc = read_manifest(root)
    paths = {s["id"]: s["path"] for s in doc["scenes"]}
    ids = doc.get("splits", {}).get(split)
    if ids is None:
        raise FormatError(f"manifest has no split {split!r}")
    missing = [i for i in ids if i not in paths]
    if missing:
        raise FormatError(f"manifest split {split!r} names unknown scenes {missing}")
    return [read_scene(root / paths[i]) for i in ids]
