"""Write ``RenderOutput`` images to disk."""
from pathlib import Path

import numpy as np

from ..imageio import write_pfm, write_pgm, write_ppm


def export_render(output, out_dir, stem="render", semantic=False):
    """Write channels/alpha/depth. Returns the list of written paths.

    Colour renders go to ``<stem>.ppm`` and ``<stem>.pfm``; semantic renders write the
    argmax label map as ``<stem>_label.pgm`` instead. Alpha and depth are always PFM.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if semantic:
        labels = output.argmax()
        if labels.max(initial=0) > 254:
            raise ValueError("label map export supports at most 255 classes")
        p = out_dir / f"{stem}_label.pgm"
        write_pgm(p, labels.astype(np.uint8))
        written.append(p)
    else:
        p = out_dir / f"{stem}.ppm"
        write_ppm(p, output.channels)
        written.append(p)
        p = out_dir / f"{stem}.pfm"
        write_pfm(p, output.channels)
        written.append(p)
    for name, arr in (("alpha", output.alpha), ("depth", output.depth)):
        p = out_dir / f"{stem}_{name}.pfm"
        write_pfm(p, arr)
        written.append(p)
    return written
