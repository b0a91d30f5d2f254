"""Generate a small multi-lab corpus and look at what is in it.

Each synthetic slide is a near-white glass background, one connected
tissue blob, and a class-specific lesion texture; labs differ by an
affine color transform, noise level, and artifact rates.  Rasters land on
disk as PPM (P6) and ground-truth lesion masks as PGM (P5), so you can
open them with any image viewer.

Run:  python demos/01_synthetic_corpus.py
"""

import os
import tempfile
from collections import Counter

from wsitriage.pnm import read_ppm
from wsitriage.synthesis import default_lab_profiles, generate_corpus, generate_slide

out_dir = os.path.join(tempfile.gettempdir(), "wsitriage-demo-corpus")
profiles = default_lab_profiles()
print("lab profiles:")
for p in profiles:
    print(f"  {p.lab_id}: noise sigma {p.noise_sigma}, artifact rates {p.artifact_rates}")

manifest = generate_corpus(
    n_specimens_per_lab=8,
    labs=profiles[:2],
    slides_per_specimen_range=(1, 2),
    seed=7,
    out_dir=out_dir,
    workers=2,
)

print(f"\nwrote {len(manifest.records)} slides to {out_dir}")
print("specimen class balance per lab:")
for lab in manifest.lab_ids():
    counts = Counter()
    seen = set()
    for r in manifest.records:
        if r.lab_id == lab and r.specimen_id not in seen:
            seen.add(r.specimen_id)
            counts[r.truth.token] += 1
    print(f"  {lab}: {dict(counts)}")

first = manifest.records[0]
raster = read_ppm(first.raster_path)
print(f"\nfirst slide {first.slide_id}: shape {raster.shape}, "
      f"truth {first.truth.token}")

# the same slide is reproducible in memory, masks included
slide = generate_slide(first.truth, profiles[0], seed=0, shape=raster.shape[:2])
print(f"tissue covers {slide.tissue_mask.mean():.0%} of a typical raster; "
      f"lesion covers {slide.roi_mask.sum() / max(slide.tissue_mask.sum(), 1):.0%} "
      f"of the tissue")
