"""Small dataset run plus the detector-to-action handoff.

Builds the procedural starter assets, generates a 12-image dataset with
full annotations, validates it, and then plays detector: hand-written
detection records go through size classification and the action table the
same way real detector output would.  Everything lands in a temp directory
that is removed at the end.  Run it directly:

    python demos/dataset_quicklook.py
"""

import json
import shutil
import tempfile
from collections import Counter
from pathlib import Path

from nearfield import (
    DatasetConfig,
    decide,
    detections_to_events,
    generate_dataset,
    make_starter_assets,
    validate_annotations,
)


def main():
    root = Path(tempfile.mkdtemp(prefix="nearfield_demo_"))
    try:
        assets = root / "assets"
        make_starter_assets(assets, seed=0)
        n_cutouts = sum(1 for _ in (assets / "cutouts").rglob("*.png"))
        n_backgrounds = sum(1 for _ in (assets / "backgrounds").glob("*.png"))
        print(f"starter assets: {n_cutouts} cutouts, {n_backgrounds} backgrounds")

        config = DatasetConfig(count=12, splits=(8, 2, 2), seed=11)
        manifest = generate_dataset(config, assets, root / "dataset")
        print(f"generated {len(manifest['images'])} images "
              f"(train/val/test {config.splits})")

        report = validate_annotations(root / "dataset")
        print(f"validation: {report['images']} images, "
              f"{len(report['violations'])} violations")

        detections = [
            {"image": "f0.png", "class_id": 0, "confidence": 0.94,
             "box": [0.5, 0.5, 0.20, 0.42]},
            {"image": "f0.png", "class_id": 1, "confidence": 0.81,
             "box": [0.2, 0.6, 0.05, 0.04]},
            {"image": "f1.png", "class_id": 4, "confidence": 0.77,
             "box": [0.7, 0.4, 0.30, 0.25]},
            {"image": "f2.png", "class_id": 2, "confidence": 0.31,
             "box": [0.4, 0.3, 0.12, 0.10]},
        ]
        print("\ndetections through the action table (550 mm per unit):")
        events = detections_to_events(detections, mm_per_unit=550.0, zone="B")
        for det, raw in zip(events, detections):
            action = decide(det)
            print(f"  {det.category.name.lower():11s} conf {raw['confidence']:.2f} "
                  f"size {det.size_class().name:5s} -> {action.name}")

        actions = Counter(decide(e).name for e in events)
        print(f"\nframe verdicts: {json.dumps(dict(actions))}")
    finally:
        shutil.rmtree(root, ignore_errors=True)


if __name__ == "__main__":
    main()
