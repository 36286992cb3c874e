"""Author the bundled farm_small map: 200x80 m, 8 spawn regions, farm-style cover.

Cover is deliberately dense: long barn walls, hedgerows, and crate clusters
keep typical sightlines short, so closing distance on an unseen opponent is
a real navigation task rather than a formality.

Run from the repo root:  python3 tools/make_farm_map.py
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "skirmish" / "maps" / "farm_small.json"


def rect(cx, cy, w, h, height):
    return {
        "vertices": [
            [cx - w / 2, cy - h / 2],
            [cx + w / 2, cy - h / 2],
            [cx + w / 2, cy + h / 2],
            [cx - w / 2, cy + h / 2],
        ],
        "height": height,
    }


def diamond(cx, cy, r, height):
    return {
        "vertices": [[cx + r, cy], [cx, cy + r], [cx - r, cy], [cx, cy - r]],
        "height": height,
    }


def main():
    width, height = 200.0, 80.0
    regions = []
    for row in range(2):
        for col in range(4):
            regions.append(
                {
                    "x": 4.0 + col * 49.0,
                    "y": 4.0 + row * 40.0,
                    "w": 43.0,
                    "h": 32.0,
                }
            )

    obstacles = []
    # Per-region cover: two long walls (different orientations), a barn corner,
    # crates, and low sandbag cover usable only when crouching or prone.
    for i, reg in enumerate(regions):
        cx = reg["x"] + reg["w"] / 2
        cy = reg["y"] + reg["h"] / 2
        if i % 2 == 0:
            obstacles.append(rect(cx - 4.0, cy, 14.0, 1.2, 2.4))  # long barn wall
            obstacles.append(rect(cx + 9.0, cy + 7.0, 1.2, 12.0, 2.4))  # side wall
            obstacles.append(rect(cx - 12.0, cy - 9.0, 6.0, 1.2, 2.2))  # hedgerow
            obstacles.append(rect(cx + 2.0, cy - 10.0, 2.5, 2.5, 1.9))  # crate
            obstacles.append(rect(cx - 14.0, cy + 9.0, 2.5, 2.5, 1.9))
            obstacles.append(rect(cx + 12.0, cy - 5.0, 3.5, 0.8, 1.1))  # sandbags
        else:
            obstacles.append(rect(cx + 4.0, cy, 1.2, 14.0, 2.4))
            obstacles.append(rect(cx - 9.0, cy - 7.0, 12.0, 1.2, 2.4))
            obstacles.append(rect(cx + 12.0, cy + 9.0, 1.2, 6.0, 2.2))
            obstacles.append(rect(cx - 2.0, cy + 10.0, 2.5, 2.5, 1.9))
            obstacles.append(rect(cx + 14.0, cy - 9.0, 2.5, 2.5, 1.9))
            obstacles.append(rect(cx - 12.0, cy + 5.0, 0.8, 3.5, 1.1))

    # Field boundaries between regions: long fences with gaps, silos.
    obstacles.append(diamond(100.0, 40.0, 3.0, 5.0))  # central silo
    obstacles.append(rect(51.5, 40.0, 1.0, 26.0, 1.8))  # north-south fences
    obstacles.append(rect(100.5, 14.0, 1.0, 20.0, 1.8))
    obstacles.append(rect(100.5, 66.0, 1.0, 20.0, 1.8))
    obstacles.append(rect(149.5, 40.0, 1.0, 26.0, 1.8))
    obstacles.append(rect(52.0, 9.0, 22.0, 1.0, 1.8))  # east-west hedges
    obstacles.append(rect(148.0, 71.0, 22.0, 1.0, 1.8))
    obstacles.append(diamond(30.0, 40.0, 2.0, 4.0))
    obstacles.append(diamond(170.0, 40.0, 2.0, 4.0))

    data = {
        "format": 1,
        "width": width,
        "height": height,
        "walkable_margin": 0.35,
        "obstacles": obstacles,
        "spawn_regions": regions,
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=2))
    print(f"wrote {OUT} ({len(obstacles)} obstacles)")


if __name__ == "__main__":
    main()
