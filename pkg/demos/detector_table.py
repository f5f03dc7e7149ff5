"""Build the direction-dependent detection table and poke at its shape.

The detector is a thin box, and the table bins interaction probability over
arrival direction (azimuth, polar). At the stock absorption coefficient the
box is optically thin, so silhouette area times mean chord is just the box
volume and the table comes out nearly flat. Crank the coefficient up and
the geometry shows: face-on arrivals saturate while edge-on ones are starved
by the thin silhouette. Writes detector_table.png and a reloadable dump.
"""

import math
from pathlib import Path

import numpy as np

from cone_mapper.physics import (
    DetectorGeometry,
    build_chord_lookup,
    load_lookup,
    lookup,
    save_lookup,
)

N_PHI = 36
N_THETA = 18
SAMPLES_PER_BIN = 2000
DENSE_KAPPA = 800.0  # 1/m, saturating on the 2 mm face-on chord


def describe(name: str, table) -> None:
    v = table.values
    face_on = lookup(table, 0.0, 0.05)
    edge_on = lookup(table, 0.0, math.pi / 2.0)
    print(f"{name}: mean {v.mean():.3e}, spread {v.max() / v.min():.2f}x, "
          f"face-on/edge-on {face_on / edge_on:.2f}")


def main() -> None:
    geometry = DetectorGeometry()
    print(
        f"box {geometry.width * 1e3:.0f} x {geometry.depth * 1e3:.0f} "
        f"x {geometry.thickness * 1e3:.0f} mm, stock kappa {geometry.kappa:.4e} 1/m"
    )

    stock = build_chord_lookup(geometry, N_PHI, N_THETA, SAMPLES_PER_BIN)
    dense = build_chord_lookup(
        DetectorGeometry(kappa=DENSE_KAPPA), N_PHI, N_THETA, SAMPLES_PER_BIN
    )
    describe("stock (optically thin)", stock)
    describe(f"dense (kappa {DENSE_KAPPA:.0f})", dense)

    # Round-trip the stock table through the text format.
    dump = Path(__file__).with_name("detector_table.txt")
    save_lookup(stock, dump)
    again = load_lookup(dump)
    print(f"saved and reloaded {dump.name}: "
          f"bit-identical {np.array_equal(stock.values, again.values)}")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed, skipping the picture")
        return

    fig, axes = plt.subplots(1, 2, figsize=(12, 4))
    for ax, table, title in ((axes[0], stock, "stock"), (axes[1], dense, "dense")):
        im = ax.imshow(
            table.values,
            origin="lower",
            extent=(-180.0, 180.0, 0.0, 180.0),
            aspect="auto",
            cmap="viridis",
        )
        ax.set_xlabel("azimuth [deg]")
        ax.set_ylabel("polar [deg]")
        ax.set_title(f"{title} detection probability")
        fig.colorbar(im, ax=ax)
    out = Path(__file__).with_name("detector_table.png")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
