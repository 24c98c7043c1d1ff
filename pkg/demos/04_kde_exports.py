"""Visualization-ready exports: PCA projection, planar KDE, angular KDE.

Takes the prototype snapshots produced by demo 03 (or synthesizes matrices if
they are missing) and writes the x_grid/y_grid/prob and x/prob CSV files.
If matplotlib is installed the densities are also rendered to PNG; the CSV
files are the contract, the pictures are a convenience.
"""

import pathlib

import numpy as np

from protostream.analysis import export_prototype_kde
from protostream.checkpoint import load_checkpoint
from protostream.mixture import spread_unit_vectors

OUT = pathlib.Path("demo_out")


def prototype_sets():
    for regime in ("joint", "decoupled"):
        snap = OUT / regime / "snapshots" / "epoch_0050.ckpt"
        if snap.exists():
            yield regime, load_checkpoint(snap).means
    if not (OUT / "joint").exists():
        rng = np.random.default_rng(0)
        spread = spread_unit_vectors(64, 16, rng)
        yield "spread", spread
        hub = np.tile(spread[0], (64, 1)) + 0.05 * rng.standard_normal((64, 16))
        yield "collapsed", hub


def main():
    OUT.mkdir(exist_ok=True)
    for name, rows in prototype_sets():
        info = export_prototype_kde(rows, OUT / name, kappa=20.0)
        print(f"{name}: wrote {info['gaussian_csv'].name} and {info['vmf_csv'].name} "
              f"(explained variance {info['explained_variance'][0]:.2f}/"
              f"{info['explained_variance'][1]:.2f})")
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt

            data = np.genfromtxt(info["vmf_csv"], delimiter=",", skip_header=2)
            fig, ax = plt.subplots(figsize=(5, 2.5))
            ax.plot(data[:, 0], data[:, 1])
            ax.set_xlabel("angle")
            ax.set_ylabel("density")
            ax.set_title(f"{name}: angular prototype density")
            fig.tight_layout()
            fig.savefig(OUT / f"{name}_vmf.png", dpi=120)
            plt.close(fig)
            print(f"  plot: {OUT / f'{name}_vmf.png'}")
        except ImportError:
            pass


if __name__ == "__main__":
    main()
