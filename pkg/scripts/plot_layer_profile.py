#!/usr/bin/env python3
"""
Plot the per-layer gold-paragraph rank written by `longdoc analyze-layers`.

One line per subquery position shows the mean rank at each layer, with the
quartic trend drawn dashed over it. Layers chosen for retrieval are marked.

Usage:
    python scripts/plot_layer_profile.py results/layer_profile.json
    python scripts/plot_layer_profile.py results/layer_profile.json --out layers.pdf
"""

import argparse
import json
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from longdoc_retrieval.analysis import (  # noqa: E402
    InsufficientPoints,
    LayerProfile,
    quartic_fit,
    select_layers,
)

plt.rcParams["figure.figsize"] = (6.0, 3.5)
plt.rcParams["figure.dpi"] = 150
plt.rcParams["savefig.bbox"] = "tight"


def plot_profile(profile: LayerProfile, out_path: str) -> None:
    layers = np.asarray(profile.layer_ids, dtype=np.float64)
    grid = np.linspace(layers.min(), layers.max(), 200)
    fig, ax = plt.subplots()

    for j in range(profile.ranks.shape[1]):
        ranks = profile.ranks[:, j]
        (line,) = ax.plot(
            layers, ranks, marker="o", markersize=3, label=f"subquery {j + 1}"
        )
        try:
            coefficients = quartic_fit(ranks, profile.layer_ids)
        except InsufficientPoints:
            continue
        trend = np.polynomial.polynomial.polyval(grid, coefficients)
        ax.plot(grid, trend, linestyle="--", color=line.get_color(), alpha=0.7)

    for layer in select_layers(profile):
        ax.axvline(layer, color="grey", linestyle=":", linewidth=0.8)

    ax.set_xlabel("Layer")
    ax.set_ylabel("Mean gold-paragraph rank")
    ax.set_title(f"Layer profile ({profile.sample_count} samples)")
    ax.legend(frameon=False)
    fig.savefig(out_path)
    plt.close(fig)


def main():
    parser = argparse.ArgumentParser(description="Plot a layer profile")
    parser.add_argument("profile", help="layer_profile.json written by analyze-layers")
    parser.add_argument("--out", default="layer_profile.png", help="Output image path")
    args = parser.parse_args()

    try:
        with open(args.profile, "r", encoding="utf-8") as f:
            profile = LayerProfile.from_json(json.load(f))
    except (OSError, json.JSONDecodeError, KeyError) as e:
        print(f"Error reading {args.profile}: {e}")
        sys.exit(1)

    plot_profile(profile, args.out)
    print(f"Wrote {args.out}")


if __name__ == "__main__":
    main()
