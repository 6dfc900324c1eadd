"""Regenerate the vendored CSV fixtures.

Run from the repository root:  python3 tests/fixtures/make_fixtures.py
"""

from pathlib import Path

import numpy as np
from sklearn.datasets import load_iris, load_wine

HERE = Path(__file__).parent


def write_csv(path, X, y):
    with open(path, "w", encoding="utf-8") as fh:
        for row, label in zip(X, y):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{int(label)}\n")


def three_gaussians(seed=20240817):
    """Three Gaussian blobs in 10 dimensions; two close, one far away.

    Small enough (n = 21) that 2-cuts can be enumerated exhaustively, with a
    dominating 2-cut separating the distant blob.
    """
    rng = np.random.default_rng(seed)
    means = np.zeros((3, 10))
    means[1, 0] = 3.0
    means[2, 0] = 11.0
    X = np.vstack([rng.normal(mu, 0.55, (7, 10)) for mu in means])
    y = np.repeat([0, 1, 2], 7)
    return X, y


def main():
    iris = load_iris()
    write_csv(HERE / "iris.csv", iris.data, iris.target)

    wine = load_wine()
    X = wine.data
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    write_csv(HERE / "wine.csv", X, wine.target)

    X, y = three_gaussians()
    write_csv(HERE / "three_gaussians.csv", X, y)


if __name__ == "__main__":
    main()
