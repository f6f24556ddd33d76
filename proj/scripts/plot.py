#!/usr/bin/env python3
"""Figures from mintime CSV outputs.

    plot.py train OUT_DIR [OUT_DIR ...]   reward and episode length curves
    plot.py evaluate OUT_DIR              endpoint scatter
    plot.py compare OUT_DIR               speed profiles and paths
"""

import argparse
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def train(dirs):
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    for d in dirs:
        m = pd.read_csv(pathlib.Path(d) / "metrics.csv")
        label = pathlib.Path(d).name
        a.plot(m.env_steps, m.mean_reward, label=label)
        b.plot(m.env_steps, m.mean_episode_length, label=label)
    a.set(xlabel="env steps", ylabel="mean reward")
    b.set(xlabel="env steps", ylabel="mean episode length")
    a.legend()
    out = pathlib.Path(dirs[0]) / "training.png"
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    return out


def evaluate(d):
    e = pd.read_csv(pathlib.Path(d) / "episodes.csv")
    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(projection="3d")
    ok = e.success == 1
    ax.scatter(e.final_x[ok], e.final_y[ok], e.final_z[ok], s=8, c="tab:green", label="success")
    ax.scatter(e.final_x[~ok], e.final_y[~ok], e.final_z[~ok], s=8, c="tab:red", label="miss")
    ax.scatter([0], [0], [0], marker="*", s=80, c="k", label="goal")
    ax.legend()
    out = pathlib.Path(d) / "endpoints.png"
    fig.savefig(out, dpi=120)
    return out


def compare(d):
    d = pathlib.Path(d)
    traces = sorted((d / "traces").glob("*.csv"))
    fig, (a, b) = plt.subplots(1, 2, figsize=(11, 4))
    for t in traces:
        df = pd.read_csv(t)
        a.plot(df.t, df.speed, label=t.stem)
        b.plot(df.px, df.py, label=t.stem)
    a.set(xlabel="t [s]", ylabel="speed [m/s]")
    b.set(xlabel="x [m]", ylabel="y [m]", aspect="equal")
    a.legend(fontsize="small")
    out = d / "compare.png"
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("kind", choices=["train", "evaluate", "compare"])
    p.add_argument("dirs", nargs="+")
    args = p.parse_args()
    if args.kind == "train":
        out = train(args.dirs)
    elif args.kind == "evaluate":
        out = evaluate(args.dirs[0])
    else:
        out = compare(args.dirs[0])
    print(out)


if __name__ == "__main__":
    main()
