"""Generated plot script; reads only the CSVs next to it. Needs pandas and matplotlib."""
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
df = pd.read_csv(here / "sac_eval.csv")
for env, g in df.groupby("env"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for algo, h in g.groupby("algo"):
        s = h.groupby("env_steps")["eval_return"].agg(["mean", "sem"])
        ax.plot(s.index, s["mean"], label=algo)
        ax.fill_between(s.index, s["mean"] - 1.96 * s["sem"], s["mean"] + 1.96 * s["sem"], alpha=0.2)
    ax.set_title(env)
    ax.legend()
    fig.savefig(here / f"sac_{env}.png", dpi=120)
