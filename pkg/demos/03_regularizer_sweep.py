"""How much logic regularization helps: accuracy across a grid of lambda_l.

Runs the same experiment at each grid value and prints a small table. Defaults
are reduced (300 variables, 2000 expressions, 2 seeds, 25 epochs) so the whole
grid fits in well under an hour. The CLI equivalent at full size is

    nlogic sweep --param lambda_l --seeds 0 1 2 3 4 --out runs/sweep

    python3 demos/03_regularizer_sweep.py [--grid 0 1e-3 1e-2 1e-1 10] [--seeds 0 1]
"""
import argparse
from dataclasses import replace

from nlogic.experiment import ExperimentConfig, run_experiment, summarize
from nlogic.logic_ast import GenConfig
from nlogic.regularizers import RegWeights
from nlogic.training import TrainConfig

ap = argparse.ArgumentParser()
ap.add_argument("--grid", type=float, nargs="+", default=[0.0, 1e-3, 1e-2, 1e-1, 10.0])
ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
ap.add_argument("--epochs", type=int, default=25)
args = ap.parse_args()

base = ExperimentConfig(
    task="sim",
    gen=GenConfig(n=300, m=2000),
    train=TrainConfig(max_epochs=args.epochs, seeds=tuple(args.seeds)),
)

print(f"{'lambda_l':>9s}  {'accuracy':>8s}  {'stderr':>7s}  {'rmse':>6s}")
for lam in args.grid:
    exp = replace(base, train=replace(base.train, reg_weights=RegWeights(lam, 1e-4, 1e-5)))
    s = summarize(run_experiment(exp))
    print(f"{lam:9g}  {s['accuracy'][0]:8.4f}  {s['accuracy'][1]:7.4f}  {s['rmse'][0]:6.4f}", flush=True)

# Expect the best value strictly inside the grid: with lambda_l = 0 the modules
# are free to be anything that fits the labels, while a very large weight lets
# the logic terms crowd out the task loss.
