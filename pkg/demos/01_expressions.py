"""A tour of the expression layer: parsing, truth values, operand shuffles, generated data.

Nothing here trains a network. It shows the symbolic side that the neural model
is later asked to imitate.

    python3 demos/01_expressions.py
"""
import numpy as np

from nlogic.logic_ast import (
    GenConfig, eval_truth, generate_dataset, is_dnf, parse, render, shuffle_operands, split_dataset,
    variables,
)

# Expressions use ASCII operators; ~ binds tightest, then &, then |.
e = parse("(v1 & ~v2) | v3 | ~(v0 & v4)")
print("parsed     :", render(e))
print("variables  :", sorted(variables(e)))
print("in DNF     :", is_dnf(e), "(the last clause negates a conjunction)")

# A truth assignment is any mapping from variable index to bool.
world = {0: True, 1: True, 2: False, 3: False, 4: True}
print("value      :", eval_truth(e, world))

# The network folds n-ary AND/OR left to right, so training reshuffles operand
# order every epoch. Shuffles never change the truth value.
rng = np.random.default_rng(0)
for _ in range(3):
    s = shuffle_operands(e, rng)
    print("shuffled   :", render(s), "->", eval_truth(s, world))

# The simulated task: a hidden random assignment to n variables, m random DNF
# expressions over them, each labelled with its truth value under that assignment.
truth, data = generate_dataset(GenConfig(n=50, m=1000, seed=1))
train, valid, test = split_dataset(data, seed=1)
print(f"\n{len(data)} expressions over {len(truth)} variables; "
      f"{np.mean([x.label for x in data]):.1%} true")
print(f"split {len(train)}/{len(valid)}/{len(test)}")
for x in data[:5]:
    print(f"  {int(x.label)}  {render(x.expr)}")

# Every label is recoverable from the hidden assignment; the network never sees it.
assert all(eval_truth(x.expr, truth) == x.label for x in data)
