"""Loss/win counts, Wilcoxon p-values and Friedman ranks for a results table.

The cells below are the published MAE/RMSE values of six federated
recommenders on three datasets.  One model is best in every cell, which
gives 0 losses out of 6, the smallest possible one-sided exact Wilcoxon
p-value for six pairs (1/64), and a mean Friedman rank of exactly 1.
"""
import numpy as np

from fbalf import friedman_ranks, loss_win, wilcoxon_signed_rank

models = ["FedMF", "FedRec", "MetaMF", "FedRec++", "RFRec", "FBALF"]
cases = ["D1-MAE", "D1-RMSE", "D2-MAE", "D2-RMSE", "D3-MAE", "D3-RMSE"]
table = np.array([
    [0.6981, 0.6867, 0.6905, 0.7096, 0.6893, 0.6639],
    [0.8919, 0.8753, 0.8769, 0.9105, 0.8728, 0.8442],
    [0.9683, 0.9394, 0.9680, 0.9062, 1.0314, 0.8817],
    [1.2387, 1.2244, 1.2273, 1.1794, 1.2751, 1.1607],
    [0.5844, 0.5906, 0.5869, 0.6155, 0.7184, 0.5713],
    [0.7762, 0.7830, 0.7772, 0.8149, 0.9495, 0.7523],
])

ours = table[:, -1]
ranks = friedman_ranks(table.T)
print(f"{'model':>9}  loss/win  p-value   F-rank")
for j, name in enumerate(models):
    if j == len(models) - 1:
        print(f"{name:>9}  {'':8}  {'':8}  {ranks[j]:.4f}")
        continue
    lw = loss_win(ours, table[:, j])
    p = wilcoxon_signed_rank(list(zip(ours, table[:, j])))
    print(f"{name:>9}  {lw.losses}/{lw.wins:<6}  {p:.6f}  {ranks[j]:.4f}")
