"""What the server sees with and without hybrid filling.

Each client uploads item-keyed gradients.  Without filling, the key set is
exactly the set of items the user rated.  With filling factor rho, the
client also trains on rho times as many unrated items, so the upload hides
which keys are real.  For the first T_HF rounds the synthetic targets are
the user's mean rating; afterwards they track the model's own prediction.
"""
import numpy as np

from fbalf import HyperParams, init_client, init_server, local_train_round, snapshot, split_holdout
from fbalf import run_training, standard_fixture

ds = standard_fixture(0)
train, test = split_holdout(ds, 0.8, seed=0)
items, ratings = train.by_user()[0]

print("user 0 rated", len(items), "items")
for rho in (0, 1, 2, 3):
    hp = HyperParams(rho=rho)
    client = init_client(0, items, ratings, hp, train.n_items, 1, 5)
    up = local_train_round(client, snapshot(init_server(train.n_items, hp)), 1, hp)
    hidden = np.isin(up.items, items).mean()
    print(f"  rho={rho}: upload has {len(up):2d} keys, {hidden:.0%} of them real ratings")

# synthetic targets before and after the switch; here the model is still
# untrained, so its predictions (the round-11 targets) sit near the bottom
hp = HyperParams(rho=1, t_hf=10)
client = init_client(0, items, ratings, hp, train.n_items, 1, 5)
server = init_server(train.n_items, hp)
for t in (10, 11):
    trace = []
    local_train_round(client, snapshot(server), t, hp, trace)
    fake = [target for (_, p, _, observed, target, _, _) in trace if not observed and p == 0]
    print(f"round {t}: first synthetic targets {np.round(fake[:4], 3)} (user mean {client.user_mean:.3f})")

# accuracy cost of filling on the held-out ratings
for rho in (0, 1, 2, 3):
    report = run_training(train, test, HyperParams(rho=rho, rounds=60))
    print(f"rho={rho}: test MAE {report.final.mae:.4f}  RMSE {report.final.rmse:.4f}  "
          f"upload keys {report.surface_sizes().sum()}")
