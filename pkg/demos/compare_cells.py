"""Train RMU, LSTM and GRU on the same synthetic split and print their curves.

The synthetic target mixes the mean and the minimum of a piecewise-constant
quality signal. Sequences with the lowest quality variance go to training.
"""

from rmukit import SyntheticSpec, TrainConfig, cells, param_count, synth_generate, train, variance_split

data = synth_generate(SyntheticSpec(num_sequences=120, T=40, seed=3))
train_set, test_set = variance_split(data, train_fraction=0.7)
print(f"{len(train_set)} train / {len(test_set)} test sequences")

logs = {}
for kind in cells.CELL_KINDS:
    config = TrainConfig(epochs=25, batch_size=16, cell_kind=kind, hidden=16, seed=0)
    net = config.build_net(data[0].dim)
    print(f"{kind}: {param_count(kind, net.d_proj, net.d_hid)} cell parameters")
    logs[kind] = train(net, train_set, config, test=test_set).log

print()
print("epoch  " + "  ".join(f"{k + ' loss':>10s} {k + ' plcc':>10s}" for k in logs))
for i in range(0, 25, 4):
    cols = []
    for log in logs.values():
        r = log.records[i]
        cols.append(f"{r.train_loss:10.4f} {r.plcc:10.3f}")
    print(f"{i + 1:5d}  " + "  ".join(cols))


# log.to_csv() gives the same curves as CSV, ready for any plotting tool.
