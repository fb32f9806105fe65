"""Throwaway: criterion 8 shape check (multipass, two attributes, 3 seeds)."""

import time

import numpy as np

from fairdesc import dataio, fairmetrics as fm, passcore
from fairdesc.cli import PROFILES
from fairdesc.passcore import PassConfig


def run(seed, lam):
    spec = dataio.SynthSpec(
        n_identities=100, samples_per_identity=20, dim=64,
        attributes=[
            dataio.AttributeSpec("attr_a", 2, 0.75),
            dataio.AttributeSpec("attr_b", 3, 0.75),
        ],
        cluster_spread=0.08, seed=seed,
    )
    ds = dataio.generate_synthetic(spec)
    train, _, test = dataio.split(ds, dataio.SplitSpec((0.70, 0.05, 0.25), "identity", seed=seed))
    values = dict(PROFILES["desk"])
    values.update({"lambda": lam, "seed": seed})
    cfg = PassConfig.from_dict(values)
    t0 = time.time()
    model, _ = passcore.train_multipass(train, cfg, "attr_a", "attr_b")
    t_train = time.time() - t0
    probe_cfg = fm.ProbeConfig(iterations=1200, batch_size=128, seed=seed)
    tr_train = train.with_features(passcore.transform(model.generator, train.features).astype(np.float32))
    tr_test = test.with_features(passcore.transform(model.generator, test.features).astype(np.float32))
    acc_a = fm.leakage_probe(tr_train, tr_test, "attr_a", probe_cfg).accuracy
    acc_b = fm.leakage_probe(tr_train, tr_test, "attr_b", probe_cfg).accuracy
    return acc_a, acc_b, t_train


t0 = time.time()
for seed in (0, 1, 2):
    a, b, tt = run(seed, 10.0)
    a0, b0, tt0 = run(seed, 0.0)
    print(f"seed {seed}: acc_a={a:.3f} ctrl_a={a0:.3f} | acc_b={b:.3f} ctrl_b={b0:.3f} "
          f"| t={tt:.0f}s ctrl_t={tt0:.0f}s")
print(f"wall={time.time()-t0:.0f}s")
