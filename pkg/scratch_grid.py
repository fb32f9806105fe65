"""Throwaway grid search for desk-profile calibration."""

import itertools
import sys
import time

import numpy as np

from fairdesc import dataio, fairmetrics as fm, passcore


def run(seed, lam, spread, leak, T_fc, T_deb, T_ep, N_ep, alpha3, batch, schedule="oat"):
    spec = dataio.SynthSpec(
        n_identities=100,
        samples_per_identity=20,
        dim=64,
        attributes=[dataio.AttributeSpec("attr", 2, leak)],
        cluster_spread=spread,
        seed=seed,
    )
    ds = dataio.generate_synthetic(spec)
    train, _, test = dataio.split(
        ds, dataio.SplitSpec((0.70, 0.05, 0.25), "identity", seed=seed)
    )
    cfg = passcore.PassConfig(
        lambda_=lam, K=3, T_fc=T_fc, T_deb=T_deb, T_atrain=400, T_plat=30,
        T_ep=T_ep, N_ep=N_ep, A_star=0.95, alpha1=1e-2, alpha2=1e-3, alpha3=alpha3,
        batch_size=batch, seed=seed, out_dim=64, schedule=schedule, check_every=10,
    )
    t0 = time.time()
    model, _ = passcore.train_pass(train, cfg, "attr")
    t_train = time.time() - t0
    probe_cfg = fm.ProbeConfig(iterations=1200, batch_size=128, seed=seed)
    tr_train = train.with_features(passcore.transform(model.generator, train.features).astype(np.float32))
    tr_test = test.with_features(passcore.transform(model.generator, test.features).astype(np.float32))
    acc = fm.leakage_probe(tr_train, tr_test, "attr", probe_cfg).accuracy
    pairs = fm.make_pairs(test, 5000, 5000, seed=seed, group_attribute="attr")
    base_rep, _ = fm.evaluate(test, pairs, [1e-2])
    deb_rep, _ = fm.evaluate(tr_test, pairs, [1e-2])
    return acc, deb_rep.entries[0].tpr_overall, base_rep.entries[0].tpr_overall, t_train


def main():
    grids = dict(
        spread=[0.10],
        leak=[0.75],
        T_fc=[200, 400],
        T_deb=[25, 50],
        T_ep=[15, 40],
        N_ep=[60],
        alpha3=[1e-3, 3e-3],
        batch=[64],
    )
    keys = list(grids)
    for values in itertools.product(*grids.values()):
        kw = dict(zip(keys, values))
        accs, tprs, ctprs = [], [], []
        for seed in (0, 1):
            a, t, _, tt = run(seed, 10.0, **kw)
            a0, t0, traw, _ = run(seed, 0.0, **kw)
            accs.append(a)
            tprs.append(t)
            ctprs.append(t0)
        ratio = np.mean(tprs) / np.mean(ctprs)
        print(
            f"{kw} -> acc={np.mean(accs):.3f} tpr={np.mean(tprs):.3f} "
            f"ctrl={np.mean(ctprs):.3f} ratio={ratio:.3f} traw={traw:.3f} t={tt:.1f}s",
            flush=True,
        )


if __name__ == "__main__":
    main()
