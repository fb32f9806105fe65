"""Throwaway: dry-run acceptance criteria 6/7 numbers for a candidate profile."""

import sys
import time

import numpy as np

from fairdesc import dataio, fairmetrics as fm, passcore
from fairdesc.passcore import PassConfig

CANDIDATE = dict(
    lambda_=10.0, K=3, T_fc=400, T_deb=30, T_atrain=600, T_plat=150,
    T_ep=10, N_ep=40, A_star=0.95, alpha1=1e-2, alpha2=5e-3, alpha3=2e-3,
    batch_size=64, out_dim=64, schedule="oat", check_every=5,
)


def one_run(seed, lam, schedule="oat", overrides=None):
    overrides = dict(overrides or {})
    spread = overrides.pop("spread", 0.1)
    leak = overrides.pop("leak", 0.75)
    spec = dataio.SynthSpec(
        n_identities=100, samples_per_identity=20, dim=64,
        attributes=[dataio.AttributeSpec("attr", 2, leak)],
        cluster_spread=spread, seed=seed,
    )
    ds = dataio.generate_synthetic(spec)
    train, _, test = dataio.split(ds, dataio.SplitSpec((0.70, 0.05, 0.25), "identity", seed=seed))
    kw = dict(CANDIDATE)
    kw.update(overrides)
    kw["lambda_"] = lam
    kw["schedule"] = schedule
    kw["seed"] = seed
    cfg = PassConfig(**kw)
    t0 = time.time()
    model, _ = passcore.train_pass(train, cfg, "attr")
    t_train = time.time() - t0
    probe_cfg = fm.ProbeConfig(iterations=1200, batch_size=128, seed=seed)
    tr_train = train.with_features(passcore.transform(model.generator, train.features).astype(np.float32))
    tr_test = test.with_features(passcore.transform(model.generator, test.features).astype(np.float32))
    t1 = time.time()
    raw_acc = fm.leakage_probe(train, test, "attr", probe_cfg).accuracy
    acc = fm.leakage_probe(tr_train, tr_test, "attr", probe_cfg).accuracy
    t_probe = time.time() - t1
    pairs = fm.make_pairs(test, 5000, 5000, seed=seed, group_attribute="attr")
    base, _ = fm.evaluate(test, pairs, [1e-2])
    deb, _ = fm.evaluate(tr_test, pairs, [1e-2])
    return dict(
        raw_acc=raw_acc, acc=acc, tpr=deb.entries[0].tpr_overall,
        tpr_raw=base.entries[0].tpr_overall, t_train=t_train, t_probe=t_probe,
    )


def main():
    overrides = {}
    for arg in sys.argv[1:]:
        k, v = arg.split("=")
        overrides[k] = float(v) if ("." in v or "e" in v) else int(v)

    print("== criterion 6 shape (3 seeds, pass vs lambda=0 control) ==")
    t0 = time.time()
    accs, tprs, ctprs, raws = [], [], [], []
    for seed in (0, 1, 2):
        r = one_run(seed, 10.0, overrides=overrides)
        c = one_run(seed, 0.0, overrides=overrides)
        accs.append(r["acc"]); tprs.append(r["tpr"]); ctprs.append(c["tpr"]); raws.append(r["raw_acc"])
        print(f" seed {seed}: raw={r['raw_acc']:.3f} acc={r['acc']:.3f} "
              f"tpr={r['tpr']:.3f} ctrl_tpr={c['tpr']:.3f} "
              f"t_train={r['t_train']:.1f}s ctrl_t={c['t_train']:.1f}s t_probe={r['t_probe']:.1f}s")
    mean_acc = np.mean(accs); mean_t = np.mean(tprs); mean_c = np.mean(ctprs)
    print(f" mean: raw={np.mean(raws):.3f} acc={mean_acc:.3f} tpr={mean_t:.3f} "
          f"ctrl={mean_c:.3f} rel={abs(mean_t-mean_c)/mean_c:.3f} "
          f"wall={time.time()-t0:.0f}s")

    print("== criterion 7 shape (5 paired seeds, oat vs aet) ==")
    t0 = time.time()
    oat, aet = [], []
    for seed in range(5):
        ro = one_run(seed, 10.0, "oat", overrides)
        ra = one_run(seed, 10.0, "aet", overrides)
        oat.append(ro["acc"]); aet.append(ra["acc"])
        print(f" seed {seed}: oat={ro['acc']:.3f} ({ro['t_train']:.0f}s) "
              f"aet={ra['acc']:.3f} ({ra['t_train']:.0f}s)")
    print(f" mean oat={np.mean(oat):.4f} aet={np.mean(aet):.4f} "
          f"diff={np.mean(aet)-np.mean(oat):+.4f} wall={time.time()-t0:.0f}s")


if __name__ == "__main__":
    main()
