"""Throwaway calibration pilot for the desk profile (not part of the package)."""

import time

import numpy as np

from fairdesc import dataio, fairmetrics as fm, passcore


def pipeline(seed, lam, config_overrides=None, schedule="oat"):
    spec = dataio.SynthSpec(
        n_identities=100,
        samples_per_identity=20,
        dim=64,
        attributes=[dataio.AttributeSpec("attr", 2, 0.75)],
        cluster_spread=0.15,
        seed=seed,
    )
    ds = dataio.generate_synthetic(spec)
    train, _, test = dataio.split(
        ds, dataio.SplitSpec((0.70, 0.05, 0.25), "identity", seed=seed)
    )
    cfg = passcore.PassConfig(
        lambda_=lam,
        K=3,
        T_fc=400,
        T_deb=25,
        T_atrain=400,
        T_plat=30,
        T_ep=40,
        N_ep=60,
        A_star=0.95,
        alpha1=1e-2,
        alpha2=1e-3,
        alpha3=1e-3,
        batch_size=64,
        seed=seed,
        out_dim=64,
        schedule=schedule,
        check_every=10,
    )
    if config_overrides:
        for k, v in config_overrides.items():
            setattr(cfg, k, v)
    t0 = time.time()
    model, log = passcore.train_pass(train, cfg, "attr")
    t_train = time.time() - t0

    probe_cfg = fm.ProbeConfig(iterations=1500, batch_size=128, seed=seed)
    t0 = time.time()
    raw_probe = fm.leakage_probe(train, test, "attr", probe_cfg)
    tr_train = train.with_features(passcore.transform(model.generator, train.features).astype(np.float32))
    tr_test = test.with_features(passcore.transform(model.generator, test.features).astype(np.float32))
    deb_probe = fm.leakage_probe(tr_train, tr_test, "attr", probe_cfg)
    t_probe = time.time() - t0

    pairs = fm.make_pairs(test, 5000, 5000, seed=seed, group_attribute="attr")
    base_rep, _ = fm.evaluate(test, pairs, [1e-2])
    deb_rep, bpc_rep = fm.evaluate(tr_test, pairs, [1e-2], baseline=base_rep)
    return dict(
        raw_acc=raw_probe.accuracy,
        deb_acc=deb_probe.accuracy,
        tpr_base=base_rep.entries[0].tpr_overall,
        tpr_deb=deb_rep.entries[0].tpr_overall,
        bias_base=base_rep.entries[0].bias,
        bias_deb=deb_rep.entries[0].bias,
        t_train=t_train,
        t_probe=t_probe,
    )


if __name__ == "__main__":
    for seed in (0, 1, 2):
        r10 = pipeline(seed, 10.0)
        r0 = pipeline(seed, 0.0)
        print(
            f"seed {seed}: raw_acc={r10['raw_acc']:.3f} "
            f"pass_acc={r10['deb_acc']:.3f} ctrl_acc={r0['deb_acc']:.3f} "
            f"tpr_pass={r10['tpr_deb']:.3f} tpr_ctrl={r0['tpr_deb']:.3f} tpr_raw={r10['tpr_base']:.3f} "
            f"bias_raw={r10['bias_base']} bias_pass={r10['bias_deb']} "
            f"t_train={r10['t_train']:.1f}s t_probe={r10['t_probe']:.1f}s"
        )
