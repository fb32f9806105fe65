"""Throwaway diagnostic: watch leak-direction energy in W across episodes."""

import sys
import time

import numpy as np

from fairdesc import dataio, fairmetrics as fm, passcore
from fairdesc.passcore import PassConfig


def main(cfg_overrides):
    seed = 0
    spread, leak = 0.1, 0.75
    spec = dataio.SynthSpec(
        n_identities=100, samples_per_identity=20, dim=64,
        attributes=[dataio.AttributeSpec("attr", 2, leak)],
        cluster_spread=spread, seed=seed,
    )
    # recover the leak directions the generator must kill:
    # regenerate the internal QR with the same stream the generator uses
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5D1]))
    q, _ = np.linalg.qr(rng.standard_normal((64, 2)))
    ds = dataio.generate_synthetic(spec)
    train, _, test = dataio.split(ds, dataio.SplitSpec((0.70, 0.05, 0.25), "identity", seed=seed))

    cfg = PassConfig(
        lambda_=10.0, K=3, T_fc=400, T_deb=30, T_atrain=600, T_plat=150,
        T_ep=10, N_ep=40, A_star=0.95, alpha1=1e-2, alpha2=5e-3, alpha3=2e-3,
        batch_size=64, seed=seed, out_dim=64, schedule="oat", check_every=5,
    )
    for k, v in cfg_overrides.items():
        setattr(cfg, k, v)

    snaps = {}

    def cb(event, episode, model):
        if event in ("stage3_start", "stage4_end"):
            w = model.generator.mlp.layers[0].weights
            leak_energy = np.linalg.norm(w @ q)
            total = np.linalg.norm(w)
            snaps.setdefault(episode, {})[event] = (leak_energy, total)

    t0 = time.time()
    model, log = passcore.train_pass(train, cfg, "attr", callback=cb)
    t_train = time.time() - t0

    accs = [r for r in log.records if r.loss_name == "val_acc"]
    acc_by_ep = {}
    for r in accs:
        acc_by_ep.setdefault(r.episode, []).append(r.value)
    for ep in sorted(snaps):
        le, tot = snaps[ep].get("stage3_start", (np.nan, np.nan))
        a = acc_by_ep.get(ep, [np.nan])
        print(f"ep {ep:3d}: leak_energy={le:7.4f} total_W={tot:7.3f} "
              f"stage4_acc_first={a[0]:.3f} last={a[-1]:.3f} n_checks={len(a)}")

    probe_cfg = fm.ProbeConfig(iterations=1200, batch_size=128, seed=seed)
    tr_train = train.with_features(passcore.transform(model.generator, train.features).astype(np.float32))
    tr_test = test.with_features(passcore.transform(model.generator, test.features).astype(np.float32))
    acc = fm.leakage_probe(tr_train, tr_test, "attr", probe_cfg).accuracy
    pairs = fm.make_pairs(test, 3000, 3000, seed=seed, group_attribute="attr")
    base_rep, _ = fm.evaluate(test, pairs, [1e-2])
    deb_rep, _ = fm.evaluate(tr_test, pairs, [1e-2])
    print(f"probe_acc={acc:.3f} tpr={deb_rep.entries[0].tpr_overall:.3f} "
          f"tpr_raw={base_rep.entries[0].tpr_overall:.3f} t_train={t_train:.1f}s")


if __name__ == "__main__":
    overrides = {}
    for arg in sys.argv[1:]:
        k, v = arg.split("=")
        overrides[k] = float(v) if "." in v or "e" in v else int(v)
    main(overrides)
