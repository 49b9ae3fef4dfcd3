"""End-to-end acceptance checks, one test per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.  Criterion 7 trains nine models
on the default synthetic dataset and takes over an hour on one CPU core.
"""

import time

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from diffe import cli, training
from diffe.autodiff import Tensor, grad_check
from diffe.checkpoint import load_checkpoint, save_checkpoint
from diffe.config import build_config
from diffe.dataset import ContinuousRecording, load, save, slots_to_recording
from diffe.errors import FormatError
from diffe.evaluation import ablation_report, auc_ovr_macro, make_report
from diffe.networks import ABLATIONS, DiffEModel, ModelConfig
from diffe.preprocessing import band_select, common_average_reference, notch_filter, preprocess
from diffe.scheduler import build_schedule, forward_sample
from diffe.synth import SynthSpec, generate_dataset, generate_separable_toy
from diffe.training import (TrainConfig, fit, predict_scores, split_id, split_indices,
                            train_model)

MINI = ModelConfig(in_channels=2, n_classes=3, latent_dim=16, groups=2, time_dim=8,
                   denoiser_widths=[4, 4, 4], encoder_widths=[4, 4, 4, 4], classifier_hidden=[8])

ABLATION_SEEDS = (0, 1, 2)
ABLATION_EPOCHS = 30


def say(notes, text):
    notes.append(text)
    print(text)


# 1 ---------------------------------------------------------------------------

def test_c1_gradient_correctness(criterion):
    with criterion(1, "gradient correctness, all four networks, 20 seeds") as notes:
        t0 = time.time()
        worst = dict.fromkeys(["denoiser", "encoder", "decoder", "classifier"], 0.0)
        for seed in range(20):
            m = DiffEModel(MINI, T=20, seed=seed)
            rng = np.random.default_rng(seed)
            x = Tensor(rng.standard_normal((1, 2, 32)), requires_grad=True)
            t = int(rng.integers(1, 21))
            worst["denoiser"] = max(worst["denoiser"], grad_check(
                lambda xx, *p: m.denoiser(xx, [t])[0], [x] + m.denoiser.parameters(),
                seed=seed, max_entries=4))
            worst["encoder"] = max(worst["encoder"], grad_check(
                lambda xx, *p: m.encoder(xx)[0], [x] + m.encoder.parameters(),
                seed=seed, max_entries=8))

            _, feats = m.encoder(x)
            xh, taps = m.denoiser(x, [t])
            leaves = [Tensor(a.data, requires_grad=True) for a in feats + taps + [xh]]
            nf, nt = len(feats), len(taps)
            worst["decoder"] = max(worst["decoder"], grad_check(
                lambda *a: m.decoder(list(a[:nf]), list(a[nf:nf + nt]), x, a[nf + nt]),
                leaves + m.decoder.parameters(), seed=seed, max_entries=8))

            z = Tensor(rng.standard_normal((3, 16)), requires_grad=True)
            worst["classifier"] = max(worst["classifier"], grad_check(
                lambda zz, *p: m.classifier(zz), [z] + m.classifier.parameters(), seed=seed))
        say(notes, " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" in {time.time() - t0:.0f}s")
        assert max(worst.values()) < 1e-5
        assert time.time() - t0 < 60


# 2 ---------------------------------------------------------------------------

def test_c2_diffusion_math(criterion):
    with criterion(2, "alpha_bar product oracle and one-shot vs chained marginals") as notes:
        s = build_schedule(1000)
        direct = np.array([np.prod(s.alphas[:t]) for t in range(1, 1001)])
        err = np.max(np.abs(direct - s.alpha_bars))
        say(notes, f"alpha_bar err {err:.1e}")
        assert err < 1e-12

        n, x0 = 10_000, np.array([1.2, -0.4])
        rng = np.random.default_rng(0)
        worst = 0.0
        for t in (1, 500, 1000):
            ab = s.alpha_bars[t - 1]
            chained = np.broadcast_to(x0, (n, 2)).copy()
            for k in range(t):
                chained = (np.sqrt(1 - s.betas[k]) * chained
                           + np.sqrt(s.betas[k]) * rng.standard_normal(chained.shape))
            shot = forward_sample(Tensor(np.broadcast_to(x0, (n, 2)).copy()), t,
                                  Tensor(rng.standard_normal((n, 2))), s).data
            for sample in (chained, shot):
                z_mean = np.abs(sample.mean(0) - np.sqrt(ab) * x0) / np.sqrt((1 - ab) / n)
                z_var = np.abs(sample.var(0, ddof=1) - (1 - ab)) / ((1 - ab) * np.sqrt(2 / (n - 1)))
                worst = max(worst, z_mean.max(), z_var.max())
        say(notes, f"largest deviation {worst:.2f} SE")
        assert worst < 3.0


# 3 ---------------------------------------------------------------------------

def test_c3_loss_composition(criterion, monkeypatch):
    with criterion(3, "total == cae + 0.1 * cls at every step of a 5-epoch run") as notes:
        steps = []
        real = training.diffe_step

        def recording(*a):
            res = real(*a)
            steps.append(res)
            return res

        monkeypatch.setattr(training, "diffe_step", recording)
        cfg = TrainConfig(epochs=5, T=50, batch_size=8)
        assert cfg.alpha == 0.1
        fit(cfg, generate_separable_toy(12, seed=3, channels=2), MINI)
        gap = max(abs(r.total_loss - (r.cae_loss + 0.1 * r.cls_loss)) for r in steps)
        say(notes, f"{len(steps)} steps, max gap {gap:.1e}")
        assert len(steps) == 5 * 3 and gap <= 1e-12


# 4 ---------------------------------------------------------------------------

def _amp(x, f, fs=250.0, trim=500):
    seg = x[..., trim:-trim]
    return (np.abs(np.fft.rfft(seg, axis=-1)) * 2 / seg.shape[-1])[..., int(round(f * seg.shape[-1] / fs))]


def test_c4_filters(criterion):
    with criterion(4, "notch, band selection and CAR") as notes:
        t0 = time.time()
        fs, n = 250.0, 5000
        tt = np.arange(n) / fs
        tone = lambda f: np.sin(2 * np.pi * f * tt + 0.4)
        rec = lambda d: ContinuousRecording(np.atleast_2d(d), fs, [f"c{i}" for i in range(len(np.atleast_2d(d)))], [])

        notch_db = -20 * np.log10(_amp(notch_filter(rec(tone(60.0)), [60.0]).data[0], 60.0))
        low_db = -20 * np.log10(_amp(band_select(rec(tone(10.0))).data[0], 10.0))
        keep = _amp(band_select(rec(tone(90.0))).data[0], 90.0)
        data = np.random.default_rng(0).standard_normal((8, 2000)) + 5.0
        car = np.abs(common_average_reference(rec(data)).data.mean(axis=0)).max()
        say(notes, f"60 Hz -{notch_db:.1f} dB, 10 Hz -{low_db:.1f} dB, 90 Hz x{keep:.4f}, "
                   f"CAR mean {car:.1e}, {time.time() - t0:.1f}s")
        assert notch_db >= 20 and low_db >= 20
        assert abs(keep - 1.0) <= 0.05
        assert car <= 1e-12


# 5 ---------------------------------------------------------------------------

def _pairwise_auc(scores, labels):
    per = []
    for k in range(scores.shape[1]):
        pos, neg = scores[labels == k, k], scores[labels != k, k]
        wins = sum(np.count_nonzero(p > neg) + 0.5 * np.count_nonzero(p == neg) for p in pos)
        per.append(wins / (pos.size * neg.size))
    return 100.0 * float(np.mean(per))


def test_c5_auc_oracle(criterion):
    with criterion(5, "macro one-vs-rest AUC equals O(N^2) pair counting") as notes:
        rng = np.random.default_rng(7)
        mismatches = 0
        for i in range(50):
            K = int(rng.integers(2, 8))
            N = int(rng.integers(K + 1, 101))
            labels = np.concatenate([np.arange(K), rng.integers(0, K, N - K)])
            scores = (rng.integers(0, 5, (N, K)).astype(float) if i % 2
                      else rng.standard_normal((N, K)))
            mismatches += auc_ovr_macro(scores, labels) != _pairwise_auc(scores, labels)
        say(notes, f"{mismatches}/50 mismatches")
        assert mismatches == 0


# 6 ---------------------------------------------------------------------------

def _bandpower(ds):
    freqs = np.fft.rfftfreq(ds.length, 1 / ds.fs)
    p = np.abs(np.fft.rfft(ds.epochs, axis=-1)) ** 2
    return np.concatenate([np.log(p[..., (freqs >= lo) & (freqs < hi)].mean(-1))
                           for lo, hi in ((75, 85), (105, 115))], axis=1)


def test_c6_learning_sanity(criterion):
    with criterion(6, "separable toy: >= 95% test accuracy within 50 epochs") as notes:
        t0 = time.time()
        ds = generate_separable_toy(20, seed=0)
        tr, te = split_indices(ds.labels, 0.2, 0)
        oracle = LogisticRegression().fit(_bandpower(ds.subset(tr)), ds.labels[tr])
        oracle_acc = 100 * oracle.score(_bandpower(ds.subset(te)), ds.labels[te])

        model, hist = fit(TrainConfig(epochs=50, batch_size=8), ds)
        final = hist.records[-1]
        say(notes, f"test acc {final.test_acc:.1f}% (oracle {oracle_acc:.0f}%), cls loss "
                   f"{hist.records[0].cls_loss:.4f} -> {final.cls_loss:.4f}, {time.time() - t0:.0f}s")
        assert oracle_acc >= 99
        assert final.test_acc >= 95.0
        assert final.cls_loss < hist.records[0].cls_loss
        assert time.time() - t0 < 300


# 7 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def default_dataset():
    return preprocess(slots_to_recording(generate_dataset(SynthSpec())))


def test_c7_ablation_trend(criterion, default_dataset):
    with criterion(7, "ablation trend on the default 13-class synthetic set, 3 seeds") as notes:
        t0 = time.time()
        ds = default_dataset
        assert len(ds) == 1300 and ds.n_channels == 8 and ds.fs == 250.0
        tr, te = split_indices(ds.labels, 0.2, 0)
        train, test = ds.subset(tr), ds.subset(te)
        reports = []
        for seed in ABLATION_SEEDS:
            for arm in ABLATIONS:
                cfg = TrainConfig(epochs=ABLATION_EPOCHS, ablation=arm, seed=seed)
                model, _ = train_model(cfg, train, test)
                rep = make_report(predict_scores(model, test.epochs), test.labels, seed=seed,
                                  ablation=arm, split_id=split_id(te))
                print(f"{arm} seed {seed}: acc {rep.accuracy_pct:.2f} auc {rep.auc_pct:.2f}")
                reports.append(rep)
        table = ablation_report(reports)
        print(table.to_text())
        full, nod, nodd = (table.row(a) for a in ABLATIONS)
        say(notes, "acc " + " / ".join(f"{r.accuracy_mean:.1f}" for r in table.rows)
            + ", auc " + " / ".join(f"{r.auc_mean:.1f}" for r in table.rows)
            + f", {(time.time() - t0) / 60:.0f} min")
        assert full.accuracy_mean >= 4 * 100 / 13, "full arm below 4x chance"
        assert full.accuracy_mean >= nod.accuracy_mean >= nodd.accuracy_mean, "accuracy ordering"
        assert nodd.auc_mean < min(full.auc_mean, nod.auc_mean), "classifier-only arm not lowest AUC"
        assert time.time() - t0 <= 2 * 3600


# 8 ---------------------------------------------------------------------------

SMALL = {
    "data": {"n_classes": 3, "trials_per_class": 12, "channels": 2},
    "model": {"latent_dim": 16, "groups": 2, "time_dim": 8, "denoiser_widths": [4, 4, 4],
              "encoder_widths": [4, 4, 4, 4], "classifier_hidden": [8]},
    "train": {"epochs": 3, "T": 50, "batch_size": 8, "seed": 11},
}


def test_c8_determinism(criterion, tmp_path):
    with criterion(8, "same config and seed give identical history CSV and report JSON") as notes:
        cfg = build_config(SMALL)
        ds = preprocess(slots_to_recording(generate_dataset(cfg.data)), cfg.pipeline)
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            cli.train_run(build_config(SMALL), ds, out)
        same = {name: (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
                for name in ("history.csv", "report.json", "model.ckpt")}
        say(notes, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
        assert all(same.values())


# 9 ---------------------------------------------------------------------------

def test_c9_format_round_trip(criterion, tmp_path):
    with criterion(9, "container and checkpoint round trips; corrupt files rejected") as notes:
        ds = preprocess(slots_to_recording(generate_dataset(build_config(SMALL).data)))
        save(ds, tmp_path / "d.bin")
        back = load(tmp_path / "d.bin")
        save(back, tmp_path / "d2.bin")
        assert (tmp_path / "d.bin").read_bytes() == (tmp_path / "d2.bin").read_bytes()
        assert back.epochs.tobytes() == ds.epochs.astype(np.float32).astype(np.float64).tobytes()
        assert np.array_equal(back.labels, ds.labels)

        m = DiffEModel(MINI, T=30, seed=2, input_scale=0.7)
        save_checkpoint(m, tmp_path / "m.ckpt", {"epoch": 3})
        m2, extra = load_checkpoint(tmp_path / "m.ckpt")
        assert all(a.data.tobytes() == b.data.tobytes()
                   for (_, a), (_, b) in zip(m.named_parameters(), m2.named_parameters()))
        save_checkpoint(m2, tmp_path / "m2.ckpt", extra)
        assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()

        raw = (tmp_path / "d.bin").read_bytes()
        (tmp_path / "trunc.bin").write_bytes(raw[:-7])
        with pytest.raises(FormatError, match="payload is"):
            load(tmp_path / "trunc.bin")
        (tmp_path / "ver.bin").write_bytes(raw.replace(b'"format_version": 1', b'"format_version": 9', 1))
        with pytest.raises(FormatError, match="format_version"):
            load(tmp_path / "ver.bin")
        ck = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "trunc.ckpt").write_bytes(ck[:-1])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "trunc.ckpt")

        codes = {
            "truncated data": cli.main(["train", "--data", str(tmp_path / "trunc.bin"),
                                        "--out-dir", str(tmp_path / "r")]),
            "bad version": cli.main(["train", "--data", str(tmp_path / "ver.bin"),
                                     "--out-dir", str(tmp_path / "r")]),
            "truncated checkpoint": cli.main(["eval", "--checkpoint", str(tmp_path / "trunc.ckpt"),
                                              "--data", str(tmp_path / "d.bin")]),
        }
        say(notes, ", ".join(f"{k} -> exit {v}" for k, v in codes.items()))
        assert set(codes.values()) == {cli.EXIT_IO}
