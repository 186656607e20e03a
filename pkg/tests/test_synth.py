import numpy as np
import pytest

from lfmmi_cl import synth
from lfmmi_cl.errors import InvalidInput

from conftest import TINY_KNOBS


def _spec(**kw):
    rng = np.random.default_rng(0)
    trans = synth._random_transitions(rng, 4, 1.0)
    args = dict(
        name="X",
        seed=5,
        num_utts=20,
        utt_len_range=(2, 5),
        label_lm=synth.lm_from_transitions(trans, 4.0),
        emission_means=rng.normal(size=(4, 3)),
        channel_matrix=np.eye(3),
        channel_bias=np.zeros(3),
        noise_std=0.3,
    )
    args.update(kw)
    return synth.DomainSpec(**args)


def test_noiseless_limit_reproduces_means():
    spec = _spec(noise_std=1e-12)
    ds = synth.generate_domain(spec)
    for u in ds.utterances:
        # every frame sits on some label's mean
        d = np.abs(u.features[:, None, :] - spec.emission_means[None]).max(axis=2)
        assert d.min(axis=1).max() < 1e-9


def test_frames_follow_labels_and_durations():
    spec = _spec(noise_std=1e-12)
    for u in synth.generate_domain(spec).utterances:
        nearest = np.abs(u.features[:, None, :] - spec.emission_means[None]).max(axis=2).argmin(axis=1)
        collapsed = [int(nearest[0])] + [int(b) for a, b in zip(nearest, nearest[1:]) if a != b]
        # consecutive repeats of one label merge, so compare after collapsing the reference too
        ref = [u.labels[0]] + [b for a, b in zip(u.labels, u.labels[1:]) if a != b]
        assert collapsed == ref
        assert len(u.labels) <= u.num_frames <= 3 * len(u.labels)
        assert all(0 <= lab < 4 for lab in u.labels)


def test_generation_is_deterministic():
    a = synth.generate_domain(_spec())
    b = synth.generate_domain(_spec())
    for u, v in zip(a.utterances, b.utterances):
        assert u.uid == v.uid and u.labels == v.labels
        assert u.features.tobytes() == v.features.tobytes()


def test_split_is_ninety_ten_by_index():
    ds = synth.generate_domain(_spec(num_utts=30))
    assert [u.split for u in ds.utterances] == ["train"] * 27 + ["test"] * 3
    assert synth.num_train(2222) == 2000 and synth.num_train(555) == 500


def test_label_marginals_match_stationary_distribution():
    spec = _spec(num_utts=10_000, utt_len_range=(3, 10))
    ds = synth.generate_domain(spec)
    marg = synth.label_marginals(ds, 4)
    trans = np.exp(spec.label_lm.log_probs[:4, :4])
    pi = synth.stationary_distribution(trans / trans.sum(axis=1, keepdims=True))
    np.testing.assert_allclose(pi @ (trans / trans.sum(axis=1, keepdims=True)), pi, atol=1e-12)
    assert np.abs(marg - pi).max() < 0.02


@pytest.mark.parametrize(
    "kw",
    [
        dict(noise_std=0.0),
        dict(frames_per_label_range=(0, 2)),
        dict(utt_len_range=(3, 2)),
        dict(channel_matrix=np.eye(2)),
        dict(num_utts=0),
    ],
)
def test_degenerate_specs_rejected(kw):
    with pytest.raises(InvalidInput):
        synth.generate_domain(_spec(**kw))


def test_default_specs_shape_and_purity():
    a = synth.default_pipeline_specs(7)
    b = synth.default_pipeline_specs(7)
    assert [s.name for s in a] == list("ABCDE")
    assert {s.emission_means.shape for s in a} == {(8, 6)}
    assert [synth.num_train(s.num_utts) for s in a] == [2000, 500, 500, 500, 500]
    for x, y in zip(a, b):
        assert x.seed == y.seed
        assert x.channel_matrix.tobytes() == y.channel_matrix.tobytes()
        assert x.label_lm.log_probs.tobytes() == y.label_lm.log_probs.tobytes()
    c = synth.default_pipeline_specs(8)
    assert a[0].emission_means.tobytes() != c[0].emission_means.tobytes()


def test_default_specs_domain_roles():
    specs = {s.name: s for s in synth.default_pipeline_specs(0)}
    np.testing.assert_array_equal(specs["A"].channel_matrix, np.eye(6))
    # B keeps A's means and LM; C is the low-noise domain; D and E have their own LMs
    assert specs["B"].emission_means is specs["A"].emission_means
    assert specs["B"].label_lm is specs["A"].label_lm
    assert specs["C"].noise_std < specs["A"].noise_std
    for name in "DE":
        assert specs[name].label_lm is not specs["A"].label_lm


def test_dataset_round_trip(tmp_path):
    datasets = synth.generate_pipeline(1, TINY_KNOBS)
    synth.save_pipeline(datasets, tmp_path)
    loaded = synth.load_pipeline(tmp_path)
    assert list(loaded) == list(datasets)
    for name in datasets:
        a, b = datasets[name], loaded[name]
        assert (a.num_labels, a.feature_dim) == (b.num_labels, b.feature_dim)
        for u, v in zip(a.utterances, b.utterances):
            assert (u.uid, u.labels, u.split, u.domain) == (v.uid, v.labels, v.split, v.domain)
            assert u.features.tobytes() == v.features.tobytes()
    # saving the loaded copy reproduces the files byte for byte
    synth.save_pipeline(loaded, tmp_path / "again")
    for f in sorted(p.name for p in tmp_path.iterdir() if p.is_file()):
        assert (tmp_path / f).read_bytes() == (tmp_path / "again" / f).read_bytes()


def test_feature_file_is_little_endian_f64(tmp_path):
    ds = synth.generate_domain(_spec(num_utts=3))
    synth.save_dataset(ds, tmp_path)
    raw = np.fromfile(tmp_path / "X.feats", dtype="<f8")
    np.testing.assert_array_equal(raw, np.concatenate([u.features for u in ds.utterances]).ravel())
    lines = (tmp_path / "X.labels").read_text().splitlines()
    assert lines[0].split()[0] == ds.utterances[0].uid
