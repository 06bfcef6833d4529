import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fimcb.dataset import Split, Stress, load_manifest
from fimcb.imageops import luma_grayscale, read_png
from fimcb.synth import SynthSpec, elongation, generate_dataset, generate_particle, particle_rng, render_particle


def channel_means(stress, spec, n=150):
    """Per-channel mean over the particle mask, pooled over n particles."""
    sums, count = np.zeros(3), 0
    for i in range(n):
        img, mask = render_particle(stress, spec, particle_rng(spec.seed, i))
        sums += img[mask].astype(float).sum(axis=0)
        count += mask.sum()
    return sums / count


def test_heat_tint_red_minus_blue_close_to_delta():
    spec = SynthSpec(chroma_delta=30, seed=7)
    r, g, b = channel_means(Stress.HEAT, spec)
    assert abs((r - b) - 30) <= 2
    assert abs((g - b) - 15) <= 2


@pytest.mark.parametrize("stress", list(Stress))
def test_zero_delta_leaves_channels_balanced(stress):
    r, g, b = channel_means(stress, SynthSpec(chroma_delta=0, seed=3))
    assert abs(r - b) < 1 and abs(g - b) < 1


def test_mechanical_particles_are_untinted():
    r, g, b = channel_means(Stress.MECHANICAL, SynthSpec(chroma_delta=30, seed=3))
    assert abs(r - b) < 1 and abs(g - b) < 1


def test_luma_shift_is_smaller_than_red_shift():
    spec0, spec30 = SynthSpec(chroma_delta=0, seed=5), SynthSpec(chroma_delta=30, seed=5)
    red_shift = channel_means(Stress.HEAT, spec30)[0] - channel_means(Stress.HEAT, spec0)[0]

    def luma_mean(spec):
        vals = []
        for i in range(150):
            img, mask = render_particle(Stress.HEAT, spec, particle_rng(spec.seed, i))
            vals.append(luma_grayscale(img)[mask].astype(float))
        return np.concatenate(vals).mean()

    luma_shift = luma_mean(spec30) - luma_mean(spec0)
    assert abs(luma_shift - (0.299 * 30 + 0.587 * 15)) < 1.5
    assert luma_shift < red_shift


def test_mechanical_is_more_elongated():
    spec = SynthSpec(seed=11)

    def mean_elong(stress):
        return np.mean([elongation(render_particle(stress, spec, particle_rng(1, i))[1]) for i in range(120)])

    assert mean_elong(Stress.MECHANICAL) > mean_elong(Stress.HEAT)


def test_elongation_of_simple_shapes():
    disc = np.zeros((21, 21), dtype=bool)
    yy, xx = np.mgrid[0:21, 0:21]
    disc[(yy - 10) ** 2 + (xx - 10) ** 2 <= 64] = True
    assert elongation(disc) == pytest.approx(1.0, abs=1e-9)
    bar = np.zeros((21, 21), dtype=bool)
    bar[9:12, 2:19] = True
    assert elongation(bar) > 4


@given(st.sampled_from(list(Stress)), st.integers(0, 2**64 - 1), st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_same_seed_bit_identical(stress, seed, index):
    spec = SynthSpec(image_side=24)
    a, ra = generate_particle(stress, spec, particle_rng(seed, index), index)
    b, rb = generate_particle(stress, spec, particle_rng(seed, index), index)
    assert np.array_equal(a, b) and ra == rb
    assert a.shape == (24, 24, 3) and a.dtype == np.uint8


@pytest.mark.parametrize("kwargs", [{"chroma_delta": 65}, {"chroma_delta": -1}, {"n_per_class": 1},
                                    {"holdout_count": 8}, {"heat_density": (4, 2)}, {"noise_sigma": -1}])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)


def test_holdout_labels():
    spec = SynthSpec(n_antibodies=8, holdout_count=2)
    assert spec.antibodies[0] == "mAb1" and len(spec.antibodies) == 8
    assert spec.holdout_antibodies == ["mAb7", "mAb8"]
    assert SynthSpec(holdout_count=0).holdout_antibodies == []


def test_generate_dataset(tmp_path):
    spec = SynthSpec(n_per_class=100, image_side=16, seed=2)
    m = generate_dataset(spec, tmp_path / "a")
    assert len(m.records) == 200
    assert sum(r.stress == Stress.HEAT for r in m.records) == 100
    assert all(r.split == Split.UNASSIGNED for r in m.records)
    assert len(m.metadata["holdout_antibodies"]) == 2
    assert len({r.antibody for r in m.records}) == 8
    loaded = load_manifest(tmp_path / "a")
    assert loaded.records == m.records
    first = read_png(tmp_path / "a" / m.records[0].image_path)
    assert first.shape == (16, 16, 3)

    again = generate_dataset(spec, tmp_path / "b")
    assert (tmp_path / "a" / "manifest.csv").read_bytes() == (tmp_path / "b" / "manifest.csv").read_bytes()
    for r in m.records[::37]:
        assert (tmp_path / "a" / r.image_path).read_bytes() == (tmp_path / "b" / r.image_path).read_bytes()
    assert again.checksum == m.checksum
