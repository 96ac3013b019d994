import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchseg import (
    ConfigError,
    ContractViolation,
    LatentSourceModel,
    Lattice,
    MixtureComponent,
    Neighborhood,
    NoiseSpec,
    PatchShape,
    PixelMixtureModel,
    PointwiseModel,
    TrainingSet,
    build_block_model,
    sample_latent_source_pair,
    sample_pointwise_pair,
    sample_training_set,
    verify_jigsaw,
)
from patchseg.models import load_model, model_from_dict, model_to_dict, patch_mixture, save_model


def site(*components, sigma=0.0):
    noise = NoiseSpec("gaussian", sigma)
    return PixelMixtureModel(tuple(MixtureComponent(w, (m,), lab) for w, m, lab in components), noise)


def uniform_model(dims, components, sigma=0.0, patch=None, jigsaw=Neighborhood.box(0), rho_min=None):
    lat = Lattice(dims)
    patch = patch or PatchShape.single(lat.ndim)
    sites = tuple(site(*components, sigma=sigma) for _ in range(lat.size))
    rho = rho_min if rho_min is not None else min(w for w, _, _ in components)
    return PointwiseModel(lat, patch, sites, rho, jigsaw, NoiseSpec("gaussian", sigma))


class TestNoise:
    @pytest.mark.parametrize("family", ["gaussian", "uniform"])
    @pytest.mark.parametrize("sigma", [0.5, 1.0])
    def test_sub_gaussian_mgf(self, family, sigma):
        x = NoiseSpec(family, sigma).sample(np.random.default_rng(7), 1_000_000)
        for s in (-2, -1, -0.5, 0.5, 1, 2):
            assert np.mean(np.exp(s * x)) <= 1.05 * math.exp(s * s * sigma * sigma / 2)

    def test_uniform_support(self):
        x = NoiseSpec("uniform", 0.3).sample(np.random.default_rng(0), 10_000)
        assert x.min() >= -0.3 and x.max() <= 0.3

    @pytest.mark.parametrize("bad", [dict(family="laplace"), dict(sigma=-1.0), dict(sigma=math.inf)])
    def test_rejects(self, bad):
        with pytest.raises(ContractViolation):
            NoiseSpec(**bad)


class TestMixtures:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ContractViolation):
            site((0.5, 0.0, 1), (0.4, 1.0, -1))

    def test_label_domain(self):
        with pytest.raises(ContractViolation):
            MixtureComponent(1.0, (0.0,), 0)

    def test_declared_rho_min_checked(self):
        with pytest.raises(ContractViolation):
            uniform_model((2, 2), [(0.2, 0.0, 1), (0.8, 1.0, -1)], rho_min=0.5)

    def test_patch_mixture_enumerates_configurations(self):
        model = uniform_model((1, 3), [(0.25, 0.0, -1), (0.75, 1.0, 1)], patch=PatchShape(((0, 0), (0, 1))), rho_min=0.0625)
        mix = patch_mixture(model, 0)
        assert mix.n_components == 4
        weights = {c.mean: c.weight for c in mix.components}
        assert weights[(1.0, 1.0)] == pytest.approx(0.5625)
        assert weights[(0.0, 0.0)] == pytest.approx(0.0625)
        # at the clamped right edge both entries are the same site
        edge = patch_mixture(model, 2)
        assert edge.n_components == 2
        assert model.c_max == 4

    def test_min_patch_weight(self):
        model = uniform_model((1, 3), [(0.25, 0.0, -1), (0.75, 1.0, 1)], patch=PatchShape(((0, 0), (0, 1))), rho_min=0.0625)
        assert model.min_patch_weight() == pytest.approx(0.0625)


class TestPointwiseSampler:
    def test_degenerate_single_component(self):
        model = uniform_model((4, 4), [(1.0, 3.5, 1)])
        img, lab = sample_pointwise_pair(model, np.random.default_rng(0))
        assert np.all(lab == 1) and np.all(img == 3.5)

    def test_label_frequency(self):
        model = uniform_model((100, 100), [(0.5, 0.0, -1), (0.5, 1.0, 1)])
        _, lab = sample_pointwise_pair(model, np.random.default_rng(1))
        assert abs(np.mean(lab == 1) - 0.5) <= 0.015

    def test_noise_variance(self):
        model = uniform_model((100, 100), [(1.0, 2.0, 1)], sigma=1.0)
        img, _ = sample_pointwise_pair(model, np.random.default_rng(2))
        assert abs(np.var(img - 2.0) - 1.0) <= 0.05

    def test_component_frequencies(self):
        comps = [(0.2, 0.0, -1), (0.3, 1.0, 1), (0.5, 2.0, -1)]
        model = uniform_model((200, 100), comps)
        img, _ = sample_pointwise_pair(model, np.random.default_rng(3))
        N = img.size
        for w, m, _ in comps:
            freq = np.mean(img == m)
            assert abs(freq - w) <= 3 * math.sqrt(w * (1 - w) / N)

    def test_labels_follow_means(self):
        model = uniform_model((10, 10), [(0.5, 0.0, -1), (0.5, 1.0, 1)])
        img, lab = sample_pointwise_pair(model, np.random.default_rng(4))
        assert np.array_equal(lab == 1, img == 1.0)


class TestLatentSource:
    def sources(self):
        return np.array([[[1, 1, -1], [-1, -1, 1]], [[-1, 1, 1], [1, -1, -1]]])

    def test_noiseless_limit(self):
        src = self.sources()
        model = LatentSourceModel(src, [0.5, 0.5], math.inf, NoiseSpec("gaussian", 0.0))
        img, lab, g = sample_latent_source_pair(model, np.random.default_rng(0))
        assert np.array_equal(lab, src[g])
        assert np.array_equal(img, (src[g] == 1).astype(float))

    @pytest.mark.parametrize("alpha,expected,tol", [(0.0, 0.5, 0.015), (math.log(3), 0.25, 0.013)])
    def test_flip_rate(self, alpha, expected, tol):
        base = np.ones((1, 100, 100), dtype=np.int8)
        model = LatentSourceModel(base, [1.0], alpha, NoiseSpec("gaussian", 0.0))
        assert model.flip_probability == pytest.approx(expected)
        _, lab, _ = sample_latent_source_pair(model, np.random.default_rng(5))
        assert abs(np.mean(lab == -1) - expected) <= tol

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0, 6))
    def test_flip_rate_property(self, alpha):
        base = -np.ones((1, 60, 60), dtype=np.int8)
        model = LatentSourceModel(base, [1.0], alpha, NoiseSpec("gaussian", 0.0))
        _, lab, _ = sample_latent_source_pair(model, np.random.default_rng(int(alpha * 1000)))
        p = math.exp(-alpha) / (1 + math.exp(-alpha))
        assert abs(np.mean(lab == 1) - p) <= 3 * math.sqrt(p * (1 - p) / lab.size) + 1e-12

    def test_source_frequencies(self):
        model = LatentSourceModel(self.sources(), [0.2, 0.8], math.inf, NoiseSpec("gaussian", 0.0))
        rng = np.random.default_rng(6)
        gs = [sample_latent_source_pair(model, rng)[2] for _ in range(4000)]
        assert abs(np.mean(np.array(gs) == 0) - 0.2) <= 3 * math.sqrt(0.16 / 4000)

    def test_soft_dice_sampling_rejected(self):
        model = LatentSourceModel(self.sources(), [0.5, 0.5], 1.0, NoiseSpec(), distance="one_minus_soft_dice")
        with pytest.raises(ContractViolation):
            sample_latent_source_pair(model, np.random.default_rng(0))

    @pytest.mark.parametrize(
        "kwargs",
        [dict(alpha=-1.0), dict(probs=[0.7, 0.7]), dict(probs=[1.0]), dict(distance="l2")],
    )
    def test_invalid(self, kwargs):
        args = dict(sources=self.sources(), probs=[0.5, 0.5], alpha=1.0, noise=NoiseSpec())
        args.update(kwargs)
        with pytest.raises(ContractViolation):
            LatentSourceModel(**args)


class TestTrainingSet:
    def test_single_pair(self):
        model = uniform_model((3, 3), [(1.0, 0.0, 1)])
        ts = sample_training_set(model, 1, np.random.default_rng(0))
        assert ts.n == 1 and len(ts) == 1 and ts.lattice == Lattice((3, 3))

    def test_same_seed_identical(self):
        model = uniform_model((4, 4), [(0.5, 0.0, -1), (0.5, 1.0, 1)], sigma=1.0)
        a = sample_training_set(model, 5, np.random.default_rng(11))
        b = sample_training_set(model, 5, np.random.default_rng(11))
        assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)

    def test_different_seeds_differ(self):
        model = uniform_model((4, 4), [(1.0, 0.0, 1)], sigma=1.0)
        a = sample_training_set(model, 3, np.random.default_rng(1))
        b = sample_training_set(model, 3, np.random.default_rng(2))
        assert not np.array_equal(a.images, b.images)

    def test_invalid(self):
        with pytest.raises(ContractViolation):
            sample_training_set(uniform_model((2, 2), [(1.0, 0.0, 1)]), 0, np.random.default_rng(0))
        with pytest.raises(ContractViolation):
            TrainingSet(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))
        with pytest.raises(ContractViolation):
            TrainingSet(np.zeros((1, 2, 2)), np.ones((1, 2, 3)))


class TestJigsaw:
    def test_shared_model_holds(self):
        report = verify_jigsaw(uniform_model((3, 3), [(0.5, 0.0, -1), (0.5, 1.0, 1)]))
        assert report.holds and report.violations == []

    def test_missing_component_violation(self):
        lat = Lattice((2,))
        sites = (site((0.5, 9.0, 1), (0.5, 0.0, -1)), site((1.0, 0.0, -1)))
        model = PointwiseModel(lat, PatchShape.single(1), sites, 0.5, Neighborhood.explicit([(1,)]), NoiseSpec("gaussian", 0.0))
        report = verify_jigsaw(model)
        assert not report.holds
        assert (0, 0) in report.violations
        assert (0, 1) not in report.violations

    def test_label_must_match(self):
        lat = Lattice((2,))
        sites = (site((1.0, 0.0, 1)), site((1.0, 0.0, -1)))
        model = PointwiseModel(lat, PatchShape.single(1), sites, 1.0, Neighborhood.explicit([(1,), (-1,)]), NoiseSpec())
        assert set(verify_jigsaw(model).violations) == {(0, 0), (1, 0)}

    def test_block_model_single_block(self):
        lat = Lattice((4, 4))
        model = build_block_model(lat, 4, [[(0.3, 0.0, -1), (0.7, 5.0, 1)]], NoiseSpec())
        assert all(s is model.sites[0] for s in model.sites)
        assert model.rho_min == pytest.approx(0.3)
        assert verify_jigsaw(model).holds

    def test_block_model_disjoint_blocks(self):
        lat = Lattice((2, 4))
        tables = [[(1.0, 0.0, -1)], [(1.0, 10.0, 1)]]
        model = build_block_model(lat, 2, tables, NoiseSpec(), jigsaw_radius=1)
        assert verify_jigsaw(model).holds

    def test_block_model_negative_control(self):
        lat = Lattice((1, 4))
        tables = [[(1.0, 0.0, -1)], [(1.0, 10.0, 1)]]
        model = build_block_model(lat, 2, tables, NoiseSpec())
        # N* that only looks one pixel to the right misses the component at the block edge
        shifted = PointwiseModel(lat, model.patch, model.sites, model.rho_min, Neighborhood.explicit([(0, 1)]), model.noise)
        report = verify_jigsaw(shifted)
        assert not report.holds
        assert (1, 0) in report.violations

    def test_block_model_errors(self):
        lat = Lattice((2, 2))
        with pytest.raises(ContractViolation):
            build_block_model(lat, 1, [[]] * 4, NoiseSpec())
        with pytest.raises(ContractViolation):
            build_block_model(lat, 0, [[(1.0, 0.0, 1)]], NoiseSpec())
        with pytest.raises(ContractViolation):
            build_block_model(lat, 1, [[(1.0, 0.0, 1)]], NoiseSpec())

    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(1, 3),
        st.integers(2, 6),
        st.integers(2, 6),
        st.data(),
    )
    def test_block_model_always_holds(self, side, rows, cols, data):
        lat = Lattice((rows, cols))
        n_blocks = -(-rows // side) * -(-cols // side)
        tables = []
        for _ in range(n_blocks):
            k = data.draw(st.integers(1, 3))
            raw = data.draw(st.lists(st.floats(0.1, 1.0), min_size=k, max_size=k))
            w = np.array(raw) / sum(raw)
            tables.append([(float(wi), float(data.draw(st.integers(-5, 5))), data.draw(st.sampled_from([1, -1]))) for wi in w])
        patch = data.draw(st.sampled_from([PatchShape.single(2), PatchShape(((0, 0), (0, 1)))]))
        model = build_block_model(lat, side, tables, NoiseSpec(), patch=patch)
        assert verify_jigsaw(model).holds


class TestModelDocuments:
    def test_pointwise_round_trip(self, tmp_path):
        lat = Lattice((3, 3))
        model = build_block_model(lat, 2, [[(0.4, 0.0, -1), (0.6, 3.0, 1)]] * 4, NoiseSpec("uniform", 0.5))
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert back.lattice == model.lattice
        assert back.rho_min == model.rho_min and back.noise == model.noise
        for a, b in zip(back._tables, model._tables):
            assert np.array_equal(a, b)
        assert verify_jigsaw(back).holds

    def test_latent_round_trip(self):
        src = np.array([[[1, -1], [-1, 1]]])
        model = LatentSourceModel(src, [1.0], math.inf, NoiseSpec("gaussian", 0.2), {1: 3.0, -1: -1.0})
        back = model_from_dict(model_to_dict(model))
        assert np.array_equal(back.sources, src)
        assert back.alpha == math.inf and back.intensity_map == {1: 3.0, -1: -1.0}

    def test_latent_image_reference(self, tmp_path):
        from patchseg.io import write_image

        write_image(tmp_path / "shape.pseg", np.array([[1, -1], [1, 1]]), "label")
        doc = {"kind": "latent_source", "sources": [{"prob": 1.0, "image": "shape.pseg"}], "alpha": 2.0}
        model = model_from_dict(doc, tmp_path)
        assert model.sources.shape == (1, 2, 2)

    def test_block_document(self):
        doc = {
            "kind": "pointwise",
            "dims": [4, 4],
            "noise": {"family": "gaussian", "sigma": 0.5},
            "blocks": {"side": 2, "tables": [[{"weight": 1.0, "mean": float(b), "label": 1}] for b in range(4)]},
        }
        model = model_from_dict(doc)
        assert model.jigsaw.radius == 2 and verify_jigsaw(model).holds

    @pytest.mark.parametrize("doc", [{}, {"kind": "unknown"}, {"kind": "pointwise", "dims": [2]}])
    def test_malformed(self, doc):
        with pytest.raises(ConfigError):
            model_from_dict(doc)

    def test_unreadable(self, tmp_path):
        (tmp_path / "x.json").write_text("{not json")
        with pytest.raises(ConfigError):
            load_model(tmp_path / "x.json")
