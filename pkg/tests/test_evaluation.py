import math

import numpy as np
import pytest
import torch

from facialgan import evaluation
from facialgan.errors import (DegenerateLabels, DimMismatch, EmptyScope,
                              TooFewSamples)
from facialgan.evaluation import (FlattenEmbedder, GaussianStats,
                                  RandomConvExtractor, classify_attribute,
                                  diversity_score, fit_gaussian, frechet_distance,
                                  identity_accuracy, lpips_distance,
                                  seg_pixel_accuracy, train_attr_classifier)
from facialgan.networks import build_networks


class TestFitGaussian:
    def test_identical_rows_zero_covariance(self):
        stats = fit_gaussian(np.array([[1.0, 2.0], [1.0, 2.0]]))
        assert np.allclose(stats.cov, 0.0)
        assert np.allclose(stats.mean, [1.0, 2.0])

    def test_monte_carlo_standard_normal(self):
        rng = np.random.default_rng(0)
        stats = fit_gaussian(rng.standard_normal((10_000, 2)))
        assert np.abs(stats.mean).max() < 0.05
        assert np.abs(stats.cov - np.eye(2)).max() < 0.05

    def test_two_point_hand_computed(self):
        # rows (0,0) and (2,4): mean (1,2); unbiased cov [[2,4],[4,8]]
        stats = fit_gaussian(np.array([[0.0, 0.0], [2.0, 4.0]]))
        assert np.allclose(stats.mean, [1.0, 2.0])
        assert np.allclose(stats.cov, [[2.0, 4.0], [4.0, 8.0]])

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            fit_gaussian(np.zeros((1, 3)))


class TestFrechetDistance:
    def test_identity(self):
        rng = np.random.default_rng(1)
        stats = fit_gaussian(rng.standard_normal((50, 4)))
        assert frechet_distance(stats, stats) < 1e-8

    def test_one_dimensional_closed_form(self):
        a = GaussianStats(mean=np.array([0.0]), cov=np.array([[1.0]]), n=10)
        b = GaussianStats(mean=np.array([1.0]), cov=np.array([[4.0]]), n=10)
        assert abs(frechet_distance(a, b) - 2.0) < 1e-10

    def test_random_one_dimensional_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            mu1, mu2 = rng.normal(size=2)
            s1, s2 = rng.uniform(0.1, 3.0, size=2)
            a = GaussianStats(np.array([mu1]), np.array([[s1 ** 2]]), 10)
            b = GaussianStats(np.array([mu2]), np.array([[s2 ** 2]]), 10)
            closed = (mu1 - mu2) ** 2 + (s1 - s2) ** 2
            assert abs(frechet_distance(a, b) - closed) < 1e-6

    def test_diagonal_case_sums_per_dimension(self):
        rng = np.random.default_rng(3)
        mu_a, mu_b = rng.normal(size=(2, 3))
        va, vb = rng.uniform(0.2, 2.0, size=(2, 3))
        a = GaussianStats(mu_a, np.diag(va), 10)
        b = GaussianStats(mu_b, np.diag(vb), 10)
        closed = sum((mu_a[i] - mu_b[i]) ** 2 + (math.sqrt(va[i]) - math.sqrt(vb[i])) ** 2
                     for i in range(3))
        assert abs(frechet_distance(a, b) - closed) < 1e-8

    def test_symmetry_and_rotation_invariance(self):
        rng = np.random.default_rng(4)
        xa = rng.standard_normal((200, 3))
        xb = rng.standard_normal((200, 3)) * 1.5 + 0.3
        a, b = fit_gaussian(xa), fit_gaussian(xb)
        assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        ra, rb = fit_gaussian(xa @ q), fit_gaussian(xb @ q)
        assert abs(frechet_distance(a, b) - frechet_distance(ra, rb)) < 1e-6

    def test_dim_mismatch(self):
        a = GaussianStats(np.zeros(2), np.eye(2), 5)
        b = GaussianStats(np.zeros(3), np.eye(3), 5)
        with pytest.raises(DimMismatch):
            frechet_distance(a, b)


class OneLayerIdentityExtractor:
    def layer_features(self, images):
        return [images]


class TestLpips:
    def test_zero_on_identical(self):
        x = torch.rand(3, 8, 8)
        assert lpips_distance(RandomConvExtractor(seed=0), x, x.clone()) == 0.0

    def test_symmetry(self):
        x, y = torch.rand(3, 8, 8), torch.rand(3, 8, 8)
        ext = RandomConvExtractor(seed=0)
        assert abs(lpips_distance(ext, x, y) - lpips_distance(ext, y, x)) < 1e-7

    def test_identity_extractor_matches_hand_computation(self):
        x = torch.tensor([[[1.0, 0.0], [0.0, 1.0]],
                          [[0.0, 1.0], [1.0, 0.0]],
                          [[0.5, 0.5], [0.5, 0.5]]])
        y = torch.tensor([[[0.0, 1.0], [1.0, 0.0]],
                          [[1.0, 0.0], [0.0, 1.0]],
                          [[0.5, 0.5], [0.5, 0.5]]])
        got = lpips_distance(OneLayerIdentityExtractor(), x, y)
        # independent loop oracle
        total = 0.0
        for i in range(2):
            for j in range(2):
                vx = x[:, i, j].numpy()
                vy = y[:, i, j].numpy()
                nx = vx / math.sqrt((vx ** 2).sum() + 1e-10)
                ny = vy / math.sqrt((vy ** 2).sum() + 1e-10)
                total += ((nx - ny) ** 2).sum()
        assert abs(got - total / 4) < 1e-6

    def test_nonnegative(self):
        ext = RandomConvExtractor(seed=5)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x = torch.from_numpy(rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32))
            y = torch.from_numpy(rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32))
            assert lpips_distance(ext, x, y) >= 0


@pytest.fixture(scope="module")
def tiny_nets(tiny_model):
    return build_networks(tiny_model, seed=2).eval_()


def tiny_sources(n=2, size=16):
    rng = np.random.default_rng(6)
    out = []
    for _ in range(n):
        x = torch.from_numpy(rng.uniform(-1, 1, (3, size, size)).astype(np.float32))
        grid = rng.integers(0, 5, size=(size, size))
        m = torch.from_numpy(np.eye(5, dtype=np.float32)[grid]).permute(2, 0, 1).contiguous()
        out.append((x, m))
    return out


class TestDiversityScore:
    def test_degenerate_generator_scores_zero(self, tiny_model):
        class EchoNets:
            config = tiny_model
            def mapping(self, z, d):
                return torch.zeros(z.shape[0], tiny_model.style_dim)
            def generator(self, x, m, s):
                return x
        score = diversity_score(EchoNets(), tiny_sources(), n_styles=3, mode="latent",
                                seed=0, extractor=RandomConvExtractor(seed=0))
        assert score == 0.0

    def test_matches_double_loop_oracle(self, tiny_nets):
        sources = tiny_sources()
        ext = RandomConvExtractor(seed=1)
        got = diversity_score(tiny_nets, sources, n_styles=3, mode="latent",
                              seed=42, extractor=ext)
        # replay the same generation protocol, score with explicit loops
        rng = np.random.default_rng(42)
        per_source = []
        with torch.no_grad():
            for x, m in sources:
                outs = []
                for _ in range(3):
                    z = torch.from_numpy(rng.standard_normal((1, 16), dtype=np.float32))
                    dom = torch.tensor([int(rng.integers(0, 2))])
                    outs.append(tiny_nets.generator(x[None], m[None],
                                                    tiny_nets.mapping(z, dom))[0])
                vals = []
                for i in range(3):
                    for j in range(i + 1, 3):
                        vals.append(lpips_distance(ext, outs[i], outs[j]))
                per_source.append(sum(vals) / len(vals))
        assert abs(got - sum(per_source) / len(per_source)) < 1e-7

    def test_n_styles_two_is_single_pair(self, tiny_nets):
        score = diversity_score(tiny_nets, tiny_sources(n=1), n_styles=2, mode="latent",
                                seed=3, extractor=RandomConvExtractor(seed=0))
        assert score > 0  # one pair, nonzero for a random generator

    def test_reference_mode(self, tiny_nets):
        refs = [(x, i % 2) for i, (x, _) in enumerate(tiny_sources(n=3))]
        score = diversity_score(tiny_nets, tiny_sources(n=1), n_styles=2,
                                mode="reference", seed=4,
                                extractor=RandomConvExtractor(seed=0), references=refs)
        assert score >= 0


class FixedSegmenter(torch.nn.Module):
    def __init__(self, probs):
        super().__init__()
        self.probs = probs

    def forward(self, x):
        return self.probs[None]


class TestSegPixelAccuracy:
    def test_perfect_match_is_hundred(self, tiny_nets):
        x = tiny_sources(n=1)[0][0]
        with torch.no_grad():
            parse = tiny_nets.segmenter(x[None])[0]
        onehot = torch.zeros_like(parse)
        onehot.scatter_(0, parse.argmax(dim=0, keepdim=True), 1.0)
        assert seg_pixel_accuracy(tiny_nets.segmenter, x, onehot, "all") == 100.0

    def test_two_mismatches_in_2x2_is_fifty(self):
        target = torch.zeros(5, 2, 2)
        target[0, 0, 0] = target[0, 0, 1] = 1
        target[1, 1, 0] = target[1, 1, 1] = 1
        pred = torch.zeros(5, 2, 2)
        pred[0, 0, 0] = pred[0, 0, 1] = 1   # match row 0
        pred[2, 1, 0] = pred[2, 1, 1] = 1   # miss row 1
        seg = FixedSegmenter(pred)
        assert seg_pixel_accuracy(seg, torch.zeros(3, 2, 2), target, "all") == 50.0

    def test_matches_per_pixel_loop(self):
        rng = np.random.default_rng(8)
        pred_grid = rng.integers(0, 5, (6, 6))
        target_grid = rng.integers(0, 5, (6, 6))
        eye = np.eye(5, dtype=np.float32)
        pred = torch.from_numpy(eye[pred_grid]).permute(2, 0, 1).contiguous()
        target = torch.from_numpy(eye[target_grid]).permute(2, 0, 1).contiguous()
        seg = FixedSegmenter(pred)
        got = seg_pixel_accuracy(seg, torch.zeros(3, 6, 6), target, "all")
        want = 100.0 * sum(pred_grid[i, j] == target_grid[i, j]
                           for i in range(6) for j in range(6)) / 36
        assert abs(got - want) < 1e-9
        # scoped: mouth support only
        support = [(i, j) for i in range(6) for j in range(6) if target_grid[i, j] == 4]
        if support:
            got_scoped = seg_pixel_accuracy(seg, torch.zeros(3, 6, 6), target, "mouth")
            want_scoped = 100.0 * sum(pred_grid[i, j] == 4 for i, j in support) / len(support)
            assert abs(got_scoped - want_scoped) < 1e-9

    def test_empty_scope_raises(self):
        target = torch.zeros(5, 2, 2)
        target[0] = 1
        seg = FixedSegmenter(target)
        with pytest.raises(EmptyScope):
            seg_pixel_accuracy(seg, torch.zeros(3, 2, 2), target, "eyes")

    def test_invariant_under_consistent_channel_permutation(self):
        rng = np.random.default_rng(9)
        eye = np.eye(5, dtype=np.float32)
        pred = torch.from_numpy(eye[rng.integers(0, 5, (4, 4))]).permute(2, 0, 1).contiguous()
        target = torch.from_numpy(eye[rng.integers(0, 5, (4, 4))]).permute(2, 0, 1).contiguous()
        perm = torch.from_numpy(rng.permutation(5))
        a = seg_pixel_accuracy(FixedSegmenter(pred), torch.zeros(3, 4, 4), target, "all")
        b = seg_pixel_accuracy(FixedSegmenter(pred[perm]), torch.zeros(3, 4, 4),
                               target[perm], "all")
        assert a == b


class TestAttrClassifier:
    def _separable(self, n=40, size=16):
        rng = np.random.default_rng(10)
        xs, ys = [], []
        for i in range(n):
            bright = i % 2
            base = 0.6 if bright else -0.6
            xs.append(np.clip(base + rng.normal(0, 0.1, (3, size, size)), -1, 1))
            ys.append(bright)
        return (torch.from_numpy(np.array(xs, dtype=np.float32)),
                torch.tensor(ys, dtype=torch.long))

    def test_separable_data_high_heldout_accuracy(self):
        x, y = self._separable()
        clf = train_attr_classifier(x[:32], y[:32], epochs=20, seed=0)
        correct = sum((classify_attribute(clf, x[i]) > 0.5) == bool(y[i])
                      for i in range(32, 40))
        assert correct / 8 >= 0.99

    def test_probability_in_unit_interval(self):
        x, y = self._separable(n=8)
        clf = train_attr_classifier(x, y, epochs=2, seed=1)
        p = classify_attribute(clf, x[0])
        assert 0.0 <= p <= 1.0

    def test_deterministic(self):
        x, y = self._separable(n=8)
        clf = train_attr_classifier(x, y, epochs=2, seed=2)
        assert classify_attribute(clf, x[3]) == classify_attribute(clf, x[3])

    def test_degenerate_labels(self):
        x, _ = self._separable(n=6)
        with pytest.raises(DegenerateLabels):
            train_attr_classifier(x, torch.ones(6), epochs=1)


class StubEmbedder:
    def __init__(self, table, tau=0.5):
        self.table = table
        self.tau = tau

    def embed(self, image):
        v = self.table[id(image)]
        return v / v.norm()


class TestIdentityAccuracy:
    def test_identical_pairs_score_hundred(self):
        emb = FlattenEmbedder()
        imgs = [torch.rand(3, 16, 16) for _ in range(4)]
        assert identity_accuracy(emb, [(x, x.clone()) for x in imgs]) == 100.0

    def test_orthogonal_stub_scores_zero(self):
        a, b = torch.rand(3, 4, 4), torch.rand(3, 4, 4)
        table = {id(a): torch.tensor([1.0, 0.0]), id(b): torch.tensor([0.0, 1.0])}
        assert identity_accuracy(StubEmbedder(table, tau=0.3), [(a, b)]) == 0.0

    def test_random_stub_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        pairs, table = [], {}
        for _ in range(20):
            a, b = torch.rand(3, 4, 4), torch.rand(3, 4, 4)
            table[id(a)] = torch.from_numpy(rng.normal(size=8))
            table[id(b)] = torch.from_numpy(rng.normal(size=8))
            pairs.append((a, b))
        emb = StubEmbedder(table, tau=0.2)
        got = identity_accuracy(emb, pairs)
        hits = 0
        for a, b in pairs:
            va = table[id(a)] / table[id(a)].norm()
            vb = table[id(b)] / table[id(b)].norm()
            if float(va @ vb) >= 0.2:
                hits += 1
        assert got == 100.0 * hits / 20

    def test_flatten_embedder_unit_norm(self):
        emb = FlattenEmbedder()
        v = emb.embed(torch.rand(3, 16, 16))
        assert abs(float(v.norm()) - 1.0) < 1e-5


class TestRunEvaluation(object):
    def test_report_structure(self, toy_root_16, tmp_path, tiny_train_config):
        from facialgan.training import train_facialgan, train_segmenter
        seg = train_segmenter(tiny_train_config, toy_root_16,
                              out_path=tmp_path / "seg.ckpt", split="all", val_split="all")
        import dataclasses
        cfg = dataclasses.replace(tiny_train_config, total_iters=2)
        result = train_facialgan(cfg, toy_root_16, tmp_path / "seg.ckpt", tmp_path / "run")
        report = evaluation.run_evaluation(
            result.weights_checkpoint, toy_root_16,
            metrics=["fid", "lpips", "seg-acc", "attr", "identity"],
            mode="latent", seed=0, n_styles=2, out_path=tmp_path / "report.json")
        assert set(report) == {"fid", "lpips", "seg-acc", "attr", "identity"}
        for name, entry in report.items():
            assert {"value", "n", "extractor", "seed"} <= set(entry), name
        assert report["fid"]["value"] >= 0
        assert (tmp_path / "report.json").exists()
        # determinism of the whole report path
        again = evaluation.run_evaluation(
            result.weights_checkpoint, toy_root_16,
            metrics=["fid", "lpips"], mode="latent", seed=0, n_styles=2)
        assert again["fid"]["value"] == report["fid"]["value"]
        assert again["lpips"]["value"] == report["lpips"]["value"]
