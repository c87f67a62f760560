import numpy as np
import pytest

import saliencybench as sb
from saliencybench import nn
from saliencybench.errors import ShapeMismatchError
from saliencybench.metrics import (DEFAULT_PERCENT_GRID, auc, dsc, dsc_curve,
                                   fidelity, perturbation_curves,
                                   pixel_ranking, roc_curve_mean,
                                   xrai_top_percent)
from saliencybench.model import ModelConfig, TrainedModel
from saliencybench.segmentation import region_mean_scores


def linear_model(weights, bias=0.0):
    h, w = weights.shape
    dense = nn.Dense(h * w, 1)
    dense.params["w"] = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    dense.params["b"] = np.array([float(bias)])
    net = nn.Network([dense, nn.Sigmoid()], (1, h, w))
    return TrainedModel(ModelConfig(side=h, conv_channels=()), net)


def toy_problem():
    """8x8 images where the evidence lives in a fixed 2x2 block.

    Returns (model, images, labels, evidence_mask). The linear model reads
    only the block, so masking it flips predictions.
    """
    side = 8
    block = np.zeros((side, side), dtype=bool)
    block[3:5, 3:5] = True
    weights = block.astype(float)
    model = linear_model(weights, bias=-block.sum() * 0.5)
    images, labels = [], []
    for label in (0, 1) * 4:
        img = np.full((side, side), 0.5)
        img[block] = 0.9 if label else 0.1
        images.append(img)
        labels.append(label)
    return model, np.stack(images), np.array(labels), block


class TestDsc:
    def test_identical_masks(self, rng):
        m = rng.uniform(size=(6, 6)) > 0.5
        assert dsc(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.array([[True, False]])
        b = np.array([[False, True]])
        assert dsc(a, b) == 0.0

    def test_both_empty(self):
        z = np.zeros((3, 3), dtype=bool)
        assert dsc(z, z) == 1.0

    def test_half_overlap(self):
        # |X| = |Y| = 4, |X & Y| = 2 -> 2*2 / 8 = 0.5
        x = np.zeros((4, 4), dtype=bool)
        y = np.zeros((4, 4), dtype=bool)
        x[0, :] = True
        y[0, 2:] = True
        y[1, :2] = True
        assert dsc(x, y) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            dsc(np.zeros((2, 2), bool), np.zeros((3, 3), bool))


class TestPixelRanking:
    def test_mif_descending(self):
        r = pixel_ranking(np.array([[0.1, 0.9], [0.5, 0.3]]), "mif")
        assert r.tolist() == [1, 2, 3, 0]

    def test_lif_is_reverse_on_distinct(self):
        scores = np.array([[0.1, 0.9], [0.5, 0.3]])
        mif = pixel_ranking(scores, "mif")
        lif = pixel_ranking(scores, "lif")
        assert mif.tolist() == lif.tolist()[::-1]

    def test_ties_go_to_lower_index(self):
        r = pixel_ranking(np.array([[0.5, 0.5, 0.5]]), "mif")
        assert r.tolist() == [0, 1, 2]
        r = pixel_ranking(np.array([[0.5, 0.5, 0.5]]), "lif")
        assert r.tolist() == [0, 1, 2]

    def test_bad_order(self):
        with pytest.raises(ValueError):
            pixel_ranking(np.zeros((2, 2)), "best")


class TestPerturbation:
    def test_fraction_grid(self):
        model, images, labels, block = toy_problem()
        heat = np.repeat(block[None].astype(float), images.shape[0], axis=0)
        curve = perturbation_curves(model, images, labels, heat, "mif")
        assert curve.fractions.size == 41
        assert curve.fractions[0] == 0.0 and curve.fractions[-1] == 1.0

    def test_endpoints(self):
        # unperturbed: perfect; fully masked: every image misclassified
        model, images, labels, block = toy_problem()
        heat = np.repeat(block[None].astype(float), images.shape[0], axis=0)
        for order in ("mif", "lif"):
            curve = perturbation_curves(model, images, labels, heat, order)
            assert curve.accuracies[0] == 1.0
            assert curve.accuracies[-1] == 0.0

    def test_informed_heatmap_has_positive_fidelity(self):
        model, images, labels, block = toy_problem()
        heat = np.repeat(block[None].astype(float), images.shape[0], axis=0)
        mif = perturbation_curves(model, images, labels, heat, "mif")
        lif = perturbation_curves(model, images, labels, heat, "lif")
        assert fidelity(mif, lif) > 0.5

    def test_fidelity_antisymmetric(self):
        model, images, labels, block = toy_problem()
        heat = np.repeat(block[None].astype(float), images.shape[0], axis=0)
        mif = perturbation_curves(model, images, labels, heat, "mif")
        lif = perturbation_curves(model, images, labels, heat, "lif")
        assert fidelity(mif, lif) == -fidelity(lif, mif)

    def test_fidelity_zero_for_identical_curves(self):
        model, images, labels, block = toy_problem()
        heat = np.repeat(block[None].astype(float), images.shape[0], axis=0)
        mif = perturbation_curves(model, images, labels, heat, "mif")
        assert fidelity(mif, mif) == 0.0

    def test_invariant_under_affine_score_transform(self):
        model, images, labels, block = toy_problem()
        heat = np.random.Generator(np.random.Philox(3)).uniform(
            size=images.shape)
        a = perturbation_curves(model, images, labels, heat, "mif")
        b = perturbation_curves(model, images, labels, 2.0 * heat + 5.0, "mif")
        assert np.array_equal(a.accuracies, b.accuracies)

    def test_grid_mismatch_rejected(self):
        model, images, labels, block = toy_problem()
        heat = np.zeros_like(images)
        a = perturbation_curves(model, images, labels, heat, "mif")
        b = perturbation_curves(model, images, labels, heat, "lif",
                                fraction_step=0.05)
        with pytest.raises(ShapeMismatchError):
            fidelity(a, b)

    def test_heatmap_shape_mismatch(self):
        model, images, labels, _ = toy_problem()
        with pytest.raises(ShapeMismatchError):
            perturbation_curves(model, images, labels,
                                np.zeros((2, 8, 8)), "mif")


class TestRoc:
    def test_perfect_heatmap(self):
        masks = np.zeros((2, 4, 4), dtype=bool)
        masks[:, 1:3, 1:3] = True
        heat = masks.astype(float)
        curve = roc_curve_mean(heat, masks)
        assert curve.thresholds.size == 102
        assert curve.thresholds[0] == 1.0 and curve.thresholds[-1] == -1.0
        # strict '>': at t = 1 nothing fires; below, the mask exactly fires
        assert curve.mean_tpr[0] == 0.0 and curve.mean_fpr[0] == 0.0
        assert np.all(curve.mean_tpr[1:] == 1.0)
        assert np.all(curve.mean_fpr[1:-1] == 0.0)
        assert curve.mean_fpr[-1] == 1.0 and curve.mean_tpr[-1] == 1.0
        assert auc(curve, "trapezoid") == 1.0
        assert auc(curve) == pytest.approx(101.0 / 102.0)

    def test_uninformative_heatmap_is_diagonal(self):
        # equal score distribution inside and outside the mask: tpr == fpr
        masks = np.array([[[True, False], [True, False]]])
        heat = np.array([[[0.2, 0.2], [0.8, 0.8]]])
        curve = roc_curve_mean(heat, masks)
        assert np.array_equal(curve.mean_tpr, curve.mean_fpr)
        assert auc(curve, "trapezoid") == pytest.approx(0.5)

    def test_normalized_scores_make_roc_affine_invariant(self):
        rng = np.random.Generator(np.random.Philox(4))
        masks = rng.uniform(size=(3, 8, 8)) > 0.7
        raw = rng.uniform(size=(3, 8, 8))

        def norm(stack):
            out = np.empty_like(stack)
            for i, s in enumerate(stack):
                out[i] = (s - s.min()) / (s.max() - s.min())
            return out

        a = roc_curve_mean(norm(raw), masks)
        b = roc_curve_mean(norm(2.0 * raw + 5.0), masks)
        assert np.array_equal(a.mean_tpr, b.mean_tpr)
        assert np.array_equal(a.mean_fpr, b.mean_fpr)

    def test_empty_and_full_masks_excluded_with_warning(self):
        masks = np.stack([np.zeros((2, 2), bool),
                          np.ones((2, 2), bool),
                          np.array([[True, False], [False, False]])])
        heat = np.full((3, 2, 2), 0.5)
        with pytest.warns(UserWarning, match="excluded"):
            curve = roc_curve_mean(heat, masks)
        assert curve.mean_tpr.shape == (102,)

    def test_all_masks_unusable(self):
        with pytest.raises(ValueError):
            roc_curve_mean(np.zeros((1, 2, 2)), np.zeros((1, 2, 2), bool))

    def test_unknown_auc_method(self):
        masks = np.array([[[True, False]]])
        curve = roc_curve_mean(np.array([[[1.0, 0.0]]]), masks)
        with pytest.raises(ValueError):
            auc(curve, "simpson")


class TestXrai:
    def two_region_map(self):
        labels = np.zeros((4, 4), dtype=int)
        labels[:, 2:] = 1
        return sb.RegionMap(labels, 2, np.array([8, 8]))

    def test_regions_are_atomic(self):
        rm = self.two_region_map()
        ranked = region_mean_scores(rm, np.where(rm.labels == 1, 0.9, 0.1))
        top = xrai_top_percent(ranked, rm, 10.0)
        # 10% of 16 pixels is 1.6, but the whole 8-pixel region comes along
        assert top.sum() == 8
        assert np.array_equal(top, rm.labels == 1)

    def test_coverage_meets_budget(self, rng):
        img = rng.uniform(size=(16, 16))
        rm = sb.felzenszwalb_segment(img, sb.FelzParams(k=0.2, min_size=4,
                                                        sigma=0.0))
        ranked = region_mean_scores(rm, rng.normal(size=(16, 16)))
        for p in DEFAULT_PERCENT_GRID:
            top = xrai_top_percent(ranked, rm, p)
            assert top.sum() >= p / 100.0 * img.size

    def test_full_budget_covers_everything(self):
        rm = self.two_region_map()
        ranked = region_mean_scores(rm, np.zeros((4, 4)))
        assert np.all(xrai_top_percent(ranked, rm, 100.0))

    def test_bad_percent(self):
        rm = self.two_region_map()
        ranked = region_mean_scores(rm, np.zeros((4, 4)))
        for p in (0.0, -5.0, 150.0):
            with pytest.raises(ValueError):
                xrai_top_percent(ranked, rm, p)


class TestDscCurve:
    def test_ideal_heatmap_on_crisp_image(self):
        # the image's own structure segments cleanly; a heatmap equal to
        # the mask should reach a near-perfect Dice at some percentage
        img = np.full((16, 16), 0.2)
        mask = np.zeros((16, 16), dtype=bool)
        mask[4:8, 4:8] = True
        img[mask] = 0.9
        heat = mask.astype(float)
        curve = dsc_curve(heat[None], img[None], mask[None],
                          sb.FelzParams(k=0.01, min_size=1, sigma=0.0))
        assert curve.max_dsc == 1.0
        assert curve.argmax_percent == pytest.approx(
            curve.percents[np.argmax(curve.mean_dsc)])

    def test_precomputed_region_maps_match(self, rng):
        imgs = rng.uniform(size=(2, 16, 16))
        heats = rng.uniform(size=(2, 16, 16))
        masks = rng.uniform(size=(2, 16, 16)) > 0.8
        params = sb.FelzParams(k=0.3, min_size=4)
        maps = [sb.felzenszwalb_segment(im, params) for im in imgs]
        a = dsc_curve(heats, imgs, masks, params)
        b = dsc_curve(heats, imgs, masks, params, region_maps=maps)
        assert np.array_equal(a.mean_dsc, b.mean_dsc)

    def test_percent_grid_passthrough(self, rng):
        imgs = rng.uniform(size=(1, 8, 8))
        curve = dsc_curve(rng.uniform(size=(1, 8, 8)), imgs,
                          rng.uniform(size=(1, 8, 8)) > 0.5,
                          percent_grid=(10.0, 50.0))
        assert curve.percents.tolist() == [10.0, 50.0]
        assert curve.mean_dsc.shape == (2,)
