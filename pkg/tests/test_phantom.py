import sys
import os
import math
import tempfile
import unittest
from pathlib import Path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np

from utils.errors import InvalidFileFormat, InvalidParams
from utils.geometry import Ellipse, distance_to_curve, measure
from utils.phantom import (
    DEFAULT_FRACTIONS,
    MANIFEST_COLUMNS,
    PhantomParams,
    generate,
    generate_dataset,
    load_dataset,
    nested_fractions,
    read_manifest,
    sample_ellipse,
    split_sizes,
    write_dataset,
)
from utils.pipeline import measure_mask
from utils.raster import rasterize_ellipse

CLEAN = PhantomParams(speckle=0.0, blur_sigma=0.0, shadow_probability=0.0)


class TestPhantomParams(unittest.TestCase):
    def test_defaults_fit(self):
        p = PhantomParams()
        self.assertEqual((p.width, p.height), (96, 64))

    def test_head_must_fit(self):
        with self.assertRaises(InvalidParams):
            PhantomParams(a_range=(20.0, 40.0))
        with self.assertRaises(InvalidParams):
            PhantomParams(aspect_range=(0.8, 1.2))
        with self.assertRaises(InvalidParams):
            PhantomParams(s_xy=0.0)

    def test_dict_roundtrip(self):
        p = PhantomParams(width=128, height=96, speckle=0.2)
        self.assertEqual(PhantomParams.from_dict(p.to_dict()), p)
        self.assertEqual(PhantomParams.from_dict({'width': 100, 'unknown': 1}).width, 100)


class TestGenerate(unittest.TestCase):
    def test_deterministic(self):
        img1, mask1, e1 = generate(7, PhantomParams(), 3)
        img2, mask2, e2 = generate(7, PhantomParams(), 3)
        np.testing.assert_array_equal(img1.data, img2.data)
        self.assertEqual(mask1, mask2)
        self.assertEqual(e1, e2)

    def test_samples_differ(self):
        self.assertNotEqual(generate(7, PhantomParams(), 3)[2], generate(7, PhantomParams(), 4)[2])
        self.assertNotEqual(generate(7, PhantomParams(), 3)[2], generate(8, PhantomParams(), 3)[2])

    def test_sample_ellipse_matches(self):
        self.assertEqual(sample_ellipse(11, PhantomParams(), 5), generate(11, PhantomParams(), 5)[2])

    def test_mask_is_rasterized_ellipse(self):
        p = PhantomParams()
        _, mask, e = generate(2, p, 0)
        self.assertEqual(mask, rasterize_ellipse(e, p.width, p.height))

    def test_ellipse_within_ranges(self):
        p = PhantomParams()
        for index in range(50):
            e = sample_ellipse(1, p, index)
            self.assertTrue(p.a_range[0] <= e.a <= p.a_range[1])
            self.assertTrue(p.aspect_range[0] - 1e-9 <= e.a / e.b <= p.aspect_range[1] + 1e-9)
            x0, y0, x1, y1 = e.bounding_box()
            self.assertGreaterEqual(x0, p.margin)
            self.assertGreaterEqual(y0, p.margin)
            self.assertLessEqual(x1, p.width - 1 - p.margin)
            self.assertLessEqual(y1, p.height - 1 - p.margin)

    def test_image_range_and_pixel_size(self):
        img, _, _ = generate(0, PhantomParams(), 0)
        self.assertEqual(img.data.shape, (64, 96))
        self.assertTrue(np.all((img.data >= 0) & (img.data <= 1)))
        self.assertEqual(img.s_xy, 1.2)

    def test_clean_levels(self):
        img, mask, _ = generate(3, CLEAN, 0)
        self.assertTrue(set(np.unique(img.data)) <= {CLEAN.interior_level, CLEAN.tissue_level, CLEAN.rim_level})
        self.assertIn(CLEAN.rim_level, np.unique(img.data))
        self.assertAlmostEqual(float(img.data[0, 0]), CLEAN.tissue_level)

    def test_clean_rim_hugs_the_curve(self):
        for index in range(5):
            img, _, e = generate(3, CLEAN, index)
            ys, xs = np.nonzero(img.data == CLEAN.rim_level)
            self.assertGreater(len(xs), 0)
            distances = distance_to_curve(e, np.column_stack([xs, ys]))
            self.assertLessEqual(distances.max(), CLEAN.rim_thickness)

    def test_fitted_mask_matches_ground_truth(self):
        p = PhantomParams()
        for index in range(300):
            _, mask, e = generate(5, p, index)
            fitted = measure_mask(mask, p.s_xy).biometrics.hc_mm
            truth = measure(e, p.s_xy).hc_mm
            self.assertLess(abs(fitted / truth - 1), 0.01, index)

    def test_parameter_moments(self):
        p = PhantomParams()
        ellipses = [sample_ellipse(13, p, index) for index in range(1000)]
        ratio = np.array([e.a / e.b for e in ellipses])
        hc = np.array([measure(e, p.s_xy).hc_mm for e in ellipses])

        lo, hi = p.aspect_range
        self.assertLess(abs(ratio.mean() / ((lo + hi) / 2) - 1), 0.05)
        self.assertLess(abs(ratio.std() / ((hi - lo) / math.sqrt(12)) - 1), 0.05)
        self.assertLess(ratio.min() - lo, 0.05 * (hi - lo))
        self.assertLess(hi - ratio.max(), 0.05 * (hi - lo))

        # expected HC over the uniform (a, a/b) box by midpoint quadrature
        grid = lambda bounds: bounds[0] + (np.arange(200) + 0.5) / 200 * (bounds[1] - bounds[0])
        expected = np.mean([measure(Ellipse(0, 0, a, a / r), p.s_xy).hc_mm
                            for a in grid(p.a_range) for r in grid(p.aspect_range)])
        self.assertLess(abs(hc.mean() / expected - 1), 0.05)
        smallest = measure(Ellipse(0, 0, p.a_range[0], p.a_range[0] / hi), p.s_xy).hc_mm
        largest = measure(Ellipse(0, 0, p.a_range[1], p.a_range[1] / lo), p.s_xy).hc_mm
        self.assertTrue(np.all((hc >= smallest - 1e-9) & (hc <= largest + 1e-9)))

    def test_interior_darker_than_tissue(self):
        for index in range(5):
            img, mask, _ = generate(4, PhantomParams(), index)
            self.assertLess(img.data[mask.data == 1].mean(), img.data[mask.data == 0].mean())

    def test_shadow_spares_interior_and_most_of_rim(self):
        plain = PhantomParams(speckle=0.0, blur_sigma=0.0, shadow_probability=0.0)
        shaded = PhantomParams(speckle=0.0, blur_sigma=0.0, shadow_probability=1.0, shadow_attenuation=1.0)
        for index in range(5):
            before = generate(9, plain, index)[0].data
            after = generate(9, shaded, index)[0].data
            interior = before == plain.interior_level
            np.testing.assert_array_equal(after[interior], before[interior])
            rim = before == plain.rim_level
            self.assertLessEqual(np.sum(after[rim] == 0.0) / rim.sum(), plain.shadow_max_fraction)
            self.assertTrue(np.any(after == 0.0))

    def test_negative_seed(self):
        with self.assertRaises(InvalidParams):
            generate(-1)


class TestSplits(unittest.TestCase):
    def test_nested_fractions(self):
        train, val, test = nested_fractions(0.2, 0.1)
        self.assertAlmostEqual(train, 0.72)
        self.assertAlmostEqual(val, 0.08)
        self.assertAlmostEqual(test, 0.2)
        self.assertEqual(DEFAULT_FRACTIONS, nested_fractions())

    def test_two_level_split(self):
        self.assertEqual(split_sizes(100, nested_fractions(0.2, 0.25)), (60, 20, 20))
        self.assertEqual(split_sizes(300, nested_fractions(1 / 6, 0.2)), (200, 50, 50))
        self.assertEqual(split_sizes(10, nested_fractions(0.0, 0.0)), (10, 0, 0))

    def test_small(self):
        self.assertEqual(split_sizes(10), (7, 1, 2))
        self.assertEqual(split_sizes(1), (1, 0, 0))

    def test_clinical_size(self):
        sizes = split_sizes(2703)
        self.assertEqual(sum(sizes), 2703)
        # largest remainder lands within two images of the clinical 1948/216/539 split
        for got, clinical in zip(sizes, (1948, 216, 539)):
            self.assertLessEqual(abs(got - clinical), 2)

    def test_ties_go_first(self):
        self.assertEqual(split_sizes(3, (0.5, 0.5, 0.0)), (2, 1, 0))

    def test_invalid(self):
        with self.assertRaises(InvalidParams):
            split_sizes(0)
        with self.assertRaises(InvalidParams):
            split_sizes(10, (0.5, 0.6, 0.0))
        with self.assertRaises(InvalidParams):
            nested_fractions(1.0, 0.1)

    def test_dataset_blocks(self):
        ds = generate_dataset(0, 10, CLEAN)
        self.assertEqual([s.split for s in ds.samples], ['train'] * 7 + ['validation'] + ['test'] * 2)
        self.assertEqual([s.name for s in ds.test], ['00008', '00009'])

    def test_samples_independent_of_size(self):
        small = generate_dataset(5, 4)
        large = generate_dataset(5, 9)
        for a, b in zip(small.samples, large.samples):
            np.testing.assert_array_equal(a.image.data, b.image.data)
            self.assertEqual(a.ellipse, b.ellipse)


class TestDatasetFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name) / 'phantoms'

    def tearDown(self):
        self.tmp.cleanup()

    def test_roundtrip(self):
        ds = generate_dataset(3, 6)
        write_dataset(ds, self.root, overlays=True)
        self.assertTrue((self.root / '00000' / 'overlay.ppm').exists())
        self.assertTrue((self.root / '00005' / 'image.json').exists())

        loaded = load_dataset(self.root)
        self.assertEqual(loaded.seed, 3)
        self.assertEqual(loaded.params, ds.params)
        self.assertEqual(len(loaded.samples), 6)
        for a, b in zip(ds.samples, loaded.samples):
            self.assertEqual(a.index, b.index)
            self.assertEqual(a.split, b.split)
            self.assertEqual(a.ellipse, b.ellipse)
            self.assertEqual(a.mask, b.mask)
            self.assertLessEqual(np.abs(a.image.data - b.image.data).max(), 0.5 / 255 + 1e-12)

    def test_manifest_columns(self):
        write_dataset(generate_dataset(0, 2), self.root)
        header = (self.root / 'manifest.csv').read_text().splitlines()[0]
        self.assertEqual(header.split(','), MANIFEST_COLUMNS)
        self.assertFalse((self.root / '00000' / 'overlay.ppm').exists())

    def test_bad_manifest(self):
        self.root.mkdir(parents=True)
        (self.root / 'manifest.csv').write_text('file,split\n00000/image.pgm,train\n')
        with self.assertRaises(InvalidFileFormat):
            read_manifest(self.root / 'manifest.csv')
        (self.root / 'manifest.csv').write_text(','.join(MANIFEST_COLUMNS) + '\nx/image.pgm,holdout,1,1,2,1,0,1\n')
        with self.assertRaises(InvalidFileFormat):
            read_manifest(self.root / 'manifest.csv')
        with self.assertRaises(InvalidFileFormat):
            read_manifest(self.root / 'missing.csv')


if __name__ == '__main__':
    unittest.main()
