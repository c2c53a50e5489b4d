import sys
import os
import io
import unittest
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app import create_app
from data.seed_data import seed_database
from models import Annotation, db
from utils.geometry import Ellipse, sample_points
from utils.study import parse_study_csv, synthetic_study, write_study_csv


class ApiTestCase(unittest.TestCase):
    def setUp(self):
        self.app = create_app({'TESTING': True, 'SQLALCHEMY_DATABASE_URI': 'sqlite://'})
        self.client = self.app.test_client()

    def tearDown(self):
        with self.app.app_context():
            db.session.remove()
            db.drop_all()

    def add(self, image_id='img1', rater='expert1', r=10.0, **extra):
        body = {'image_id': image_id, 'rater': rater, 's_xy_mm': 0.26,
                'ellipse': {'cx': 50, 'cy': 50, 'a': r, 'b': r * 0.8, 'alpha': 0.2}}
        body.update(extra)
        return self.client.post('/api/study/annotations', json=body)

    def import_study(self, n=5, **kwargs):
        content = write_study_csv(synthetic_study(0, n, **kwargs))
        return self.client.post('/api/study/import', data=content, content_type='text/csv')


class TestMain(ApiTestCase):
    def test_index(self):
        data = self.client.get('/').get_json()
        self.assertEqual(data['service'], 'caliper')
        self.assertEqual(data['annotations'], 0)
        self.assertIn('POST /api/measure', data['endpoints'])

    def test_health(self):
        self.assertEqual(self.client.get('/health').get_json(), {'status': 'ok'})

    def test_unknown_route(self):
        response = self.client.get('/api/nowhere')
        self.assertEqual(response.status_code, 404)
        self.assertEqual(response.get_json()['type'], 'NotFound')


class TestMeasureApi(ApiTestCase):
    def test_measure(self):
        response = self.client.post('/api/measure', json={
            'ellipse': {'cx': 5, 'cy': 5, 'a': 10, 'b': 10}, 's_xy_mm': 1.0})
        self.assertEqual(response.status_code, 200)
        data = response.get_json()
        self.assertAlmostEqual(data['hc_mm'], 62.83185307, places=6)
        self.assertEqual(data['bpd_mm'], 20.0)
        self.assertEqual(data['bpd_convention'], 'diameter')
        self.assertIn('no-cache', response.headers['Cache-Control'])

    def test_measure_radius_convention(self):
        data = self.client.post('/api/measure', json={
            'ellipse': {'cx': 5, 'cy': 5, 'a': 10, 'b': 10}, 's_xy_mm': 1.0,
            'bpd_convention': 'radius'}).get_json()
        self.assertEqual(data['bpd_mm'], 10.0)

    def test_measure_errors(self):
        cases = [
            ({'ellipse': {'cx': 0, 'cy': 0, 'a': 1, 'b': 1}}, 'InvalidParams'),
            ({'ellipse': {'cx': 0, 'cy': 0, 'a': 1, 'b': 1}, 's_xy_mm': 0}, 'NonPositivePixelSize'),
            ({'ellipse': {'cx': 0, 'cy': 0, 'a': -1, 'b': 1}, 's_xy_mm': 1}, 'InvalidParams'),
            ({'ellipse': [1, 2, 3], 's_xy_mm': 1}, 'InvalidParams'),
            ({'ellipse': {'cx': 0, 'cy': 0, 'a': 1, 'b': 1}, 's_xy_mm': 'big'}, 'InvalidParams'),
        ]
        for body, error in cases:
            response = self.client.post('/api/measure', json=body)
            self.assertEqual(response.status_code, 400, body)
            self.assertEqual(response.get_json()['type'], error, body)

    def test_measure_needs_json(self):
        response = self.client.post('/api/measure', data='ellipse', content_type='text/plain')
        self.assertEqual(response.status_code, 400)

    def test_fit(self):
        points = sample_points(Ellipse(30, 20, 12, 7, 0.6), 24).tolist()
        data = self.client.post('/api/fit', json={'points': points}).get_json()
        self.assertEqual(data['n_points'], 24)
        self.assertAlmostEqual(data['ellipse']['a'], 12.0, places=6)
        self.assertAlmostEqual(data['ellipse']['cx'], 30.0, places=6)

    def test_fit_errors(self):
        response = self.client.post('/api/fit', json={'points': [[0, 0], [1, 1], [2, 0]]})
        self.assertEqual(response.get_json()['type'], 'TooFewPoints')
        response = self.client.post('/api/fit', json={'points': [[0, 0], 'x']})
        self.assertEqual(response.get_json()['type'], 'InvalidParams')

    def test_reference(self):
        data = self.client.get('/api/reference').get_json()
        self.assertEqual(data['inter-expert']['hc_mae'], {'mean': 2.16, 'sd': 1.16})


class TestAnnotationStore(ApiTestCase):
    def test_add_and_list(self):
        response = self.add()
        self.assertEqual(response.status_code, 201)
        self.assertEqual(response.get_json()['repeat_index'], 1)
        self.assertEqual(self.add(r=11.0).get_json()['repeat_index'], 2)
        self.add(rater='expert2')

        listed = self.client.get('/api/study/annotations?rater=expert1').get_json()['annotations']
        self.assertEqual([a['repeat_index'] for a in listed], [1, 2])
        self.assertEqual(listed[1]['ellipse']['a'], 11.0)
        self.assertEqual(len(self.client.get('/api/study/annotations').get_json()['annotations']), 3)

    def test_duplicate_repeat(self):
        self.add(repeat_index=2)
        response = self.add(repeat_index=2)
        self.assertEqual(response.status_code, 409)
        self.assertEqual(response.get_json()['type'], 'Conflict')

    def test_invalid_annotation(self):
        self.assertEqual(self.add(s_xy_mm=-1).status_code, 400)
        response = self.client.post('/api/study/annotations', json={'image_id': 'x'})
        self.assertEqual(response.get_json()['type'], 'InvalidParams')

    def test_delete(self):
        annotation_id = self.add().get_json()['id']
        response = self.client.delete(f'/api/study/annotations/{annotation_id}')
        self.assertEqual(response.get_json(), {'success': True, 'deleted': annotation_id})
        self.assertEqual(self.client.delete(f'/api/study/annotations/{annotation_id}').status_code, 404)

    def test_csv_template_parses(self):
        response = self.client.get('/api/study/csv-template')
        self.assertEqual(response.mimetype, 'text/csv')
        records = parse_study_csv(response.get_data(as_text=True))
        self.assertEqual(records[0].raters(), ['expert1', 'expert2', 'model'])

    def test_import(self):
        data = self.import_study().get_json()
        self.assertEqual((data['images'], data['added'], data['skipped']), (5, 25, 0))
        data = self.import_study().get_json()
        self.assertEqual((data['added'], data['skipped']), (0, 25))
        with self.app.app_context():
            self.assertEqual(Annotation.query.count(), 25)

    def test_import_file_upload(self):
        content = write_study_csv(synthetic_study(1, 2)).encode()
        response = self.client.post('/api/study/import', data={'file': (io.BytesIO(content), 'study.csv')},
                                    content_type='multipart/form-data')
        self.assertEqual(response.get_json()['added'], 10)
        response = self.client.post('/api/study/import', data={'file': (io.BytesIO(content), 'study.txt')},
                                    content_type='multipart/form-data')
        self.assertEqual(response.status_code, 400)
        self.assertEqual(response.get_json()['type'], 'InvalidFileFormat')

    def test_import_malformed(self):
        response = self.client.post('/api/study/import', data='image_id,rater\nx,y\n', content_type='text/csv')
        self.assertEqual(response.status_code, 400)
        self.assertEqual(response.get_json()['type'], 'InvalidFileFormat')


class TestStudyReports(ApiTestCase):
    def test_report(self):
        self.import_study(n=6)
        data = self.client.get('/api/study/report').get_json()
        self.assertEqual(set(data), {'intra:expert1', 'intra:expert2', 'inter', 'model-expert'})
        self.assertEqual(data['inter']['n_images'], 6)
        self.assertEqual(data['inter']['sign_convention'], 'expert1 - expert2')

    def test_report_sample_sd(self):
        self.import_study(n=6)
        data = self.client.get('/api/study/report?sd=sample').get_json()
        self.assertEqual(data['inter']['sd_convention'], 'sample')

    def test_report_without_annotations(self):
        response = self.client.get('/api/study/report')
        self.assertEqual(response.status_code, 400)
        self.assertEqual(response.get_json()['type'], 'MissingRater')

    def test_bland_altman(self):
        self.import_study(n=5)
        data = self.client.get('/api/study/bland-altman?metric=hc&comparison=inter').get_json()
        self.assertEqual(len(data['points']), 20)
        self.assertAlmostEqual(data['upper'] - data['bias'], 1.96 * data['sd'])

        response = self.client.get('/api/study/bland-altman?metric=bpd&comparison=model-expert&format=csv')
        self.assertEqual(response.mimetype, 'text/csv')
        self.assertTrue(response.get_data(as_text=True).startswith('# bias='))

    def test_bland_altman_errors(self):
        self.import_study(n=3)
        self.assertEqual(self.client.get('/api/study/bland-altman?metric=dice').status_code, 400)
        self.assertEqual(self.client.get('/api/study/bland-altman?comparison=other').status_code, 400)

    def test_seeded_store(self):
        with self.app.app_context():
            records = seed_database(n=4, seed=2)
            self.assertEqual(Annotation.query.count(), 20)
        self.assertEqual(len(records), 4)
        data = self.client.get('/').get_json()
        self.assertEqual((data['annotations'], data['images']), (20, 4))


if __name__ == '__main__':
    unittest.main()
