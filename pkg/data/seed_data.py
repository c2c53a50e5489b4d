"""Seed script to populate the annotation store with a synthetic observer study."""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models import db, Annotation
from utils.study import record_rows, synthetic_study


def seed_database(n=20, seed=0, model=True):
    """Replace all annotations with an ``n``-image two-expert study."""
    Annotation.query.delete()

    records = synthetic_study(seed, n, model=model)
    for row in record_rows(records):
        db.session.add(Annotation(**row))

    db.session.commit()
    print(f"Seeded {Annotation.query.count()} annotations on {len(records)} images")
    return records


if __name__ == '__main__':
    from app import create_app

    app = create_app()
    with app.app_context():
        seed_database(n=int(sys.argv[1]) if len(sys.argv) > 1 else 20)
