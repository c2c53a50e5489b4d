from datetime import datetime, timezone

from utils.geometry import Ellipse
from .database import db


class Annotation(db.Model):
    """One rater's ellipse on one image (a single row of a study CSV)."""

    __tablename__ = 'annotations'
    __table_args__ = (
        db.UniqueConstraint('image_id', 'rater', 'repeat_index', name='uq_annotation_repeat'),
    )

    id = db.Column(db.Integer, primary_key=True)
    image_id = db.Column(db.String(100), nullable=False, index=True)
    rater = db.Column(db.String(50), nullable=False, index=True)
    repeat_index = db.Column(db.Integer, nullable=False, default=1)
    cx = db.Column(db.Float, nullable=False)
    cy = db.Column(db.Float, nullable=False)
    a = db.Column(db.Float, nullable=False)
    b = db.Column(db.Float, nullable=False)
    alpha = db.Column(db.Float, nullable=False, default=0.0)
    s_xy_mm = db.Column(db.Float, nullable=False)
    created_at = db.Column(db.DateTime, default=lambda: datetime.now(timezone.utc))

    def __repr__(self):
        return f'<Annotation {self.image_id} {self.rater}#{self.repeat_index}>'

    @classmethod
    def from_ellipse(cls, image_id, rater, repeat_index, e: Ellipse, s_xy_mm):
        return cls(image_id=image_id, rater=rater, repeat_index=repeat_index,
                   cx=e.cx, cy=e.cy, a=e.a, b=e.b, alpha=e.alpha, s_xy_mm=s_xy_mm)

    def ellipse(self) -> Ellipse:
        return Ellipse(self.cx, self.cy, self.a, self.b, self.alpha)

    def to_row(self):
        """Study CSV row."""
        return {
            'image_id': self.image_id,
            'rater': self.rater,
            'repeat_index': self.repeat_index,
            'cx': self.cx,
            'cy': self.cy,
            'a': self.a,
            'b': self.b,
            'alpha': self.alpha,
            's_xy_mm': self.s_xy_mm,
        }

    def to_dict(self):
        return {
            'id': str(self.id),
            'image_id': self.image_id,
            'rater': self.rater,
            'repeat_index': self.repeat_index,
            'ellipse': self.ellipse().to_dict(),
            's_xy_mm': self.s_xy_mm,
        }
