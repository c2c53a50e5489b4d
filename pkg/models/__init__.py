from .database import db
from .annotation import Annotation

__all__ = ['db', 'Annotation']
