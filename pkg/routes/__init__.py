from .main import main_bp
from .measure import measure_bp
from .study import study_bp
