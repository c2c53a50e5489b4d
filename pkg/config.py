import os
import dotenv
dotenv.load_dotenv()
basedir = os.path.abspath(os.path.dirname(__file__))

# Flask configuration
SECRET_KEY = os.environ.get('SECRET_KEY') or 'dev-key-please-change-in-production'
DEBUG = os.environ.get('FLASK_DEBUG', '0') == '1'

# Annotation store. Any SQLAlchemy URL works; local runs use a sqlite file.
SQLALCHEMY_DATABASE_URI = os.environ.get('DATABASE_URL') or 'sqlite:///' + os.path.join(basedir, 'caliper.db')
if SQLALCHEMY_DATABASE_URI.startswith('postgres://'):
    SQLALCHEMY_DATABASE_URI = SQLALCHEMY_DATABASE_URI.replace('postgres://', 'postgresql://', 1)
SQLALCHEMY_TRACK_MODIFICATIONS = False

# Measurement defaults (CLI flags and config files override these)
CALIPER_SEED = int(os.environ.get('CALIPER_SEED', '0'))
CALIPER_BPD_CONVENTION = os.environ.get('CALIPER_BPD_CONVENTION', 'diameter')
CALIPER_CHROMA_THRESHOLD = int(os.environ.get('CALIPER_CHROMA_THRESHOLD', '30'))
CALIPER_SD_CONVENTION = os.environ.get('CALIPER_SD_CONVENTION', 'population')
CALIPER_LOG_LEVEL = os.environ.get('CALIPER_LOG_LEVEL', 'INFO')

# Upload limit for study CSV imports
MAX_CONTENT_LENGTH = 4 * 1024 * 1024
