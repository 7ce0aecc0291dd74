import os
from celery import Celery

# Set the default Django settings module for the 'celery' program.
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'mvanet_pad.settings')

app = Celery('mvanet_pad')

# Broker, result backend and eager mode all come from the CELERY_* settings,
# so a worker pool can take protocol folds without code changes.
app.config_from_object('django.conf:settings', namespace='CELERY')

# Load task modules from all registered Django apps.
app.autodiscover_tasks()
