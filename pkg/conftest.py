import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'mvanet_pad.settings')
django.setup()
