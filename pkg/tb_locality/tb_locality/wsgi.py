"""
WSGI-приложение tb_locality: только админка журнала запусков.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'tb_locality.settings')

application = get_wsgi_application()
