"""WSGI entry point for the CEP service."""
import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'cep_project.settings')

application = get_wsgi_application()
