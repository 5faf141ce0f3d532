"""ASGI entry point for the CEP service."""
import os

from django.core.asgi import get_asgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'cep_project.settings')

application = get_asgi_application()
