from django.apps import AppConfig


class CepConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'cep'
    verbose_name = 'Neuro-symbolic complex event processing'
