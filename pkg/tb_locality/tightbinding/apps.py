from django.apps import AppConfig


class TightbindingConfig(AppConfig):
    name = 'tightbinding'
    verbose_name = 'Локальность сильной связи'
    default_auto_field = 'django.db.models.BigAutoField'
