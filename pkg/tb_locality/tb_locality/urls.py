"""
URL configuration for tb_locality project.
"""
from django.contrib import admin
from django.urls import path

# Только админка: журнал запусков и артефактов
urlpatterns = [
    path('admin/', admin.site.urls),
]
