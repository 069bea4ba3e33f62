# Generated by Django 6.0.2 on 2026-10-17 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(max_length=32, verbose_name='Команда')),
                ('config', models.JSONField(default=dict, verbose_name='Конфигурация')),
                ('seed', models.BigIntegerField(default=0, verbose_name='Зерно')),
                ('output_dir', models.CharField(blank=True, max_length=500, verbose_name='Каталог результатов')),
                ('status', models.CharField(choices=[('running', 'Выполняется'), ('ok', 'Успешно'), ('invariant', 'Нарушен инвариант'), ('config', 'Ошибка конфигурации'), ('numerical', 'Численный сбой')], default='running', max_length=20, verbose_name='Статус')),
                ('exit_code', models.PositiveSmallIntegerField(blank=True, null=True, verbose_name='Код завершения')),
                ('summary', models.JSONField(default=dict, verbose_name='Сводка')),
                ('message', models.TextField(blank=True, verbose_name='Сообщение')),
                ('started_at', models.DateTimeField(auto_now_add=True, verbose_name='Начало')),
                ('finished_at', models.DateTimeField(blank=True, null=True, verbose_name='Окончание')),
            ],
            options={
                'verbose_name': 'Запуск',
                'verbose_name_plural': 'Запуски',
                'ordering': ['-started_at'],
                'indexes': [models.Index(fields=['command', 'status'], name='tb_run_command_status_idx')],
            },
        ),
        migrations.CreateModel(
            name='RunArtifact',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('path', models.CharField(max_length=500, verbose_name='Путь')),
                ('kind', models.CharField(choices=[('csv', 'CSV'), ('svg', 'SVG'), ('json', 'JSON'), ('txt', 'Текст')], max_length=8, verbose_name='Тип')),
                ('sha256', models.CharField(max_length=64, verbose_name='SHA-256')),
                ('size', models.PositiveBigIntegerField(default=0, verbose_name='Размер, байт')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='artifacts', to='tightbinding.experimentrun', verbose_name='Запуск')),
            ],
            options={
                'verbose_name': 'Артефакт',
                'verbose_name_plural': 'Артефакты',
                'ordering': ['run', 'path'],
            },
        ),
    ]
