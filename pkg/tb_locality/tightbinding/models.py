from django.db import models


class ExperimentRun(models.Model):
    """Журнал запусков команд"""
    STATUS_CHOICES = (
        ('running', 'Выполняется'),
        ('ok', 'Успешно'),
        ('invariant', 'Нарушен инвариант'),
        ('config', 'Ошибка конфигурации'),
        ('numerical', 'Численный сбой'),
    )

    command = models.CharField(max_length=32, verbose_name="Команда")
    config = models.JSONField(default=dict, verbose_name="Конфигурация")
    seed = models.BigIntegerField(default=0, verbose_name="Зерно")
    output_dir = models.CharField(max_length=500, blank=True, verbose_name="Каталог результатов")
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running', verbose_name="Статус")
    exit_code = models.PositiveSmallIntegerField(null=True, blank=True, verbose_name="Код завершения")
    summary = models.JSONField(default=dict, verbose_name="Сводка")
    message = models.TextField(blank=True, verbose_name="Сообщение")
    started_at = models.DateTimeField(auto_now_add=True, verbose_name="Начало")
    finished_at = models.DateTimeField(null=True, blank=True, verbose_name="Окончание")

    def __str__(self):
        return f"{self.command} #{self.pk} ({self.get_status_display()})"

    def duration_seconds(self):
        if self.finished_at is None:
            return None
        return (self.finished_at - self.started_at).total_seconds()

    class Meta:
        verbose_name = "Запуск"
        verbose_name_plural = "Запуски"
        ordering = ['-started_at']
        indexes = [
            models.Index(fields=['command', 'status'], name='tb_run_command_status_idx'),
        ]


class RunArtifact(models.Model):
    """Файл, записанный запуском"""
    KIND_CHOICES = (
        ('csv', 'CSV'),
        ('svg', 'SVG'),
        ('json', 'JSON'),
        ('txt', 'Текст'),
    )

    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='artifacts', verbose_name="Запуск")
    path = models.CharField(max_length=500, verbose_name="Путь")
    kind = models.CharField(max_length=8, choices=KIND_CHOICES, verbose_name="Тип")
    sha256 = models.CharField(max_length=64, verbose_name="SHA-256")
    size = models.PositiveBigIntegerField(default=0, verbose_name="Размер, байт")

    def __str__(self):
        return self.path

    class Meta:
        verbose_name = "Артефакт"
        verbose_name_plural = "Артефакты"
        ordering = ['run', 'path']
