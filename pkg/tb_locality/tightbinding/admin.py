from django.contrib import admin

from .models import ExperimentRun, RunArtifact


class ReadOnlyAdmin(admin.ModelAdmin):
    def has_add_permission(self, request):
        return False

    def has_change_permission(self, request, obj=None):
        return False

    def has_delete_permission(self, request, obj=None):
        return False


class RunArtifactInline(admin.TabularInline):
    model = RunArtifact
    extra = 0
    readonly_fields = ['path', 'kind', 'sha256', 'size']
    can_delete = False

    def has_add_permission(self, request, obj=None):
        return False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(ReadOnlyAdmin):
    list_display = ['id', 'command', 'status', 'exit_code', 'seed', 'started_at', 'finished_at']
    list_filter = ['command', 'status', 'started_at']
    search_fields = ['command', 'output_dir', 'message']
    date_hierarchy = 'started_at'
    readonly_fields = ['command', 'config', 'seed', 'output_dir', 'status', 'exit_code', 'summary', 'message',
                       'started_at', 'finished_at']
    inlines = [RunArtifactInline]
    fieldsets = (
        ('Запуск', {
            'fields': ('command', 'seed', 'output_dir', 'started_at', 'finished_at')
        }),
        ('Результат', {
            'fields': ('status', 'exit_code', 'message', 'summary')
        }),
        ('Конфигурация', {
            'fields': ('config',)
        }),
    )


@admin.register(RunArtifact)
class RunArtifactAdmin(ReadOnlyAdmin):
    list_display = ['path', 'kind', 'size', 'run']
    list_filter = ['kind']
    search_fields = ['path', 'sha256']
    readonly_fields = ['run', 'path', 'kind', 'sha256', 'size']
