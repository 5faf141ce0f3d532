from django.contrib import admin
from django.urls import reverse
from django.utils.html import format_html
from .models import ExperimentRun, Sweep


class ExperimentRunInline(admin.TabularInline):
    model = ExperimentRun
    extra = 0
    fields = ['window', 'noise', 'seed', 'replicate', 'status', 'ce_accuracy', 'simple_accuracy']
    readonly_fields = fields
    can_delete = False
    show_change_link = True


@admin.register(Sweep)
class SweepAdmin(admin.ModelAdmin):
    list_display = ['name', 'kind', 'status', 'run_count', 'created_at', 'finished_at']
    list_filter = ['kind', 'status', ('created_at', admin.DateFieldListFilter)]
    search_fields = ['name', 'output_dir']
    readonly_fields = ['config', 'created_at', 'finished_at']
    inlines = [ExperimentRunInline]

    def run_count(self, obj):
        """Runs of this sweep, linked to the filtered run list"""
        count = obj.runs.count()
        if count > 0:
            url = reverse('admin:cep_experimentrun_changelist')
            return format_html('<a href="{}?sweep__id={}">{} runs</a>', url, obj.id, count)
        return "0 runs"
    run_count.short_description = 'Runs'


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = [
        'id', 'command', 'window', 'noise', 'seed', 'replicate', 'status_display',
        'ce_accuracy', 'simple_accuracy', 'epochs_run', 'created_at',
    ]
    list_filter = ['window', 'noise', 'status', 'command', 'sweep']
    search_fields = ['output_dir', 'checkpoint_path', 'error']
    readonly_fields = ['created_at', 'finished_at']
    raw_id_fields = ['sweep']

    fieldsets = (
        ('Run', {
            'fields': ('sweep', 'command', 'window', 'noise', 'seed', 'replicate', 'status'),
        }),
        ('Results', {
            'fields': ('ce_accuracy', 'ce_accuracy_natural', 'simple_accuracy', 'epochs_run', 'error'),
        }),
        ('Files', {
            'fields': ('output_dir', 'checkpoint_path'),
            'classes': ('collapse',)
        }),
        ('Metadata', {
            'fields': ('created_at', 'finished_at'),
            'classes': ('collapse',)
        }),
    )

    def status_display(self, obj):
        colors = {'succeeded': '#198754', 'failed': '#d63384', 'running': '#fd7e14'}
        return format_html(
            '<span style="color: {}; font-weight: bold;">●</span> {}',
            colors.get(obj.status, '#6c757d'), obj.get_status_display()
        )
    status_display.short_description = 'Status'
