from django.db import models
from django.utils import timezone


class Sweep(models.Model):
    """A batch of experiment runs over a grid of window sizes and noise fractions"""

    KIND_CHOICES = [
        ('base', 'Window-size sweep'),
        ('noise', 'Noise sweep'),
        ('custom', 'Custom'),
    ]
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('finished', 'Finished'),
    ]

    name = models.CharField(max_length=255, help_text="Label of the sweep, usually the preset name")
    kind = models.CharField(max_length=16, choices=KIND_CHOICES, default='custom')
    config = models.JSONField(default=dict, help_text="Resolved experiment configuration")
    output_dir = models.CharField(max_length=1024, blank=True)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default='pending')
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    def __str__(self):
        return f"{self.name} ({self.kind})"

    def mark_finished(self):
        self.status = 'finished'
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'finished_at'])

    class Meta:
        ordering = ['-created_at']
        verbose_name = "Sweep"
        verbose_name_plural = "Sweeps"


class ExperimentRun(models.Model):
    """
    One train or eval invocation. Files on disk stay authoritative; the row only
    indexes them for the admin and the API.
    """

    COMMAND_CHOICES = [
        ('train', 'Train'),
        ('eval', 'Evaluate'),
        ('sweep', 'Sweep cell'),
    ]
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('succeeded', 'Succeeded'),
        ('failed', 'Failed'),
    ]

    sweep = models.ForeignKey(
        Sweep,
        on_delete=models.CASCADE,
        related_name='runs',
        null=True,
        blank=True,
    )
    command = models.CharField(max_length=16, choices=COMMAND_CHOICES)
    window = models.PositiveSmallIntegerField()
    noise = models.FloatField(default=0.0)
    seed = models.BigIntegerField(default=0)
    replicate = models.PositiveSmallIntegerField(default=0)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default='pending')
    ce_accuracy = models.FloatField(null=True, blank=True)
    ce_accuracy_natural = models.FloatField(null=True, blank=True)
    simple_accuracy = models.FloatField(null=True, blank=True)
    epochs_run = models.PositiveIntegerField(null=True, blank=True)
    output_dir = models.CharField(max_length=1024, blank=True)
    checkpoint_path = models.CharField(max_length=1024, blank=True)
    error = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    def __str__(self):
        return f"{self.command} W={self.window} noise={self.noise:g} seed={self.seed} [{self.status}]"

    def succeed(self, **metrics):
        for name, value in metrics.items():
            setattr(self, name, value)
        self.status = 'succeeded'
        self.finished_at = timezone.now()
        self.save()

    def fail(self, message: str):
        self.status = 'failed'
        self.error = message
        self.finished_at = timezone.now()
        self.save()

    @property
    def is_finished(self):
        return self.status in ('succeeded', 'failed')

    class Meta:
        ordering = ['-created_at']
        verbose_name = "Experiment run"
        verbose_name_plural = "Experiment runs"
        indexes = [
            models.Index(fields=['window', 'noise'], name='cep_experim_window_8f3c1a_idx'),
            models.Index(fields=['status'], name='cep_experim_status_2b7d4e_idx'),
        ]
