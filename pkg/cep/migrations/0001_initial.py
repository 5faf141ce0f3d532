# Generated by Django 5.2.5 on 2026-10-17 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Sweep',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(help_text='Label of the sweep, usually the preset name', max_length=255)),
                ('kind', models.CharField(choices=[('base', 'Window-size sweep'), ('noise', 'Noise sweep'), ('custom', 'Custom')], default='custom', max_length=16)),
                ('config', models.JSONField(default=dict, help_text='Resolved experiment configuration')),
                ('output_dir', models.CharField(blank=True, max_length=1024)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('finished', 'Finished')], default='pending', max_length=16)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'verbose_name': 'Sweep',
                'verbose_name_plural': 'Sweeps',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(choices=[('train', 'Train'), ('eval', 'Evaluate'), ('sweep', 'Sweep cell')], max_length=16)),
                ('window', models.PositiveSmallIntegerField()),
                ('noise', models.FloatField(default=0.0)),
                ('seed', models.BigIntegerField(default=0)),
                ('replicate', models.PositiveSmallIntegerField(default=0)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')], default='pending', max_length=16)),
                ('ce_accuracy', models.FloatField(blank=True, null=True)),
                ('ce_accuracy_natural', models.FloatField(blank=True, null=True)),
                ('simple_accuracy', models.FloatField(blank=True, null=True)),
                ('epochs_run', models.PositiveIntegerField(blank=True, null=True)),
                ('output_dir', models.CharField(blank=True, max_length=1024)),
                ('checkpoint_path', models.CharField(blank=True, max_length=1024)),
                ('error', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
                ('sweep', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.CASCADE, related_name='runs', to='cep.sweep')),
            ],
            options={
                'verbose_name': 'Experiment run',
                'verbose_name_plural': 'Experiment runs',
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['window', 'noise'], name='cep_experim_window_8f3c1a_idx'), models.Index(fields=['status'], name='cep_experim_status_2b7d4e_idx')],
            },
        ),
    ]
