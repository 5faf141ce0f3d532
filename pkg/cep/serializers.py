from rest_framework import serializers

from .datagen import ALL_LABELS, FEATURE_DIM, FEATURE_MAX, FEATURE_MIN
from .models import ExperimentRun, Sweep


class InferRequestSerializer(serializers.Serializer):
    """
    Inference request payload:
    {
        "run_id": 3,
        "features": [[12, 200, ...], ...],   // one row of 128 integers per timestamp
        "t": 5,
        "window": 2                          // optional, must equal the run's window
    }
    """
    run_id = serializers.IntegerField(min_value=1, help_text="ID of a succeeded training run")
    features = serializers.ListField(
        child=serializers.ListField(
            child=serializers.IntegerField(min_value=FEATURE_MIN, max_value=FEATURE_MAX),
            min_length=FEATURE_DIM,
            max_length=FEATURE_DIM,
        ),
        min_length=1,
        help_text=f"Feature rows of {FEATURE_DIM} integers in [{FEATURE_MIN}, {FEATURE_MAX}]",
    )
    t = serializers.IntegerField(min_value=0, help_text="Timestamp to query")
    window = serializers.IntegerField(min_value=1, required=False, help_text="Window size; must equal the window the run was trained at")

    def validate(self, attrs):
        if attrs['t'] >= len(attrs['features']):
            raise serializers.ValidationError(
                {'t': f"Timestamp {attrs['t']} is outside the stream (0..{len(attrs['features']) - 1})"}
            )
        return attrs


class InferResponseSerializer(serializers.Serializer):
    run_id = serializers.IntegerField()
    t = serializers.IntegerField()
    window = serializers.IntegerField()
    distribution = serializers.DictField(
        child=serializers.FloatField(),
        help_text=f"Probabilities of {', '.join(ALL_LABELS)}",
    )
    argmax = serializers.CharField()
    argmax_name = serializers.CharField(help_text="Readable label such as ceSiren")
    total = serializers.FloatField(help_text="Sum of the distribution, 1 up to rounding")


class ErrorResponseSerializer(serializers.Serializer):
    detail = serializers.CharField(help_text="Error message")


class ExperimentRunSerializer(serializers.ModelSerializer):
    sweep_name = serializers.CharField(source='sweep.name', read_only=True, default=None)

    class Meta:
        model = ExperimentRun
        fields = [
            'id', 'sweep', 'sweep_name', 'command', 'window', 'noise', 'seed', 'replicate', 'status',
            'ce_accuracy', 'ce_accuracy_natural', 'simple_accuracy', 'epochs_run',
            'output_dir', 'checkpoint_path', 'error', 'created_at', 'finished_at',
        ]
        read_only_fields = fields


class SweepSerializer(serializers.ModelSerializer):
    run_count = serializers.SerializerMethodField()

    class Meta:
        model = Sweep
        fields = ['id', 'name', 'kind', 'status', 'output_dir', 'config', 'run_count', 'created_at', 'finished_at']
        read_only_fields = fields

    def get_run_count(self, obj):
        return obj.runs.count()
