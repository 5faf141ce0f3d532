from rest_framework import status
from rest_framework.decorators import api_view, permission_classes, throttle_classes
from rest_framework.permissions import IsAuthenticated, AllowAny
from rest_framework.response import Response
from rest_framework.throttling import UserRateThrottle
from django.shortcuts import get_object_or_404
import logging
from drf_yasg.utils import swagger_auto_schema
from drf_yasg import openapi
from .models import ExperimentRun, Sweep
from .services import InferenceService
from .serializers import (
    ErrorResponseSerializer,
    ExperimentRunSerializer,
    InferRequestSerializer,
    InferResponseSerializer,
    SweepSerializer,
)

logger = logging.getLogger('cep')


class InferenceThrottle(UserRateThrottle):
    """Inference compiles circuits per request, so it gets its own budget"""
    scope = 'inference'


@api_view(['GET'])
@permission_classes([AllowAny])
def health_check(request):
    return Response({
        'status': 'healthy',
        'service': 'Neuro-symbolic CEP API',
        'version': '1.0.0'
    })


@swagger_auto_schema(
    method='get',
    operation_description="List experiment runs, newest first. Filter with ?window=, ?noise=, ?status=.",
    responses={200: ExperimentRunSerializer(many=True)},
    manual_parameters=[
        openapi.Parameter('window', openapi.IN_QUERY, type=openapi.TYPE_INTEGER),
        openapi.Parameter('noise', openapi.IN_QUERY, type=openapi.TYPE_NUMBER),
        openapi.Parameter('status', openapi.IN_QUERY, type=openapi.TYPE_STRING),
    ]
)
@api_view(['GET'])
@permission_classes([IsAuthenticated])
def runs_list(request):
    runs = ExperimentRun.objects.select_related('sweep').all()
    try:
        if 'window' in request.query_params:
            runs = runs.filter(window=int(request.query_params['window']))
        if 'noise' in request.query_params:
            runs = runs.filter(noise=float(request.query_params['noise']))
    except ValueError:
        return Response(
            {"detail": "window and noise filters must be numbers"},
            status=status.HTTP_400_BAD_REQUEST
        )
    if 'status' in request.query_params:
        runs = runs.filter(status=request.query_params['status'])
    return Response(ExperimentRunSerializer(runs, many=True).data)


@api_view(['GET'])
@permission_classes([IsAuthenticated])
def run_detail(request, run_id):
    run = get_object_or_404(ExperimentRun.objects.select_related('sweep'), id=run_id)
    return Response(ExperimentRunSerializer(run).data)


@swagger_auto_schema(
    method='get',
    operation_description="Mean and sample standard deviation of the sweep's succeeded runs per window and noise fraction.",
    responses={200: 'Summary rows', 404: openapi.Response('Sweep not found', ErrorResponseSerializer)},
)
@api_view(['GET'])
@permission_classes([IsAuthenticated])
def sweep_summary(request, sweep_id):
    sweep = get_object_or_404(Sweep, id=sweep_id)
    data = InferenceService.sweep_summary(sweep)
    data['details'] = SweepSerializer(sweep).data
    return Response(data)


@swagger_auto_schema(
    method='post',
    operation_description="Complex-event distribution at timestamp t for a posted feature stream, using a trained run's checkpoint.",
    request_body=InferRequestSerializer,
    responses={
        200: openapi.Response('Distribution computed', InferResponseSerializer),
        400: openapi.Response('Invalid input data', ErrorResponseSerializer),
        404: openapi.Response('Run not found', ErrorResponseSerializer),
    }
)
@api_view(['POST'])
@permission_classes([IsAuthenticated])
@throttle_classes([InferenceThrottle])
def infer(request):
    serializer = InferRequestSerializer(data=request.data)
    if not serializer.is_valid():
        errors = serializer.errors
        field = next(iter(errors))
        message = errors[field][0] if isinstance(errors[field], list) else errors[field]
        return Response(
            {"detail": f"{field}: {message}"},
            status=status.HTTP_400_BAD_REQUEST
        )
    validated_data = serializer.validated_data
    result = InferenceService.infer_for_run(
        run_id=validated_data['run_id'],
        features=validated_data['features'],
        t=validated_data['t'],
        window=validated_data.get('window'),
    )
    if result['success']:
        return Response(result['data'], status=status.HTTP_200_OK)
    logger.warning(f"Inference failed for run {validated_data['run_id']}: {result['error']}")
    return Response(
        {"detail": result['error']},
        status=result['status_code']
    )
