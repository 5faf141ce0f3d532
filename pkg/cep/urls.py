from django.urls import path
from . import views

app_name = 'cep'

urlpatterns = [
    path('runs/', views.runs_list, name='runs_list'),
    path('runs/<int:run_id>/', views.run_detail, name='run_detail'),
    path('sweeps/<int:sweep_id>/summary/', views.sweep_summary, name='sweep_summary'),
    path('infer/', views.infer, name='infer'),

    # Monitoring
    path('health/', views.health_check, name='health_check'),
]
