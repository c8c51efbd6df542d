from .models import get_architecture
from .train import load_model
