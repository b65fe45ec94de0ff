"""Stdio adapter exposing speaker-embedding networks to the attack toolkit."""

from .models import EmbeddingModel, MelStatsNet, load_model
from .protocol import handle_request, serve

__version__ = "0.1.0"
