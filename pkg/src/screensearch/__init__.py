"""Structural GUI state search: screen signatures, dedup index, state graph, PUCT explorer."""

from .ambiguity import AmbiguityParams, AmbiguityTracker, ambiguity_score
from .explorer import PuctConfig, World, run_episode
from .gui_sim import GuiEnv, load_scenario
from .retrieval_index import DedupConfig, ScreenIndex
from .screen_model import ScreenObservation, UiElement, extract_signature
from .state_graph import ActionSignature, StateGraph

__version__ = "0.1.0"

__all__ = [
    "ActionSignature",
    "AmbiguityParams",
    "AmbiguityTracker",
    "DedupConfig",
    "GuiEnv",
    "PuctConfig",
    "ScreenIndex",
    "ScreenObservation",
    "StateGraph",
    "UiElement",
    "World",
    "ambiguity_score",
    "extract_signature",
    "load_scenario",
    "run_episode",
]
