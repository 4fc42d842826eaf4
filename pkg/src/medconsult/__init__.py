"""Multi-turn diagnostic consultation engine.

Fuses patient dialogue, decision-tree diagnosis guidelines, retrieved medical
text, and uncertainty-scored wearable sensor data into per-turn LLM prompts,
tracks concurrent candidate diseases with evolving probabilities, and emits
explainable diagnosis reports. All LLM traffic goes through a pluggable
gateway so the whole pipeline runs deterministically offline.
"""

__version__ = "0.1.0"
