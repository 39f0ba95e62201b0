"""Ready-made synthetic corpus specs for the desk-scale experiments."""
from __future__ import annotations

import copy

from .synth import SynthSpec

_FLAT = {"contour": "flat", "f0": 120.0, "range": 0.6, "word_sec": 0.25, "amplitude": 0.5}
_RISE = dict(_FLAT, contour="rise")

_SHARED = ["this is your car", "you finished the report", "the meeting starts at noon",
           "we can leave now", "she moved to boston", "that was the last one"]

PRESETS = {
    # lexical cue only: four classes with distinct vocabularies, same prosody
    "separable": {
        "dialog_length": 5,
        "sizes": {"train": 500, "valid": 50, "test": 50},
        "classes": [
            {"name": "STATEMENT", "templates": ["the report is ready", "we need more time", "i sent the file"],
             "prosody": _FLAT},
            {"name": "QUESTION", "templates": ["where is the file ?", "who called you ?", "when do we start ?"],
             "prosody": _FLAT},
            {"name": "BACKCHANNEL", "templates": ["yeah", "uh huh", "okay"], "prosody": _FLAT},
            {"name": "FLOOR", "templates": ["so anyway", "well um", "let me see"], "prosody": _FLAT},
        ],
    },
    # two lexical classes with identical prosody plus an acoustic-only pair on "right"
    "fusion": {
        "dialog_length": 5,
        "sizes": {"train": 600, "valid": 100, "test": 100},
        "classes": [
            {"name": "INFORM", "templates": ["the report is ready", "we need more time", "i sent the file",
                                             "the meeting is over"], "prosody": _FLAT},
            {"name": "REQUEST", "templates": ["please send the report", "call them back soon", "let us meet later",
                                              "close the door now"], "prosody": _FLAT},
            {"name": "BACKCHANNEL", "templates": ["right"], "prosody": dict(_FLAT, word_sec=0.35)},
            {"name": "CHECK", "templates": ["right"], "prosody": dict(_RISE, word_sec=0.35)},
        ],
    },
    # questions marked by both "?" and rising pitch; statements share the wording
    "qmark": {
        "dialog_length": 5,
        "sizes": {"train": 500, "valid": 100, "test": 100},
        "classes": [
            {"name": "STATEMENT", "weight": 2, "templates": _SHARED, "prosody": _FLAT},
            {"name": "QUESTION", "weight": 2, "templates": [t + " ?" for t in _SHARED], "prosody": _RISE},
            {"name": "BACKCHANNEL", "weight": 1, "templates": ["yeah", "right", "okay"],
             "prosody": dict(_FLAT, word_sec=0.35)},
        ],
    },
}


def preset(name: str, **overrides) -> SynthSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    d = copy.deepcopy(PRESETS[name])
    d.update(overrides)
    return SynthSpec.from_dict(d)
