"""Stimulus and transient-DC artifact removal for LFP recordings under DBS."""

from .core import (
    DEFAULT_FS,
    DEFAULT_F_STI,
    EventList,
    Recording,
    SegmentMatrix,
    StimPeriods,
    load_events,
    load_recording,
    save_events,
    save_recording,
)

__all__ = [
    "DEFAULT_FS",
    "DEFAULT_F_STI",
    "EventList",
    "Recording",
    "SegmentMatrix",
    "StimPeriods",
    "load_events",
    "load_recording",
    "save_events",
    "save_recording",
]

__version__ = "0.1.0"
