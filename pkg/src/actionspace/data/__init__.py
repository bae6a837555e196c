"""Track ingestion, snippet extraction and synthetic scenes."""
from .snippets import (
    CLASS_GEOMETRY,
    Snippet,
    derive_actions,
    extract_snippets,
    load_snippet_cache,
    save_snippet_cache,
    split_recordings,
    split_snippets,
)
from .synth import SCENARIOS, scene_map_for, synth_dataset, synth_generate
from .tracks import SceneMap, Track, load_scene_map, load_tracks, resample, save_scene_map, write_tracks
