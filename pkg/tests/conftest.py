"""Shared helpers: tiny hand-built models and model-sampled features."""

import numpy as np

from asrboot.am import AcousticModel, GmmState
from asrboot.features import FeatureMatrix

DIM = 2


def toy_model(phones=("A", "B"), n_states=3, spread=8.0):
    """Model whose states have well-separated means for easy generation."""
    all_phones = tuple(sorted(set(phones))) + ("GBG", "SIL")
    states = []
    for i in range(len(all_phones) * n_states):
        mean = np.array([spread * i, -spread * i], dtype=float)
        states.append(
            GmmState(
                weights=np.array([1.0]),
                means=mean[None, :],
                variances=np.full((1, DIM), 0.25),
            )
        )
    transitions = np.full((len(all_phones) * n_states, 2), 0.5)
    return AcousticModel(
        phones=all_phones, dim=DIM, n_states=n_states,
        states=states, transitions=transitions,
    )


def feats_from(frames):
    frames = np.asarray(frames, dtype=float)
    return FeatureMatrix(
        frames=frames, frame_shift=0.01, frame_length=0.025,
        log_energy=np.zeros(len(frames)),
    )


def generate_utterance(model, lexicon, tokens, frames_per_state=4, seed=0,
                       leading_sil=2, trailing_sil=2, gap_sil=0):
    """Sample features from the model's own Gaussians along the transcript.

    Returns (features, word boundary frames) where boundaries are
    (start_frame, end_frame) per word.
    """
    rng = np.random.default_rng(seed)
    rows = []
    boundaries = []

    def emit_phone(phone, count=frames_per_state):
        ids = model.states_for(phone)
        for sid in ids:
            state = model.states[sid]
            for _ in range(count):
                rows.append(
                    rng.normal(state.means[0], np.sqrt(state.variances[0]))
                )

    if leading_sil:
        emit_phone("SIL", leading_sil)
    for w_idx, word in enumerate(tokens):
        if w_idx > 0 and gap_sil:
            emit_phone("SIL", gap_sil)
        start = len(rows)
        for phone in lexicon.pron(word):
            emit_phone(phone)
        boundaries.append((start, len(rows)))
    if trailing_sil:
        emit_phone("SIL", trailing_sil)
    return feats_from(np.array(rows)), boundaries
