"""Time-synchronous beam-search decoding over a lexicon prefix tree.

Tokens carry (tree position, HMM state, LM history, scores, backtrace);
the n-gram LM is applied at word boundaries, scaled into natural log.
Pruning is a log-likelihood beam plus a max-active token cap per frame.
Ties break on higher acoustic score, then lexicographically earlier word
sequence, so decoding is deterministic.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .am import AcousticModel, Interval, state_logliks
from .features import FeatureMatrix
from .lexicon import Lexicon
from .lm import BOS, EOS, NGramLM

LN10 = math.log(10.0)
LOG_ZERO = -1e30


class DecodeError(RuntimeError):
    """No surviving tokens: the beam pruned every path."""


@dataclass(frozen=True)
class DecodeConfig:
    beam: float = 16.0
    max_active: int = 7000
    lm_scale: float = 12.0
    word_insertion_penalty: float = 0.0
    sil_prior: float = 0.5

    def __post_init__(self):
        if self.beam <= 0:
            raise ValueError("beam must be > 0")
        if self.max_active < 1:
            raise ValueError("max_active must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    words: tuple[str, ...]
    word_intervals: tuple[Interval, ...]
    acoustic_score: float
    lm_score: float  # log10, unscaled
    total_score: float

    def text(self) -> str:
        return " ".join(self.words)


# ---------------------------------------------------------------------------
# lexicon prefix tree

@dataclass
class LexNode:
    phone: str | None
    parent: int
    children: dict[str, int] = field(default_factory=dict)
    words: list[str] = field(default_factory=list)


@dataclass
class LexTree:
    nodes: list[LexNode]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> LexNode:
        return self.nodes[0]


def build_prefix_tree(lexicon: Lexicon, include_unk: bool = False) -> LexTree:
    """Trie over grapheme pronunciations; leaves carry word identities."""
    if not lexicon.pronunciations and not include_unk:
        raise ValueError("empty lexicon")
    nodes = [LexNode(phone=None, parent=-1)]
    entries = [(w, lexicon.pronunciations[w]) for w in lexicon.words]
    if include_unk:
        entries.append((lexicon.unk_word, (lexicon.garbage_phone,)))
    for word, pron in entries:
        current = 0
        for grapheme in pron:
            nxt = nodes[current].children.get(grapheme)
            if nxt is None:
                nxt = len(nodes)
                nodes.append(LexNode(phone=grapheme, parent=current))
                nodes[current].children[grapheme] = nxt
            current = nxt
        nodes[current].words.append(word)
    for node in nodes:
        node.words.sort()
    return LexTree(nodes)


# ---------------------------------------------------------------------------
# compiled decoding network

@dataclass
class _Network:
    """Flattened (tree node, hmm state) positions plus SIL positions."""

    pos_state: np.ndarray  # model state id per position
    pos_node: np.ndarray  # tree node per position (-1 for SIL)
    is_exit: np.ndarray  # last HMM state of its phone
    first_pos: dict[int, int]  # tree node -> its first position
    children_pos: list[list[int]]  # tree node -> child first positions
    sil_first: int
    sil_exit: int
    root_children: list[int]  # positions entered at a word start
    n_states: int


def _resolve_states(
    model: AcousticModel, tree: LexTree, node_index: int, lexicon: Lexicon
) -> tuple[int, ...]:
    """Context-dependent states where the trie makes the context unambiguous."""
    node = tree.nodes[node_index]
    parent = tree.nodes[node.parent]
    left = parent.phone if parent.phone is not None else lexicon.silence_phone
    if not node.children:
        right = lexicon.silence_phone
    elif len(node.children) == 1 and not node.words:
        right = next(iter(node.children))
    else:
        return model.states_for(node.phone)  # ambiguous: monophone fallback
    return model.states_for(node.phone, left, right)


def _compile(model: AcousticModel, tree: LexTree, lexicon: Lexicon) -> _Network:
    n_states = model.n_states
    pos_state: list[int] = []
    pos_node: list[int] = []
    first_pos: dict[int, int] = {}
    for idx in range(1, tree.n_nodes):
        first_pos[idx] = len(pos_state)
        pos_state.extend(_resolve_states(model, tree, idx, lexicon))
        pos_node.extend([idx] * n_states)
    sil_first = len(pos_state)
    pos_state.extend(model.states_for(lexicon.silence_phone))
    pos_node.extend([-1] * n_states)
    pos_state_arr = np.array(pos_state, dtype=np.int64)
    is_exit = np.zeros(len(pos_state), dtype=bool)
    is_exit[n_states - 1 :: n_states] = True
    children_pos = [
        [first_pos[child] for _, child in sorted(node.children.items())]
        for node in tree.nodes
    ]
    return _Network(
        pos_state=pos_state_arr,
        pos_node=np.array(pos_node, dtype=np.int64),
        is_exit=is_exit,
        first_pos=first_pos,
        children_pos=children_pos,
        sil_first=sil_first,
        sil_exit=sil_first + n_states - 1,
        root_children=children_pos[0],
        n_states=n_states,
    )


# ---------------------------------------------------------------------------
# token passing

class _Tokens:
    """Struct-of-arrays token store."""

    __slots__ = ("pos", "hist", "score", "ascore", "lmscore", "ws", "bp")

    def __init__(self, pos, hist, score, ascore, lmscore, ws, bp):
        self.pos = np.asarray(pos, dtype=np.int64)
        self.hist = np.asarray(hist, dtype=np.int64)
        self.score = np.asarray(score, dtype=np.float64)
        self.ascore = np.asarray(ascore, dtype=np.float64)
        self.lmscore = np.asarray(lmscore, dtype=np.float64)
        self.ws = np.asarray(ws, dtype=np.int64)
        self.bp = np.asarray(bp, dtype=np.int64)

    def __len__(self):
        return len(self.pos)

    def take(self, idx) -> "_Tokens":
        return _Tokens(
            self.pos[idx], self.hist[idx], self.score[idx],
            self.ascore[idx], self.lmscore[idx], self.ws[idx], self.bp[idx],
        )


def _word_sequence(bp_table, bp: int) -> tuple[str, ...]:
    words = []
    while bp >= 0:
        prev, word, _, _ = bp_table[bp]
        words.append(word)
        bp = prev
    return tuple(reversed(words))


class _Decoder:
    def __init__(self, model, lm, tree, lexicon, cfg):
        self.model = model
        self.lm = lm
        self.tree = tree
        self.lexicon = lexicon
        self.cfg = cfg
        self.net = _compile(model, tree, lexicon)
        self.log_trans = model.log_transitions()
        self.log_self = self.log_trans[self.net.pos_state, 0]
        self.log_fwd = self.log_trans[self.net.pos_state, 1]
        self.log_take = math.log(cfg.sil_prior)
        self.log_skip = math.log(1.0 - cfg.sil_prior)
        # LM histories: id -> truncated word tuple (starting from <s>)
        self.histories: list[tuple[str, ...]] = [(BOS,)]
        self.hist_ids: dict[tuple[str, ...], int] = {(BOS,): 0}
        self.lm_cache: dict[tuple[int, str], tuple[float, int]] = {}
        self.bp_table: list[tuple[int, str, int, int]] = []

    def lm_step(self, hist_id: int, word: str) -> tuple[float, int]:
        key = (hist_id, word)
        hit = self.lm_cache.get(key)
        if hit is not None:
            return hit
        history = self.histories[hist_id]
        logp = self.lm.logp(history, word)
        new_hist = (history + (self.lm.map_word(word),))[
            max(0, len(history) + 1 - (self.lm.order - 1)):
        ] if self.lm.order > 1 else ()
        nid = self.hist_ids.get(new_hist)
        if nid is None:
            nid = len(self.histories)
            self.histories.append(new_hist)
            self.hist_ids[new_hist] = nid
        self.lm_cache[key] = (logp, nid)
        return logp, nid

    def eos_logp(self, hist_id: int) -> float:
        return self.lm.logp(self.histories[hist_id], EOS)

    def decode(self, feats: FeatureMatrix) -> Hypothesis:
        cfg = self.cfg
        net = self.net
        n_frames = feats.n_frames
        if n_frames == 0:
            raise DecodeError("no frames to decode")
        emis, col = state_logliks(self.model, feats.frames, net.pos_state)
        pos_col = np.array([col[int(s)] for s in net.pos_state])
        lm_w = cfg.lm_scale * LN10

        # frame 0: enter root children or leading silence
        pos0 = np.array(net.root_children + [net.sil_first], dtype=np.int64)
        prior0 = np.full(len(pos0), self.log_skip)
        prior0[-1] = self.log_take
        e0 = emis[0, pos_col[pos0]]
        tokens = _Tokens(
            pos=pos0,
            hist=np.zeros(len(pos0), dtype=np.int64),
            score=prior0 + e0,
            ascore=prior0 + e0,
            lmscore=np.zeros(len(pos0)),
            ws=np.zeros(len(pos0), dtype=np.int64),
            bp=np.full(len(pos0), -1, dtype=np.int64),
        )
        tokens = self._prune(self._recombine(tokens))

        for t in range(1, n_frames):
            tokens = self._expand(tokens, t, emis, pos_col, lm_w)
            if len(tokens) == 0:
                raise DecodeError(f"beam emptied at frame {t}")
            tokens = self._prune(self._recombine(tokens))
        return self._finalize(tokens, n_frames, lm_w, feats.frame_shift)

    # -- expansion ---------------------------------------------------------

    def _expand(self, tokens, t, emis, pos_col, lm_w):
        net = self.net
        chunks = []

        # self loops
        chunks.append((
            tokens.pos, tokens.hist,
            tokens.score + self.log_self[tokens.pos],
            tokens.ascore + self.log_self[tokens.pos],
            tokens.lmscore, tokens.ws, tokens.bp,
        ))
        # forward within a phone
        inner = ~net.is_exit[tokens.pos]
        if inner.any():
            sub = tokens.take(inner)
            step = self.log_fwd[sub.pos]
            chunks.append((
                sub.pos + 1, sub.hist, sub.score + step,
                sub.ascore + step, sub.lmscore, sub.ws, sub.bp,
            ))
        # phone exits
        exits = net.is_exit[tokens.pos]
        if exits.any():
            sub = tokens.take(exits)
            chunks.extend(self._expand_exits(sub, t, lm_w))

        pos = np.concatenate([c[0] for c in chunks])
        hist = np.concatenate([c[1] for c in chunks])
        score = np.concatenate([c[2] for c in chunks])
        ascore = np.concatenate([c[3] for c in chunks])
        lmscore = np.concatenate([c[4] for c in chunks])
        ws = np.concatenate([c[5] for c in chunks])
        bp = np.concatenate([c[6] for c in chunks])
        e = emis[t, pos_col[pos]]
        return _Tokens(pos, hist, score + e, ascore + e, lmscore, ws, bp)

    def _expand_exits(self, sub, t, lm_w):
        net = self.net
        tree = self.tree
        chunks = []
        starts = np.array(net.root_children + [net.sil_first], dtype=np.int64)
        start_prior = np.full(len(starts), self.log_skip)
        start_prior[-1] = self.log_take

        ent_dst: list[int] = []  # entries that do not emit a word
        ent_src: list[int] = []
        # batched word-start entries: (score, ascore, lmscore, hist, bp)
        pend_score, pend_asc, pend_lms, pend_hist, pend_bp = [], [], [], [], []

        for i in range(len(sub)):
            p = int(sub.pos[i])
            if p == net.sil_exit:
                # silence exit: straight into the next word
                for child in net.root_children:
                    ent_dst.append(child)
                    ent_src.append(i)
                continue
            node_index = int(net.pos_node[p])
            for child_pos in net.children_pos[node_index]:
                ent_dst.append(child_pos)
                ent_src.append(i)
            words = tree.nodes[node_index].words
            if words:
                base = float(sub.score[i] + self.log_fwd[p])
                base_a = float(sub.ascore[i] + self.log_fwd[p])
                base_l = float(sub.lmscore[i])
                for word in words:
                    logp, new_hist = self.lm_step(int(sub.hist[i]), word)
                    bp_id = len(self.bp_table)
                    self.bp_table.append(
                        (int(sub.bp[i]), word, int(sub.ws[i]), t)
                    )
                    pend_score.append(
                        base + lm_w * logp + self.cfg.word_insertion_penalty
                    )
                    pend_asc.append(base_a + self.cfg.word_insertion_penalty)
                    pend_lms.append(base_l + logp)
                    pend_hist.append(new_hist)
                    pend_bp.append(bp_id)

        if ent_dst:
            src = np.array(ent_src, dtype=np.int64)
            step = self.log_fwd[sub.pos[src]]
            chunks.append((
                np.array(ent_dst, dtype=np.int64), sub.hist[src],
                sub.score[src] + step, sub.ascore[src] + step,
                sub.lmscore[src], sub.ws[src], sub.bp[src],
            ))
        if pend_score:
            n = len(pend_score)
            k = len(starts)
            chunks.append((
                np.tile(starts, n),
                np.repeat(np.array(pend_hist, dtype=np.int64), k),
                np.repeat(np.array(pend_score), k) + np.tile(start_prior, n),
                np.repeat(np.array(pend_asc), k) + np.tile(start_prior, n),
                np.repeat(np.array(pend_lms), k),
                np.full(n * k, t, dtype=np.int64),
                np.repeat(np.array(pend_bp, dtype=np.int64), k),
            ))
        return chunks

    # -- recombination and pruning ------------------------------------------

    def _recombine(self, tokens: _Tokens) -> _Tokens:
        if len(tokens) <= 1:
            return tokens
        key = tokens.pos * (len(self.histories) + 1) + tokens.hist
        order = np.lexsort((-tokens.ascore, -tokens.score, key))
        key_sorted = key[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = key_sorted[1:] != key_sorted[:-1]
        keep = order[first]

        # exact (score, ascore) ties: pick the lexicographically earlier words
        dup = ~first
        if dup.any():
            kept_at = np.flatnonzero(first)
            groups = np.searchsorted(kept_at, np.flatnonzero(dup), side="right") - 1
            for j, group in zip(np.flatnonzero(dup), groups):
                a, b = keep[group], order[j]
                if (
                    tokens.score[b] == tokens.score[a]
                    and tokens.ascore[b] == tokens.ascore[a]
                ):
                    wa = _word_sequence(self.bp_table, int(tokens.bp[a]))
                    wb = _word_sequence(self.bp_table, int(tokens.bp[b]))
                    if wb < wa:
                        keep[group] = b
        return tokens.take(np.sort(keep))

    def _prune(self, tokens: _Tokens) -> _Tokens:
        if len(tokens) == 0:
            return tokens
        peak = tokens.score.max()
        inside = tokens.score >= peak - self.cfg.beam
        tokens = tokens.take(inside)
        if len(tokens) > self.cfg.max_active:
            part = np.argpartition(-tokens.score, self.cfg.max_active - 1)
            tokens = tokens.take(np.sort(part[: self.cfg.max_active]))
        return tokens

    # -- finalization --------------------------------------------------------

    def _finalize(self, tokens, n_frames, lm_w, frame_shift) -> Hypothesis:
        net = self.net
        tree = self.tree
        best = None
        for i in range(len(tokens)):
            p = int(tokens.pos[i])
            if not net.is_exit[p]:
                continue
            base = float(tokens.score[i] + self.log_fwd[p])
            base_a = float(tokens.ascore[i] + self.log_fwd[p])
            base_l = float(tokens.lmscore[i])
            if p == net.sil_exit:
                eos = self.eos_logp(int(tokens.hist[i]))
                cand = (
                    base + lm_w * eos, base_a, base_l + eos,
                    int(tokens.bp[i]),
                )
                best = self._better(best, cand)
                continue
            node = tree.nodes[int(net.pos_node[p])]
            for word in node.words:
                logp, new_hist = self.lm_step(int(tokens.hist[i]), word)
                eos = self.eos_logp(new_hist)
                bp_id = len(self.bp_table)
                self.bp_table.append(
                    (int(tokens.bp[i]), word, int(tokens.ws[i]), n_frames)
                )
                cand = (
                    base + self.log_skip
                    + lm_w * (logp + eos)
                    + self.cfg.word_insertion_penalty,
                    base_a + self.log_skip + self.cfg.word_insertion_penalty,
                    base_l + logp + eos,
                    bp_id,
                )
                best = self._better(best, cand)
        if best is None:
            raise DecodeError("no token reached an utterance-final state")
        total, ascore, lmscore, bp = best
        words = []
        intervals = []
        cursor = bp
        while cursor >= 0:
            prev, word, ws, we = self.bp_table[cursor]
            words.append(word)
            intervals.append(
                Interval(word, ws * frame_shift, we * frame_shift)
            )
            cursor = prev
        words.reverse()
        intervals.reverse()
        return Hypothesis(
            words=tuple(words),
            word_intervals=tuple(intervals),
            acoustic_score=ascore,
            lm_score=lmscore,
            total_score=total,
        )

    def _better(self, best, cand):
        if best is None:
            return cand
        if cand[0] > best[0]:
            return cand
        if cand[0] == best[0]:
            if cand[1] > best[1]:
                return cand
            if cand[1] == best[1]:
                wa = _word_sequence(self.bp_table, best[3])
                wb = _word_sequence(self.bp_table, cand[3])
                if wb < wa:
                    return cand
        return best


def decode(
    model: AcousticModel,
    lm: NGramLM,
    tree: LexTree,
    feats: FeatureMatrix,
    cfg: DecodeConfig = DecodeConfig(),
    lexicon: Lexicon | None = None,
) -> Hypothesis:
    """1-best decoding of one utterance."""
    if lexicon is None:
        lexicon = Lexicon({})
    return _Decoder(model, lm, tree, lexicon, cfg).decode(feats)


@dataclass
class RtfReport:
    audio_seconds: float
    wall_seconds: float

    @property
    def rtf(self) -> float:
        return self.wall_seconds / self.audio_seconds if self.audio_seconds else 0.0


@dataclass
class CorpusDecodeResult:
    hypotheses: list[Hypothesis | None]
    errors: list[tuple[int, str]]
    rtf: RtfReport


def decode_corpus(
    model: AcousticModel,
    lm: NGramLM,
    tree: LexTree,
    batch: Sequence[FeatureMatrix],
    cfg: DecodeConfig = DecodeConfig(),
    lexicon: Lexicon | None = None,
) -> CorpusDecodeResult:
    """Decode a batch in order; per-utterance errors are collected."""
    hypotheses: list[Hypothesis | None] = []
    errors: list[tuple[int, str]] = []
    audio_seconds = 0.0
    started = time.perf_counter()
    for index, feats in enumerate(batch):
        audio_seconds += feats.n_frames * feats.frame_shift
        try:
            hypotheses.append(decode(model, lm, tree, feats, cfg, lexicon))
        except DecodeError as exc:
            hypotheses.append(None)
            errors.append((index, str(exc)))
    wall = time.perf_counter() - started
    return CorpusDecodeResult(
        hypotheses=hypotheses,
        errors=errors,
        rtf=RtfReport(audio_seconds=audio_seconds, wall_seconds=wall),
    )
