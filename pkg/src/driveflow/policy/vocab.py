"""Token vocabulary and the emission grammar.

Every decodable sequence matches
``REASON* ACTION_START CODE{t_f} EOS`` with at most ``reason_max`` reason
tokens; the grammar is enforced with hard masks so disallowed tokens carry
exactly zero probability.
"""

from __future__ import annotations

import numpy as np

from driveflow.microworld.world import LATERAL_MANEUVERS

NEG_INF = -np.inf


class TokenVocabulary:
    """Reason tokens, the action-start switch, EOS, and codebook tokens with
    disjoint id ranges. The BOS used to prime the decoder is an extra
    embedding row outside the emission vocabulary."""

    def __init__(self, codebook_k: int, t_f: int, reason_max: int):
        self.reason_tags = LATERAL_MANEUVERS
        self.n_reason = len(self.reason_tags)
        self.action_start = self.n_reason
        self.eos = self.n_reason + 1
        self.code_offset = self.n_reason + 2
        self.codebook_k = int(codebook_k)
        self.size = self.code_offset + self.codebook_k
        self.bos_row = self.size  # embedding-table row, never emitted
        self.t_f = int(t_f)
        self.reason_max = int(reason_max)

    def reason_id(self, tag: str) -> int:
        return self.reason_tags.index(tag)

    def is_reason(self, tok: int) -> bool:
        return 0 <= tok < self.n_reason

    def is_code(self, tok: int) -> bool:
        return self.code_offset <= tok < self.size

    def tag_of(self, tok: int) -> str:
        return self.reason_tags[tok]

    def code_of(self, tok: int) -> int:
        return tok - self.code_offset

    # -- grammar ------------------------------------------------------------

    def allowed_after(self, prefix) -> np.ndarray:
        """Boolean (size,) mask of tokens permitted after ``prefix``."""
        n_reason = 0
        n_code = 0
        started = False
        done = False
        for tok in prefix:
            if done:
                raise ValueError("tokens after EOS")
            if self.is_reason(tok):
                if started:
                    raise ValueError("reason token after ACTION_START")
                n_reason += 1
            elif tok == self.action_start:
                if started:
                    raise ValueError("duplicate ACTION_START")
                started = True
            elif self.is_code(tok):
                if not started:
                    raise ValueError("codebook token before ACTION_START")
                n_code += 1
            elif tok == self.eos:
                if not started or n_code != self.t_f:
                    raise ValueError("premature EOS")
                done = True
            else:
                raise ValueError(f"unknown token id {tok}")
        allowed = np.zeros(self.size, dtype=bool)
        if done:
            return allowed
        if not started:
            allowed[self.action_start] = True
            if n_reason < self.reason_max:
                allowed[: self.n_reason] = True
        elif n_code < self.t_f:
            allowed[self.code_offset :] = True
        else:
            allowed[self.eos] = True
        return allowed

    def grammar_mask_rows(self, tokens) -> np.ndarray:
        """Additive (len(tokens), size) mask: 0 where permitted, -inf where
        not, with row i conditioned on tokens[:i]."""
        out = np.full((len(tokens), self.size), NEG_INF)
        for i in range(len(tokens)):
            out[i, self.allowed_after(tokens[:i])] = 0.0
        return out

    def validate(self, tokens) -> None:
        """Raise unless ``tokens`` is one complete grammatical sequence."""
        allowed = self.allowed_after(tokens)
        if np.any(allowed):
            raise ValueError("incomplete token sequence")

    def split(self, tokens):
        """(reason tags, codebook indices) of a complete sequence."""
        self.validate(tokens)
        tags = [self.tag_of(t) for t in tokens if self.is_reason(t)]
        codes = [self.code_of(t) for t in tokens if self.is_code(t)]
        return tags, codes

    def build_sequence(self, reason_tags, codes) -> list:
        toks = [self.reason_id(t) for t in reason_tags[: self.reason_max]]
        toks.append(self.action_start)
        toks.extend(self.code_offset + int(c) for c in codes)
        toks.append(self.eos)
        self.validate(toks)
        return toks
