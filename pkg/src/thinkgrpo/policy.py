"""Desk-scale autoregressive policy: hashed suffix contexts -> softmax.

``theta[c, :]`` is a row of token logits for context bucket ``c``; a bucket
is an FNV-1a hash of a suffix of the history (prompt included, padded at the
start). With ``backoff`` (the default) a step activates one bucket per suffix
length 1..k and its logits are the sum of those rows; without it only the
length-k suffix is used. Everything GRPO needs is analytic: each active row
receives d log pi(v) / d row = onehot(v) - softmax(logits).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Sequence

import numpy as np

from .errors import CheckpointError, ConfigError

SparseGrad = dict[int, np.ndarray]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_PAD = -1


def context_id(window: Sequence[int], n_contexts: int) -> int:
    h = _FNV_OFFSET ^ len(window)
    for t in window:
        h ^= (int(t) + 2) & _MASK64
        h = (h * _FNV_PRIME) & _MASK64
    return h % n_contexts


@dataclass(frozen=True)
class TokenSeq:
    """A generated continuation. ``terminated`` means EOS or a stop token
    was emitted; a sequence that ran into ``max_len`` first is truncated."""

    tokens: tuple[int, ...]
    terminated: bool = False

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def truncated(self) -> bool:
        return not self.terminated


@dataclass
class PolicyParams:
    theta: np.ndarray
    k: int = 3
    eos_id: int | None = None
    vocab_digest: str = ""
    meta: dict = field(default_factory=dict, compare=False)
    backoff: bool = True

    def __post_init__(self) -> None:
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise ConfigError("theta must be a (contexts, tokens) table")
        if self.k < 1:
            raise ConfigError("context order k must be >= 1")
        if not np.all(np.isfinite(self.theta)):
            raise ConfigError("theta contains non-finite entries")

    @classmethod
    def zeros(
        cls, n_tokens: int, n_contexts: int = 4096, k: int = 3,
        eos_id: int | None = None, vocab_digest: str = "", backoff: bool = True,
    ) -> PolicyParams:
        return cls(np.zeros((n_contexts, n_tokens)), k, eos_id, vocab_digest, backoff=backoff)

    @classmethod
    def for_vocab(cls, vocab, n_contexts: int = 4096, k: int = 3, backoff: bool = True) -> PolicyParams:
        return cls.zeros(len(vocab), n_contexts, k, vocab.eos_id, vocab.digest, backoff)

    @property
    def n_contexts(self) -> int:
        return self.theta.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.theta.shape[1]

    def copy(self) -> PolicyParams:
        return self.with_theta(self.theta.copy())

    def with_theta(self, theta: np.ndarray) -> PolicyParams:
        return PolicyParams(theta, self.k, self.eos_id, self.vocab_digest, dict(self.meta), self.backoff)

    def compatible(self, other: PolicyParams) -> bool:
        return (
            self.theta.shape == other.theta.shape
            and self.k == other.k
            and self.backoff == other.backoff
            and self.eos_id == other.eos_id
            and self.vocab_digest == other.vocab_digest
        )

    def ctx(self, history: Sequence[int]) -> tuple[int, ...]:
        """Active bucket ids for the next token after ``history``."""
        window = list(history[-self.k:])
        if len(window) < self.k:
            window = [_PAD] * (self.k - len(window)) + window
        if not self.backoff:
            return (context_id(window, self.n_contexts),)
        return tuple(context_id(window[self.k - n:], self.n_contexts) for n in range(1, self.k + 1))

    def logits(self, history: Sequence[int]) -> np.ndarray:
        return self.theta[list(self.ctx(history))].sum(axis=0)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def next_token_distribution(params: PolicyParams, context: Sequence[int]) -> np.ndarray:
    return _softmax(params.logits(context))


def visited_contexts(
    params: PolicyParams, prompt: Sequence[int], seq: Sequence[int]
) -> list[tuple[int, ...]]:
    """Active bucket ids at each generation step of ``seq``."""
    history = list(prompt)
    out = []
    for t in seq:
        out.append(params.ctx(history))
        history.append(t)
    return out


def _tokens(seq) -> tuple[int, ...]:
    return seq.tokens if isinstance(seq, TokenSeq) else tuple(seq)


def token_logprobs(params: PolicyParams, prompt: Sequence[int], seq) -> np.ndarray:
    """Per-step log pi(o_t | context_t) at temperature 1."""
    toks = _tokens(seq)
    if not toks:
        return np.zeros(0)
    rows = visited_contexts(params, prompt, toks)
    logp = _log_softmax(params.theta[rows].sum(axis=1))
    return logp[np.arange(len(toks)), list(toks)]


def sequence_logprob(params: PolicyParams, prompt: Sequence[int], seq) -> float:
    return float(token_logprobs(params, prompt, seq).sum())


def accumulate(acc: SparseGrad, grad: SparseGrad, scale: float = 1.0) -> SparseGrad:
    for row, g in grad.items():
        if row in acc:
            acc[row] = acc[row] + scale * g
        else:
            acc[row] = scale * g
    return acc


def weighted_logprob_gradient(
    params: PolicyParams, prompt: Sequence[int], seq, weights: Sequence[float] | None = None
) -> SparseGrad:
    """sum_t w_t * grad log pi(o_t | context_t); ``weights=None`` means all ones."""
    toks = _tokens(seq)
    grad: SparseGrad = {}
    if not toks:
        return grad
    rows = visited_contexts(params, prompt, toks)
    probs = _softmax(params.theta[rows].sum(axis=1))
    for t, (active, tok) in enumerate(zip(rows, toks)):
        w = 1.0 if weights is None else float(weights[t])
        g = -w * probs[t]
        g[tok] += w
        for row in active:
            if row in grad:
                grad[row] = grad[row] + g
            else:
                grad[row] = g.copy()
    return grad


def logprob_gradient(params: PolicyParams, prompt: Sequence[int], seq) -> SparseGrad:
    return weighted_logprob_gradient(params, prompt, seq)


def sample_sequence(
    params: PolicyParams,
    prompt: Sequence[int],
    temperature: float = 1.0,
    max_len: int = 16,
    rng_seed: int | np.random.Generator | None = 0,
    stop_ids: Collection[int] = (),
) -> tuple[TokenSeq, float]:
    """Autoregressive sample; temperature 0 is greedy (lowest id wins ties).

    Generation ends after EOS or any token in ``stop_ids`` (the stop token is
    kept in the sequence). The returned log-probability is always the
    temperature-1 policy's own measure of the sampled tokens.
    """
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    if temperature < 0:
        raise ConfigError("temperature must be >= 0")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    history = list(prompt)
    out: list[int] = []
    logprob = 0.0
    terminated = False
    for _ in range(max_len):
        logits = params.logits(history)
        logp = _log_softmax(logits)
        if temperature == 0:
            tok = int(np.argmax(logits))
        else:
            cdf = np.cumsum(_softmax(logits / temperature))
            tok = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            tok = min(tok, params.n_tokens - 1)
        logprob += float(logp[tok])
        out.append(tok)
        history.append(tok)
        if tok == params.eos_id or tok in stop_ids:
            terminated = True
            break
    return TokenSeq(tuple(out), terminated), logprob


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"TGRPOCKP"
FORMAT_VERSION = 1


def checkpoint_bytes(params: PolicyParams) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "k": params.k,
        "backoff": params.backoff,
        "n_contexts": params.n_contexts,
        "n_tokens": params.n_tokens,
        "eos_id": params.eos_id,
        "vocab_digest": params.vocab_digest,
        "dtype": "<f8",
        "meta": params.meta,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _MAGIC + struct.pack("<II", FORMAT_VERSION, len(hb)) + hb
    body += params.theta.astype("<f8").tobytes()
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path: str | Path, params: PolicyParams) -> None:
    """Atomic write (temp file in the target directory, then rename)."""
    path = Path(path)
    data = checkpoint_bytes(params)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path, expected_digest: str | None = None) -> PolicyParams:
    data = Path(path).read_bytes()
    if len(data) < len(_MAGIC) + 8 + 32 or not data.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, hlen = struct.unpack_from("<II", body, len(_MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = len(_MAGIC) + 8
    header = json.loads(body[off:off + hlen].decode("utf-8"))
    if expected_digest is not None and header["vocab_digest"] != expected_digest:
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    theta = np.frombuffer(body[off + hlen:], dtype="<f8")
    shape = (header["n_contexts"], header["n_tokens"])
    if theta.size != shape[0] * shape[1]:
        raise CheckpointError(f"{path}: payload size does not match header")
    return PolicyParams(
        theta.reshape(shape).astype(np.float64),
        header["k"], header["eos_id"], header["vocab_digest"], header.get("meta", {}),
        header.get("backoff", True),
    )
