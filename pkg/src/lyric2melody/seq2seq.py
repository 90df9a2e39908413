"""Sequence-to-sequence translator from syllables to note tokens.

Unidirectional stacked LSTM encoder and decoder with additive attention and
input feeding: each decoder step consumes the previous target embedding
concatenated with the previous attention vector, and the attention vector
(tanh of the combined context and decoder state) also produces the
projection logits.  With attention disabled the decoder runs from the
encoder's final states alone and the top hidden state feeds the projection.

Training is teacher-forced cross entropy over <s> ... </s> framed targets,
one sentence per step, plain SGD with global gradient-norm clipping.  The
learning rate halves every epoch after epoch 5.  All randomness (parameter
init, epoch shuffling, dropout) comes from one seeded generator, so a run
is reproducible bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bleu import corpus_bleu
from .corpus import BOS_ID, EOS_ID, ParallelCorpus, Vocabulary
from .errors import LyricMelodyError

ATTENTION_KINDS = ("standard", "none")

#: Epoch after which the learning rate halves every epoch.
LR_HALVE_AFTER_EPOCH = 5

_CHECKPOINT_MAGIC = b"MELCKPT\x00"
_CHECKPOINT_VERSION = 1


class EmptySequence(LyricMelodyError):
    """Encoder or decoder got a zero-length sequence."""


class DivergedLoss(LyricMelodyError):
    """Training produced a non-finite loss or gradient."""


class CorruptCheckpoint(LyricMelodyError):
    """Checkpoint bytes are truncated or not a checkpoint at all."""


class VersionMismatch(LyricMelodyError):
    """Checkpoint was written by an incompatible format version."""


@dataclass
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    num_units: int = 128
    num_layers: int = 4
    attention: str = "standard"
    dropout_keep: float = 0.8
    learning_rate: float = 1.0
    clip_norm: float = 5.0
    max_epochs: int = 10
    steps_per_epoch: int = 1000
    max_decode_len: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.num_units <= 0:
            raise ValueError("num_units must be positive")
        if not 1 <= self.num_layers <= 4:
            raise ValueError("num_layers must be in 1..4")
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}")
        if self.src_vocab_size < 5 or self.tgt_vocab_size < 5:
            raise ValueError("vocab sizes must cover the 4 reserved tokens plus content")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must be in (0, 1]")


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """All learned tensors, uniform(-0.1, 0.1), in canonical name order."""
    u = config.num_units
    d = u  # embedding width equals the cell width

    def uniform(*shape) -> Tensor:
        return Tensor(rng.uniform(-0.1, 0.1, size=shape), requires_grad=True)

    params: dict[str, Tensor] = {
        "src_emb": uniform(config.src_vocab_size, d),
        "tgt_emb": uniform(config.tgt_vocab_size, d),
    }
    for layer in range(config.num_layers):
        d_in = d if layer == 0 else u
        params[f"enc{layer}.W"] = uniform(d_in, 4 * u)
        params[f"enc{layer}.U"] = uniform(u, 4 * u)
        params[f"enc{layer}.b"] = uniform(4 * u)
    dec_in = d + u if config.attention == "standard" else d
    for layer in range(config.num_layers):
        d_in = dec_in if layer == 0 else u
        params[f"dec{layer}.W"] = uniform(d_in, 4 * u)
        params[f"dec{layer}.U"] = uniform(u, 4 * u)
        params[f"dec{layer}.b"] = uniform(4 * u)
    if config.attention == "standard":
        params["att.W_enc"] = uniform(u, u)
        params["att.W_dec"] = uniform(u, u)
        params["att.v"] = uniform(u)
        params["att.W_combine"] = uniform(2 * u, u)
    params["proj.W"] = uniform(u, config.tgt_vocab_size)
    params["proj.b"] = uniform(config.tgt_vocab_size)
    return params


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              W: Tensor, U: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; gate blocks are ordered (input, forget, cell, output)."""
    gates = ad.add(ad.add(ad.matmul(x, W), ad.matmul(h_prev, U)), b)
    i_gate, f_gate, g_cell, o_gate = ad.split4(gates)
    i_gate = ad.sigmoid(i_gate)
    f_gate = ad.sigmoid(f_gate)
    g_cell = ad.tanh(g_cell)
    o_gate = ad.sigmoid(o_gate)
    c = ad.add(ad.mul(f_gate, c_prev), ad.mul(i_gate, g_cell))
    h = ad.mul(o_gate, ad.tanh(c))
    return h, c


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def _dropout(x: Tensor, keep: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or keep >= 1.0:
        return x
    mask = (rng.random(x.shape) < keep).astype(np.float64) / keep
    return ad.mul(x, Tensor(mask))


def _run_stack(x: Tensor, hs: list[Tensor], cs: list[Tensor],
               params: dict[str, Tensor], prefix: str, num_layers: int,
               keep: float, rng: np.random.Generator | None) -> Tensor:
    """Advance every layer of one side by a single time step, in place."""
    for layer in range(num_layers):
        x = _dropout(x, keep, rng)
        h, c = lstm_step(x, hs[layer], cs[layer],
                         params[f"{prefix}{layer}.W"],
                         params[f"{prefix}{layer}.U"],
                         params[f"{prefix}{layer}.b"])
        hs[layer], cs[layer] = h, c
        x = h
    return x


def encode(params: dict[str, Tensor], config: ModelConfig, src_ids: list[int],
           dropout_rng: np.random.Generator | None = None
           ) -> tuple[list[Tensor], list[Tensor], list[Tensor]]:
    """Left-to-right pass; returns top-layer states per position and final stacks."""
    if not src_ids:
        raise EmptySequence("cannot encode an empty source")
    u = config.num_units
    hs = [_zeros((1, u)) for _ in range(config.num_layers)]
    cs = [_zeros((1, u)) for _ in range(config.num_layers)]
    top_states: list[Tensor] = []
    for tok in src_ids:
        x = ad.embedding_gather(params["src_emb"], [tok])
        top = _run_stack(x, hs, cs, params, "enc", config.num_layers,
                         config.dropout_keep, dropout_rng)
        top_states.append(top)
    return top_states, hs, cs


def attend(params: dict[str, Tensor], encoder_states: Tensor,
           decoder_state: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Additive attention.

    Scores every encoder position against the current decoder state, softmaxes
    into weights, averages the encoder states into a context vector, and
    combines context and state into the attention vector that both produces
    the logits and feeds the next decoder input.
    """
    u = decoder_state.shape[-1]
    n_positions = encoder_states.shape[0]
    scores = ad.tanh(ad.add(ad.matmul(encoder_states, params["att.W_enc"]),
                            ad.matmul(decoder_state, params["att.W_dec"])))
    energies = ad.matmul(scores, ad.reshape(params["att.v"], (u, 1)))
    weights = ad.softmax(ad.reshape(energies, (1, n_positions)), axis=-1)
    context = ad.matmul(weights, encoder_states)
    combined = ad.concat([context, decoder_state], axis=-1)
    attn_vector = ad.tanh(ad.matmul(combined, params["att.W_combine"]))
    return weights, context, attn_vector


def sequence_loss(params: dict[str, Tensor], config: ModelConfig,
                  src_ids: list[int], tgt_ids: list[int],
                  dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Teacher-forced mean cross entropy for one sentence pair."""
    if not tgt_ids:
        raise EmptySequence("cannot score an empty target")
    use_attention = config.attention == "standard"
    top_states, hs, cs = encode(params, config, src_ids, dropout_rng)
    encoder_matrix = ad.concat(top_states, axis=0) if use_attention else None

    inputs = [BOS_ID] + list(tgt_ids)
    targets = list(tgt_ids) + [EOS_ID]
    attn_prev = _zeros((1, config.num_units))
    outputs: list[Tensor] = []
    for tok in inputs:
        emb = ad.embedding_gather(params["tgt_emb"], [tok])
        x = ad.concat([emb, attn_prev], axis=-1) if use_attention else emb
        state = _run_stack(x, hs, cs, params, "dec", config.num_layers,
                           config.dropout_keep, dropout_rng)
        if use_attention:
            _, _, attn_vector = attend(params, encoder_matrix, state)
            outputs.append(attn_vector)
            attn_prev = attn_vector
        else:
            outputs.append(state)
    logits = ad.add(ad.matmul(ad.concat(outputs, axis=0), params["proj.W"]),
                    params["proj.b"])
    return ad.cross_entropy(logits, targets)


@dataclass
class DecodeResult:
    token_ids: list[int]
    tokens: list[str]
    attention: list[np.ndarray] = field(default_factory=list)
    terminated_by: str = "eos"


def greedy_decode(params: dict[str, Tensor], config: ModelConfig,
                  src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                  syllables: list[str], max_len: int | None = None) -> DecodeResult:
    """Argmax decoding until </s> or max_len tokens; ties pick the lowest id.

    Pure function of (params, input, max_len): no dropout, no sampling.
    """
    if max_len is None:
        max_len = config.max_decode_len
    src_ids = src_vocab.encode(syllables)
    if not src_ids:
        raise EmptySequence("cannot decode an empty syllable sequence")
    use_attention = config.attention == "standard"
    top_states, hs, cs = encode(params, config, src_ids)
    encoder_matrix = ad.concat(top_states, axis=0) if use_attention else None

    token_ids: list[int] = []
    attention_rows: list[np.ndarray] = []
    attn_prev = _zeros((1, config.num_units))
    prev_id = BOS_ID
    terminated_by = "max_len"
    for _ in range(max_len):
        emb = ad.embedding_gather(params["tgt_emb"], [prev_id])
        x = ad.concat([emb, attn_prev], axis=-1) if use_attention else emb
        state = _run_stack(x, hs, cs, params, "dec", config.num_layers, 1.0, None)
        if use_attention:
            weights, _, attn_vector = attend(params, encoder_matrix, state)
            output = attn_vector
            attn_prev = attn_vector
        else:
            weights = None
            output = state
        logits = ad.add(ad.matmul(output, params["proj.W"]), params["proj.b"])
        next_id = int(np.argmax(logits.data[0]))
        if next_id == EOS_ID:
            terminated_by = "eos"
            break
        token_ids.append(next_id)
        if weights is not None:
            attention_rows.append(weights.data[0].copy())
        prev_id = next_id
    return DecodeResult(token_ids=token_ids,
                        tokens=tgt_vocab.decode(token_ids),
                        attention=attention_rows,
                        terminated_by=terminated_by)


def _clip_gradients(params: dict[str, Tensor], clip_norm: float) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad ** 2).sum())
    norm = float(np.sqrt(total))
    if clip_norm > 0 and norm > clip_norm:
        scale = clip_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def _snapshot(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {name: Tensor(p.data.copy(), requires_grad=True)
            for name, p in params.items()}


def train(train_corpus: ParallelCorpus, dev_corpus: ParallelCorpus,
          config: ModelConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary
          ) -> tuple[dict[str, Tensor], list[dict]]:
    """SGD training loop; returns the best-dev-BLEU parameters and the log.

    The log is a list of records: one per step (epoch, step, loss), one per
    epoch (dev BLEU, learning rate) and a final "best" record.  Identical
    seeds and configs reproduce it exactly.
    """
    if not train_corpus.pairs or not dev_corpus.pairs:
        raise EmptySequence("train and dev corpora must be nonempty")
    rng = np.random.default_rng(config.seed)
    params = init_params(config, rng)

    train_ids = [(src_vocab.encode(p.syllables), tgt_vocab.encode(p.note_tokens))
                 for p in train_corpus.pairs]
    dev_sources = [list(p.syllables) for p in dev_corpus.pairs]
    dev_refs = [list(p.note_tokens) for p in dev_corpus.pairs]

    log: list[dict] = []
    best_bleu = -1.0
    best_epoch = 0
    best_params = _snapshot(params)

    order: list[int] = []
    position = 0
    dropout_rng = rng if config.dropout_keep < 1.0 else None

    for epoch in range(1, config.max_epochs + 1):
        lr = config.learning_rate * 0.5 ** max(0, epoch - LR_HALVE_AFTER_EPOCH)
        epoch_loss = 0.0
        for step in range(1, config.steps_per_epoch + 1):
            if position >= len(order):
                order = list(rng.permutation(len(train_ids)))
                position = 0
            src_ids, tgt_ids = train_ids[order[position]]
            position += 1

            for p in params.values():
                p.zero_grad()
            try:
                loss = sequence_loss(params, config, src_ids, tgt_ids, dropout_rng)
                ad.backward(loss)
            except (ad.NonFiniteValue, ad.NonFiniteGradient) as exc:
                raise DivergedLoss(f"epoch {epoch} step {step}: {exc}") from exc
            _clip_gradients(params, config.clip_norm)
            for p in params.values():
                if p.grad is not None:
                    p.data = p.data - lr * p.grad
            loss_value = loss.item()
            epoch_loss += loss_value
            log.append({"type": "step", "epoch": epoch, "step": step,
                        "loss": loss_value})

        hyps = [greedy_decode(params, config, src_vocab, tgt_vocab, src).tokens
                for src in dev_sources]
        dev_bleu = corpus_bleu(hyps, dev_refs).bleu
        log.append({"type": "epoch", "epoch": epoch, "lr": lr,
                    "mean_loss": epoch_loss / config.steps_per_epoch,
                    "dev_bleu": dev_bleu})
        if dev_bleu > best_bleu:
            best_bleu = dev_bleu
            best_epoch = epoch
            best_params = _snapshot(params)

    log.append({"type": "best", "epoch": best_epoch, "dev_bleu": best_bleu})
    return best_params, log


# ---------------------------------------------------------------------------
# Checkpoints: magic, uint32 version, uint64 JSON-header length, the header
# (config, both vocabularies, tensor manifest), then raw little-endian
# float64 tensor data in manifest order.  Round-trips are bit-identical.

def save_checkpoint(path, params: dict[str, Tensor], config: ModelConfig,
                    src_vocab: Vocabulary, tgt_vocab: Vocabulary):
    header = {
        "config": asdict(config),
        "src_vocab": list(src_vocab.tokens),
        "tgt_vocab": list(tgt_vocab.tokens),
        "tensors": [{"name": name, "shape": list(p.data.shape)}
                    for name, p in params.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", _CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    config: ModelConfig
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_CHECKPOINT_MAGIC) + 12 \
            or not blob.startswith(_CHECKPOINT_MAGIC):
        raise CorruptCheckpoint(f"{path} is not a melody checkpoint")
    offset = len(_CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != _CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint version {version}, expected {_CHECKPOINT_VERSION}")
    (header_len,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    if offset + header_len > len(blob):
        raise CorruptCheckpoint("truncated checkpoint header")
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
        config = ModelConfig(**header["config"])
        src_vocab = Vocabulary(tokens=header["src_vocab"])
        tgt_vocab = Vocabulary(tokens=header["tgt_vocab"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint header: {exc}") from exc
    offset += header_len

    params: dict[str, Tensor] = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise CorruptCheckpoint(f"truncated tensor data for {entry['name']}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        params[entry["name"]] = Tensor(arr.reshape(shape).copy(), requires_grad=True)
        offset += nbytes
    if offset != len(blob):
        raise CorruptCheckpoint("trailing bytes after tensor data")
    return Checkpoint(params=params, config=config,
                      src_vocab=src_vocab, tgt_vocab=tgt_vocab)
