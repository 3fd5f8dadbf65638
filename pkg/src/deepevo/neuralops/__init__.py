from .checkpoint import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
    Model,
    dumps,
    load_checkpoint,
    loads,
    read_header,
    register_model,
    save_checkpoint,
)
from .layers import (
    EmbeddingTable,
    LstmParams,
    ParamGroup,
    PointerParams,
    embed,
    lstm_encode,
    lstm_step,
    pointer_scores,
)
from .transformer import TransformerParams, mlm_logits, mlm_logits_at, transformer_encode

__all__ = [
    "CheckpointError", "CheckpointShapeError", "CheckpointVersionError",
    "CorruptCheckpointError", "EmbeddingTable", "LstmParams", "Model", "ParamGroup",
    "PointerParams", "TransformerParams", "dumps", "embed", "load_checkpoint", "loads",
    "lstm_encode", "lstm_step", "mlm_logits", "pointer_scores", "read_header",
    "mlm_logits_at", "register_model", "save_checkpoint", "transformer_encode",
]
