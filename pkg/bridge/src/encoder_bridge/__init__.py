"""HTTP bridge that serves pooled features from a TorchScript acoustic encoder."""
from .service import (
    ENCODER_SAMPLE_RATE_HZ,
    AudioDecodeError,
    BridgeConfig,
    BridgeError,
    ConfigError,
    EncoderContractError,
    LoadedEncoder,
    Pooling,
    create_app,
    decode_wav,
    load_encoder,
    serve_embeddings,
)

__version__ = "0.1.0"

__all__ = [
    "ENCODER_SAMPLE_RATE_HZ",
    "AudioDecodeError",
    "BridgeConfig",
    "BridgeError",
    "ConfigError",
    "EncoderContractError",
    "LoadedEncoder",
    "Pooling",
    "create_app",
    "decode_wav",
    "load_encoder",
    "serve_embeddings",
    "__version__",
]
