import io
import wave

import numpy as np


def wav_bytes(rate: int = 16000, seconds: float = 1.0, seed: int = 0,
              channels: int = 1, sampwidth: int = 2) -> bytes:
    rng = np.random.default_rng(seed)
    n = int(rate * seconds)
    x = 0.3 * rng.standard_normal((n, channels)).squeeze()
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(sampwidth)
        w.setframerate(rate)
        if sampwidth == 2:
            pcm = (x * 32767).clip(-32768, 32767).astype("<i2")
        elif sampwidth == 1:
            pcm = ((x * 127) + 128).clip(0, 255).astype(np.uint8)
        else:
            raise ValueError(sampwidth)
        w.writeframes(pcm.tobytes())
    return buf.getvalue()
