"""Reference external denoiser for the radio-map toolkit.

Serves grayscale denoising requests over a binary stdio protocol: each
request frame is magic "DNRQ", u32 M, u32 N, f64 sigma (little endian)
followed by M*N float64 samples with m fastest; each response is magic
"DNRS" plus the payload in the same layout.  One request is in flight
at a time and the process is reused across calls.
"""

from .engines import ENGINES, get_engine
from .protocol import read_request, serve_loop, write_response

__all__ = ["ENGINES", "get_engine", "read_request", "serve_loop",
           "write_response"]
