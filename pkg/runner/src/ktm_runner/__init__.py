"""Single-shot runner for candidate transfer-model snippets.

Invoked as ``ktm-runner <source-path>`` (or ``python -m ktm_runner``): reads
one framed request from stdin, loads the snippet's ``LLMTransfer`` function,
calls it once, and writes exactly one framed response to stdout.  Anything
the snippet prints is redirected to stderr, so stdout carries nothing but
the response frame.

Framing: a decimal byte count on its own line, then that many bytes of UTF-8
JSON, then a newline.  Request fields: ``protocol_version``, ``nt``,
``seed``, and ``tasks`` (each with ``population``, ``fitness``, ``lower``,
``upper``).  Response: ``{"transfers": [[[float]]]}``.  Errors are reported
on stderr as one JSON line ``{"code": ..., "message": ...}`` with exit codes
2 (snippet does not compile), 3 (snippet raised or returned garbage), and
4 (malformed request).
"""

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_COMPILE_ERROR = 2
EXIT_RUNTIME_ERROR = 3
EXIT_BAD_REQUEST = 4
