"""HTTPS plumbing with DNS resolution, TLS SNI and Host header decoupled.

Everything that touches the network goes through :func:`https_get`, which
connects to whatever address the resolver returns for ``resolve_domain``,
negotiates TLS with ``sni`` and sends ``Host: host_header``.
"""

from __future__ import annotations

import hashlib
import http.client
import socket
import ssl
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping

DEFAULT_TIMEOUT = 15.0
MAX_BODY = 16 * 1024 * 1024
USER_AGENT = "cdnfront/0.1 (research measurement)"


class ResolutionError(OSError):
    pass


def hash_body(body: bytes) -> str:
    """Lowercase hex SHA1 of the exact body bytes."""
    return hashlib.sha1(body).hexdigest()


def parse_address(value: str, default_port: int = 443) -> tuple[str, int]:
    """``ip``, ``ip:port`` or ``[v6]:port`` -> (host, port)."""
    value = value.strip()
    if value.startswith("["):
        host, _, rest = value[1:].partition("]")
        return host, int(rest[1:]) if rest.startswith(":") else default_port
    if value.count(":") == 1:
        host, port = value.split(":")
        return host, int(port)
    return value, default_port


class Resolver:
    """Hosts-file style overrides consulted before system DNS."""

    def __init__(self, overrides: Mapping[str, str] | None = None, use_system: bool = True):
        self.overrides = {k.lower().rstrip("."): parse_address(v) for k, v in (overrides or {}).items()}
        self.use_system = use_system

    @classmethod
    def from_pairs(cls, pairs: list[str], use_system: bool = True) -> "Resolver":
        overrides = {}
        for pair in pairs:
            name, sep, addr = pair.partition("=")
            if not sep:
                raise ValueError(f"resolver override must look like host=addr, got {pair!r}")
            overrides[name.strip()] = addr.strip()
        return cls(overrides, use_system)

    def resolve(self, name: str, port: int = 443) -> tuple[str, int]:
        key = name.lower().rstrip(".")
        if key in self.overrides:
            return self.overrides[key]
        if not self.use_system:
            raise ResolutionError(f"no override for {name} and system DNS disabled")
        try:
            infos = socket.getaddrinfo(key, port, type=socket.SOCK_STREAM)
        except socket.gaierror as exc:
            raise ResolutionError(f"cannot resolve {name}: {exc}") from exc
        family, _, _, _, sockaddr = infos[0]
        return sockaddr[0], sockaddr[1]


class Pacer:
    """Minimum spacing between request starts to the same endpoint."""

    def __init__(self, min_interval: float = 0.5):
        self.min_interval = min_interval
        self._last: dict[object, float] = {}
        self._lock = threading.Lock()

    def wait(self, key: object) -> None:
        if self.min_interval <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                last = self._last.get(key)
                if last is None or now - last >= self.min_interval:
                    self._last[key] = now
                    return
                delay = self.min_interval - (now - last)
            time.sleep(delay)


def make_tls_context(cadata: str | None = None, cafile: str | None = None, verify: bool = True) -> ssl.SSLContext:
    ctx = ssl.create_default_context()
    if cafile:
        ctx.load_verify_locations(cafile=cafile)
    if cadata:
        ctx.load_verify_locations(cadata=cadata)
    if not verify:
        ctx.check_hostname = False
        ctx.verify_mode = ssl.CERT_NONE
    # Host semantics differ under h2 (:authority); stay on HTTP/1.1.
    ctx.set_alpn_protocols(["http/1.1"])
    return ctx


class _PinnedHTTPSConnection(http.client.HTTPSConnection):
    """HTTPS connection to a fixed address with an independent SNI."""

    def __init__(self, address: tuple[str, int], sni: str, context: ssl.SSLContext, timeout: float):
        super().__init__(address[0], address[1], timeout=timeout, context=context)
        self._address = address
        self._sni = sni
        self.tls_established = False
        self.peer: str | None = None

    def connect(self) -> None:
        sock = socket.create_connection(self._address, self.timeout)
        self.sock = self._context.wrap_socket(sock, server_hostname=self._sni)
        self.tls_established = True
        host, port = self.sock.getpeername()[:2]
        self.peer = f"{host}:{port}"


@dataclass
class FetchResult:
    transport: str  # ok | tls_error | conn_error | timeout
    status: int | None = None
    body: bytes | None = None
    headers: dict[str, str] = field(default_factory=dict)
    peer: str | None = None
    error: str | None = None

    @property
    def served_by(self) -> str | None:
        parts = []
        if self.peer:
            parts.append(f"addr={self.peer}")
        for name in ("server", "via"):
            if self.headers.get(name):
                parts.append(f"{name}={self.headers[name]}")
        return ";".join(parts) or None


def https_get(
    path: str,
    resolve_domain: str,
    sni: str,
    host_header: str,
    resolver: Resolver,
    context: ssl.SSLContext,
    timeout: float = DEFAULT_TIMEOUT,
    pacer: Pacer | None = None,
) -> FetchResult:
    """One HTTP/1.1 GET. Transport failures come back as data, never raised."""
    try:
        address = resolver.resolve(resolve_domain)
    except (ResolutionError, OSError) as exc:
        return FetchResult("conn_error", error=f"dns: {exc}")
    if pacer is not None:
        pacer.wait(address)
    conn = _PinnedHTTPSConnection(address, sni, context, timeout)
    try:
        conn.request(
            "GET",
            path or "/",
            headers={
                "Host": host_header,
                "User-Agent": USER_AGENT,
                "Accept": "*/*",
                "Accept-Encoding": "identity",
                "Connection": "close",
            },
        )
        resp = conn.getresponse()
        body = resp.read(MAX_BODY)
        headers = {k.lower(): v for k, v in resp.getheaders()}
        return FetchResult("ok", resp.status, body, headers, conn.peer)
    except (socket.timeout, TimeoutError) as exc:
        return FetchResult("timeout", peer=conn.peer, error=str(exc) or "timed out")
    except ssl.SSLError as exc:
        return FetchResult("tls_error", peer=conn.peer, error=str(exc))
    except (http.client.HTTPException, OSError) as exc:
        # Peer hung up on an established TLS session without answering.
        kind = "tls_error" if conn.tls_established else "conn_error"
        return FetchResult(kind, peer=conn.peer, error=f"{type(exc).__name__}: {exc}")
    finally:
        conn.close()
