"""Local CDN emulator: loopback TLS edges routing by Host header.

Each edge terminates TLS with a certificate chosen by SNI, then hands the
request to the in-memory origin named by the ``Host`` header. Policies:

* ``Allow`` routes strictly by Host, whatever the SNI was.
* ``EnforceSniHostMatch`` rejects requests whose Host differs from the SNI,
  either with a 421 or by hanging up the TLS session.
* ``SplitProxy`` makes a deterministic subset of a cluster's edges enforce.
"""

from __future__ import annotations

import datetime as dt
import logging
import os
import ssl
import tempfile
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterable, Union

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID

from .names import is_valid_pattern, normalize, san_matches

logger = logging.getLogger(__name__)


# -- certificates -----------------------------------------------------------


@dataclass(frozen=True)
class MintedCert:
    sans: tuple[str, ...]
    cert_pem: str
    key_pem: str

    def covers(self, name: str) -> bool:
        return any(san_matches(name, s) for s in self.sans)


def mint_certificate(sans: Iterable[str], days: int = 30) -> MintedCert:
    """Self-signed certificate whose SAN list is exactly ``sans``."""
    names = [normalize(s) for s in sans]
    if not names:
        raise ValueError("a certificate needs at least one SAN")
    for name in names:
        if not is_valid_pattern(name):
            raise ValueError(f"invalid certificate name {name!r}")
    key = ec.generate_private_key(ec.SECP256R1())
    subject = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, names[0])])
    now = dt.datetime.now(dt.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(subject)
        .issuer_name(subject)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - dt.timedelta(days=1))
        .not_valid_after(now + dt.timedelta(days=days))
        .add_extension(x509.SubjectAlternativeName([x509.DNSName(n) for n in names]), critical=False)
        # Acts as its own trust anchor in the test trust store.
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .add_extension(
            x509.KeyUsage(
                digital_signature=True, content_commitment=False, key_encipherment=False,
                data_encipherment=False, key_agreement=False, key_cert_sign=True,
                crl_sign=False, encipher_only=False, decipher_only=False,
            ),
            critical=True,
        )
        .sign(key, hashes.SHA256())
    )
    cert_pem = cert.public_bytes(serialization.Encoding.PEM).decode()
    key_pem = key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
    ).decode()
    return MintedCert(tuple(names), cert_pem, key_pem)


def sans_from_der(der: bytes) -> list[str]:
    cert = x509.load_der_x509_certificate(der)
    try:
        ext = cert.extensions.get_extension_for_class(x509.SubjectAlternativeName)
    except x509.ExtensionNotFound:
        return []
    return [n.lower() for n in ext.value.get_values_for_type(x509.DNSName)]


def trust_bundle(certs: Iterable[MintedCert]) -> str:
    """PEM bundle to hand to a client as extra trust anchors."""
    return "".join(c.cert_pem for c in certs)


# -- policies ---------------------------------------------------------------


@dataclass(frozen=True)
class Allow:
    pass


@dataclass(frozen=True)
class EnforceSniHostMatch:
    response: str = "status-421"  # or "tls_close"

    def __post_init__(self) -> None:
        if self.response not in ("status-421", "tls_close"):
            raise ValueError(f"unknown enforcement response {self.response!r}")


@dataclass(frozen=True)
class SplitProxy:
    enforcing_fraction: float = 0.5
    response: str = "status-421"

    def __post_init__(self) -> None:
        if not 0.0 <= self.enforcing_fraction <= 1.0:
            raise ValueError("enforcing_fraction must be within [0, 1]")


EdgePolicy = Union[Allow, EnforceSniHostMatch, SplitProxy]


def split_assignment(enforcing_fraction: float, n_edges: int) -> list[bool]:
    """Which edges of a cluster enforce: the last round(f * n) by index."""
    n_enforcing = int(enforcing_fraction * n_edges + 0.5)
    return [i >= n_edges - n_enforcing for i in range(n_edges)]


def edge_enforces(policy: EdgePolicy, index: int = 0, n_edges: int = 1) -> bool:
    if isinstance(policy, Allow):
        return False
    if isinstance(policy, EnforceSniHostMatch):
        return True
    return split_assignment(policy.enforcing_fraction, n_edges)[index]


def enforcement_response(policy: EdgePolicy) -> str:
    return getattr(policy, "response", "status-421")


def decide(enforcing: bool, response: str, sni: str | None, host: str, known_hosts: Iterable[str]) -> str:
    """Routing decision of an edge for one request. Pure."""
    if enforcing and (sni or "").lower() != host.lower():
        return "reject_close" if response == "tls_close" else "reject_421"
    if host.lower() not in {h.lower() for h in known_hosts}:
        return "no_origin"
    return "forward"


# -- origins and edges ------------------------------------------------------


@dataclass(frozen=True)
class Route:
    status: int
    content_type: str
    body: bytes


@dataclass
class MockOrigin:
    host: str
    routes: dict[str, Route] = field(default_factory=dict)

    def add(self, path: str, body: bytes | str, content_type: str = "application/octet-stream", status: int = 200) -> "MockOrigin":
        if isinstance(body, str):
            body = body.encode()
        self.routes[path] = Route(status, content_type, body)
        return self


@dataclass(frozen=True)
class LogEntry:
    sni: str | None
    host: str
    path: str
    decision: str
    status: int | None
    edge: int


class _EdgeServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 64

    def __init__(self, edge: "EdgeHandle", tls: ssl.SSLContext):
        self.edge = edge
        self.tls = tls
        super().__init__(("127.0.0.1", 0), _EdgeRequestHandler)

    def finish_request(self, request, client_address):
        request.settimeout(10)
        try:
            tls_sock = self.tls.wrap_socket(request, server_side=True)
        except (ssl.SSLError, OSError):
            # Handshake-only clients (certificate fetchers) and aborted probes.
            return
        try:
            self.RequestHandlerClass(tls_sock, client_address, self)
        finally:
            try:
                tls_sock.close()
            except OSError:
                pass

    def handle_error(self, request, client_address):
        logger.debug("edge %s: error serving %s", self.edge.index, client_address, exc_info=True)


class _EdgeRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: _EdgeServer

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass

    def version_string(self) -> str:
        return f"mockcdn/edge-{self.server.edge.index}"

    def do_GET(self) -> None:
        edge = self.server.edge
        sni = getattr(self.request, "_mock_sni", None)
        host = (self.headers.get("Host") or "").split(":")[0].strip().lower()
        path = self.path
        decision = decide(edge.enforcing, enforcement_response(edge.policy), sni, host, edge.origins)
        self.close_connection = True
        if decision == "reject_close":
            edge._record(LogEntry(sni, host, path, decision, None, edge.index))
            return
        if decision == "reject_421":
            self._reply(421, "text/plain", b"misdirected request\n")
            edge._record(LogEntry(sni, host, path, decision, 421, edge.index))
            return
        origin = edge.origins.get(host)
        route = None
        if origin is not None:
            route = origin.routes.get(path) or origin.routes.get(path.split("?", 1)[0])
        if route is None:
            self._reply(404, "text/plain", b"not found\n")
            edge._record(LogEntry(sni, host, path, decision, 404, edge.index))
            return
        if 300 <= route.status < 400:
            self.send_response(route.status)
            self.send_header("Location", route.body.decode())
            self.send_header("Content-Length", "0")
            self.send_header("Connection", "close")
            self.end_headers()
        else:
            self._reply(route.status, route.content_type, route.body)
        edge._record(LogEntry(sni, host, path, decision, route.status, edge.index))

    def _reply(self, status: int, content_type: str, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Via", f"1.1 mockcdn-edge-{self.server.edge.index}")
        self.send_header("Connection", "close")
        self.end_headers()
        self.wfile.write(body)


@dataclass
class EdgeHandle:
    address: tuple[str, int]
    policy: EdgePolicy
    hosted: frozenset[str]
    cert_sans: tuple[str, ...]
    index: int
    enforcing: bool
    origins: dict[str, MockOrigin]
    _log: list[LogEntry] = field(default_factory=list, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _server: _EdgeServer | None = field(default=None, repr=False)

    @property
    def address_str(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def _record(self, entry: LogEntry) -> None:
        with self._lock:
            self._log.append(entry)

    def clear_log(self) -> None:
        with self._lock:
            self._log.clear()

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> "EdgeHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def _server_context(cert: MintedCert) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.set_alpn_protocols(["http/1.1"])
    with tempfile.TemporaryDirectory() as tmp:
        cert_path = os.path.join(tmp, "cert.pem")
        key_path = os.path.join(tmp, "key.pem")
        with open(cert_path, "w") as fh:
            fh.write(cert.cert_pem)
        with open(key_path, "w") as fh:
            fh.write(cert.key_pem)
        ctx.load_cert_chain(cert_path, key_path)
    return ctx


def spawn_edge(
    policy: EdgePolicy,
    origins: Iterable[MockOrigin],
    certs: MintedCert | Iterable[MintedCert],
    index: int = 0,
    n_edges: int = 1,
) -> EdgeHandle:
    """Start a loopback TLS edge serving ``origins``.

    ``certs`` may be one certificate or several; the one covering the client's
    SNI is presented, the first one otherwise.
    """
    cert_list = [certs] if isinstance(certs, MintedCert) else list(certs)
    if not cert_list:
        raise ValueError("an edge needs at least one certificate")
    origin_map = {normalize(o.host): o for o in origins}
    for host in origin_map:
        if not any(c.covers(host) for c in cert_list):
            raise ValueError(f"origin host {host} is not covered by any certificate SAN")

    contexts = [(c, _server_context(c)) for c in cert_list]
    base = contexts[0][1]

    def pick_cert(sslobj, server_name, _ctx):
        sslobj._mock_sni = server_name.lower() if server_name else None
        if server_name:
            for cert, ctx in contexts:
                if cert.covers(server_name):
                    sslobj.context = ctx
                    break

    base.sni_callback = pick_cert
    sans = tuple(dict.fromkeys(s for c in cert_list for s in c.sans))
    handle = EdgeHandle(
        address=("127.0.0.1", 0),
        policy=policy,
        hosted=frozenset(origin_map),
        cert_sans=sans,
        index=index,
        enforcing=edge_enforces(policy, index, n_edges),
        origins=origin_map,
    )
    server = _EdgeServer(handle, base)
    handle.address = server.server_address[:2]
    handle._server = server
    threading.Thread(target=server.serve_forever, name=f"mock-edge-{index}", daemon=True).start()
    return handle


def request_log(edge: EdgeHandle) -> list[LogEntry]:
    """Snapshot of the edge's in-order request log."""
    with edge._lock:
        return list(edge._log)


@dataclass
class MockCdn:
    """A cluster of edges sharing origins and certificates."""

    edges: list[EdgeHandle]
    certs: list[MintedCert]

    @property
    def trust_pem(self) -> str:
        return trust_bundle(self.certs)

    def log(self) -> list[LogEntry]:
        return [entry for edge in self.edges for entry in request_log(edge)]

    def clear_logs(self) -> None:
        for edge in self.edges:
            edge.clear_log()

    def stop(self) -> None:
        for edge in self.edges:
            edge.stop()

    def __enter__(self) -> "MockCdn":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def spawn_cluster(
    policy: EdgePolicy,
    origins: Iterable[MockOrigin],
    certs: Iterable[MintedCert],
    n_edges: int = 1,
) -> MockCdn:
    origins = list(origins)
    certs = list(certs)
    edges = [spawn_edge(policy, origins, certs, index=i, n_edges=n_edges) for i in range(n_edges)]
    return MockCdn(edges, certs)
