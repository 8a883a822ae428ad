from __future__ import annotations

from pathlib import Path

import pytest

from cdnfront.mockcdn import Allow, MockOrigin, mint_certificate, spawn_cluster
from cdnfront.net import Resolver, make_tls_context

FIXTURES = Path(__file__).parent / "fixtures"
SITE_DIR = FIXTURES / "site"

_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".css": "text/css",
    ".js": "application/javascript",
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".webp": "image/webp",
    ".ico": "image/x-icon",
    ".woff2": "font/woff2",
    ".pdf": "application/pdf",
    ".txt": "text/plain",
}

# criterion number -> (passed, description); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def load_site_origins(root: Path = SITE_DIR) -> list[MockOrigin]:
    """Each top-level directory is a host; ``x/index.html`` is served at ``x/``."""
    origins = []
    for host_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        origin = MockOrigin(host_dir.name)
        for f in sorted(p for p in host_dir.rglob("*") if p.is_file()):
            rel = f.relative_to(host_dir).as_posix()
            path = "/" + rel
            if rel == "index.html" or rel.endswith("/index.html"):
                path = path[: -len("index.html")]
            origin.add(path, f.read_bytes(), _TYPES.get(f.suffix, "application/octet-stream"))
        origins.append(origin)
    return origins


@pytest.fixture
def fixture_site():
    """The bundled shop.test site behind one Allow edge."""
    origins = load_site_origins()
    certs = [mint_certificate(["shop.test", "*.shop.test"])]
    cdn = spawn_cluster(Allow(), origins, certs)
    resolver = Resolver({o.host: cdn.edges[0].address_str for o in origins}, use_system=False)
    yield cdn, resolver, make_tls_context(cadata=cdn.trust_pem)
    cdn.stop()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {text}")
