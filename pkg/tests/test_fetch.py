import hashlib
import io
import zipfile

import pytest

from fairmatch import fetch


def _zip(member: str, data: bytes) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as z:
        z.writestr(member, data)
    return buf.getvalue()


def test_falls_back_to_next_source_and_checks_digest():
    payload = b"a,b\n1,2\n"
    raw = fetch.RawFile(
        "x.csv",
        hashlib.sha256(payload).hexdigest(),
        (fetch.Source("https://down.example/x.csv"), fetch.Source("https://wheel.example/w.whl", "pkg/x.csv")),
    )
    calls = []

    def opener(url, timeout):
        calls.append(url)
        if "down" in url:
            raise OSError("unreachable")
        return _zip("pkg/x.csv", payload)

    assert fetch.fetch_raw(raw, opener=opener) == payload
    assert calls == ["https://down.example/x.csv", "https://wheel.example/w.whl"]


def test_digest_mismatch_rejected():
    raw = fetch.RawFile("x.csv", "0" * 64, (fetch.Source("https://a.example/x.csv"),))
    with pytest.raises(RuntimeError, match="sha256"):
        fetch.fetch_raw(raw, opener=lambda url, timeout: b"tampered")


def test_unpinned_digest_accepted():
    raw = fetch.RawFile("x.csv", None, (fetch.Source("https://a.example/x.csv"),))
    assert fetch.fetch_raw(raw, opener=lambda url, timeout: b"ok") == b"ok"


def test_meps_is_manual_and_unknown_rejected(tmp_path):
    with pytest.raises(RuntimeError, match="MEPS"):
        fetch.fetch("meps", tmp_path)
    with pytest.raises(KeyError):
        fetch.fetch("nosuch", tmp_path)


def test_existing_file_not_refetched(tmp_path):
    (tmp_path / "german.csv").write_text("cached")
    assert fetch.fetch("german", tmp_path).read_text() == "cached"
