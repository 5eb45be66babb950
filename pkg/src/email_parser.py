#!/usr/bin/env python3
"""
E-mail ingestion for the PDENFF mail filter

Turns raw bytes, single .eml files, directories of .eml files and mbox
archives into EmailMessage values. Parsing is total: any byte sequence yields
an EmailMessage, and problems are reported through ``diagnostics`` instead of
exceptions.
"""

import hashlib
import ipaddress
import mailbox
import re
from dataclasses import dataclass, field
from email import policy
from email.header import decode_header, make_header
from email.message import Message
from email.parser import BytesParser
from email.utils import getaddresses, parseaddr
from pathlib import Path
from typing import BinaryIO, Iterator, List, Optional, Tuple, Union
from urllib.parse import urlsplit

from bs4 import BeautifulSoup

from src.exceptions import CorpusError
from src.logger import get_logger

logger = get_logger(__name__)

_WEB_SCHEMES = ("http", "https")
_URL_IN_TEXT = re.compile(r"https?://[^\s<>\"']+", re.IGNORECASE)
_TRAILING_PUNCTUATION = ".,;:!?)]}'\""
_HEX_ESCAPE = re.compile(r"%[0-9A-Fa-f]{2}")
_MESSAGE_ID_DOMAIN = re.compile(r"@([^>\s@]+)")
_FOLDING = re.compile(r"\s*\r?\n\s*")


@dataclass(frozen=True)
class ParsedAddress:
    """Display name + addr-spec of a mailbox header"""
    display_name: str
    addr_spec: str

    @property
    def domain(self) -> Optional[str]:
        return domain_of(self.addr_spec)


@dataclass(frozen=True)
class ExtractedUrl:
    """A web link found in the message body"""
    href: str
    anchor_text: str = ""
    host: str = ""
    host_is_ip: bool = False
    port: Optional[int] = None
    dot_count_in_host: int = 0
    contains_at_sign: bool = False
    contains_hex_escape: bool = False

    @classmethod
    def from_href(cls, href: str, anchor_text: str = "") -> "ExtractedUrl":
        host, port, bracketed = "", None, False
        try:
            parts = urlsplit(href)
            host = parts.hostname or ""
            bracketed = "[" in parts.netloc
            try:
                port = parts.port
            except ValueError:
                port = None
        except ValueError:
            host = ""

        return cls(
            href=href,
            anchor_text=anchor_text,
            host=host,
            host_is_ip=_is_ip_host(host, bracketed),
            port=port,
            dot_count_in_host=host.count("."),
            contains_at_sign="@" in href,
            contains_hex_escape=bool(_HEX_ESCAPE.search(href)),
        )


@dataclass(frozen=True)
class EmailMessage:
    """Parsed e-mail as seen by feature extraction"""
    message_id: Optional[str] = None
    from_addr: Optional[ParsedAddress] = None
    reply_to_addr: Optional[ParsedAddress] = None
    return_path: Optional[ParsedAddress] = None
    subject: str = ""
    sender_domain: Optional[str] = None
    reply_to_domain: Optional[str] = None
    message_id_domain: Optional[str] = None
    to_header: Optional[str] = None
    recipients: Tuple[str, ...] = ()
    has_thread_headers: bool = False
    body_text: str = ""
    body_html: Optional[str] = None
    urls: Tuple[ExtractedUrl, ...] = ()
    has_html_part: bool = False
    has_attachment: bool = False
    raw_size_bytes: int = 0
    diagnostics: Tuple[str, ...] = field(default=(), compare=False)


def domain_of(addr: Optional[str]) -> Optional[str]:
    """Lowercase domain of an addr-spec, or None"""
    if not addr or "@" not in addr:
        return None
    domain = addr.rsplit("@", 1)[1].strip().strip("<>[]. ").lower()
    return domain or None


def _is_ip_host(host: str, bracketed: bool) -> bool:
    if not host:
        return False
    try:
        if bracketed:
            ipaddress.IPv6Address(host)
        else:
            ipaddress.IPv4Address(host)
        return True
    except ValueError:
        return False


def _is_web_url(href: str) -> bool:
    scheme, _, rest = href.partition(":")
    return bool(rest) and scheme.strip().lower() in _WEB_SCHEMES


def _clean_text(value: str) -> str:
    """Replace surrogate escapes left by the byte parser"""
    try:
        return value.encode("utf-8", "surrogateescape").decode("utf-8", "replace")
    except UnicodeEncodeError:
        return value.encode("utf-8", "replace").decode("utf-8", "replace")


def _lossy_decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        return data.decode("latin-1")


def _header_text(msg: Message, name: str, diagnostics: List[str]) -> Optional[str]:
    try:
        value = msg.get(name)
    except Exception as e:
        diagnostics.append(f"unreadable {name} header: {e}")
        return None
    if value is None:
        return None

    raw = _clean_text(str(value))
    try:
        decoded = str(make_header(decode_header(raw)))
    except Exception as e:
        diagnostics.append(f"undecodable {name} header: {e}")
        decoded = raw
    return _FOLDING.sub(" ", _clean_text(decoded)).strip()


def _address(value: Optional[str]) -> Optional[ParsedAddress]:
    if not value:
        return None
    name, addr = parseaddr(value)
    if not addr:
        return None
    return ParsedAddress(display_name=name, addr_spec=addr)


def _decode_part(part: Message, diagnostics: List[str]) -> str:
    payload = part.get_payload(decode=True)
    if payload is None:
        raw = part.get_payload()
        return _clean_text(raw) if isinstance(raw, str) else ""

    charset = part.get_content_charset()
    if charset:
        try:
            return payload.decode(charset)
        except (LookupError, UnicodeDecodeError) as e:
            diagnostics.append(f"charset {charset} failed ({type(e).__name__}), decoded as latin-1")
            return payload.decode("latin-1")
    return _lossy_decode(payload)


def html_to_text(html: str) -> str:
    """Strip markup, drop scripts and styles, keep word boundaries"""
    text, _ = _digest_html(html)
    return text


def _digest_html(html: str) -> Tuple[str, List[Tuple[str, str]]]:
    """Return (visible text, [(href, anchor text)]) for an HTML document"""
    try:
        soup = BeautifulSoup(html, "html.parser")
        links = []
        for anchor in soup.find_all("a", href=True):
            href = str(anchor["href"]).strip()
            if _is_web_url(href):
                links.append((href, " ".join(anchor.get_text(" ").split())))
        for tag in soup(["script", "style"]):
            tag.decompose()
        return " ".join(soup.get_text(separator=" ").split()), links
    except Exception as e:
        logger.warning(f"HTML parser failed, falling back to tag stripping: {e}")
        text = re.sub(r"(?is)<(script|style).*?</\1>", " ", html)
        text = re.sub(r"<[^>]+>", " ", text)
        return " ".join(text.split()), []


def _text_urls(text: str) -> List[str]:
    urls = []
    for match in _URL_IN_TEXT.finditer(text):
        url = match.group(0).rstrip(_TRAILING_PUNCTUATION)
        if _is_web_url(url):
            urls.append(url)
    return urls


def _body_after_headers(raw_bytes: bytes) -> bytes:
    for separator in (b"\r\n\r\n", b"\n\n"):
        head, sep, tail = raw_bytes.partition(separator)
        if sep:
            return tail
    return raw_bytes


def _parse_body(msg: Message, raw_bytes: bytes, diagnostics: List[str]) -> dict:
    text_parts: List[str] = []
    html_parts: List[str] = []
    has_attachment = False

    try:
        for part in msg.walk():
            if part.is_multipart():
                continue
            content_type = part.get_content_type()
            disposition = str(part.get("Content-Disposition") or "").lower()
            if part.get_filename() or "attachment" in disposition:
                has_attachment = True
                continue
            if content_type == "text/html":
                html_parts.append(_decode_part(part, diagnostics))
            elif content_type.startswith("text/"):
                text_parts.append(_decode_part(part, diagnostics))
            else:
                has_attachment = True
    except Exception as e:
        diagnostics.append(f"malformed MIME structure, body read as plain text: {e}")
        text_parts = [_lossy_decode(_body_after_headers(raw_bytes))]
        html_parts = []
        has_attachment = False

    html_texts: List[str] = []
    anchor_urls: List[ExtractedUrl] = []
    for html in html_parts:
        text, links = _digest_html(html)
        html_texts.append(text)
        anchor_urls.extend(ExtractedUrl.from_href(href, anchor) for href, anchor in links)

    anchor_hrefs = {url.href for url in anchor_urls}
    text_urls = [
        ExtractedUrl.from_href(href)
        for part in text_parts
        for href in _text_urls(part)
        if href not in anchor_hrefs
    ]

    return {
        "body_text": "\n".join(p for p in text_parts + html_texts if p),
        "body_html": "\n".join(html_parts) if html_parts else None,
        "urls": tuple(anchor_urls + text_urls),
        "has_html_part": bool(html_parts),
        "has_attachment": has_attachment,
    }


def _parse_headers(msg: Message, diagnostics: List[str]) -> dict:
    from_addr = _address(_header_text(msg, "From", diagnostics))
    reply_to_addr = _address(_header_text(msg, "Reply-To", diagnostics))
    return_path = _address(_header_text(msg, "Return-Path", diagnostics))
    message_id = _header_text(msg, "Message-ID", diagnostics) or None

    message_id_domain = None
    if message_id:
        match = _MESSAGE_ID_DOMAIN.search(message_id)
        if match:
            message_id_domain = match.group(1).strip(">. ").lower() or None

    to_header = _header_text(msg, "To", diagnostics)
    cc_header = _header_text(msg, "Cc", diagnostics) or ""
    try:
        recipients = tuple(addr for _, addr in getaddresses([to_header or "", cc_header]) if addr)
    except Exception as e:
        diagnostics.append(f"unparseable recipients: {e}")
        recipients = ()

    return {
        "message_id": message_id,
        "from_addr": from_addr,
        "reply_to_addr": reply_to_addr,
        "return_path": return_path,
        "subject": _header_text(msg, "Subject", diagnostics) or "",
        "sender_domain": from_addr.domain if from_addr else None,
        "reply_to_domain": reply_to_addr.domain if reply_to_addr else None,
        "message_id_domain": message_id_domain,
        "to_header": to_header,
        "recipients": recipients,
        "has_thread_headers": bool(
            _header_text(msg, "References", diagnostics) or _header_text(msg, "In-Reply-To", diagnostics)
        ),
    }


def parse_email(raw_bytes: bytes) -> EmailMessage:
    """Parse raw message bytes into an EmailMessage; never raises"""
    raw_bytes = bytes(raw_bytes or b"")
    if not raw_bytes:
        return EmailMessage()

    diagnostics: List[str] = []
    try:
        msg = BytesParser(policy=policy.compat32).parsebytes(raw_bytes)
    except Exception as e:
        diagnostics.append(f"unparseable message, read as plain text: {e}")
        body_text = _lossy_decode(raw_bytes)
        return EmailMessage(
            body_text=body_text,
            urls=tuple(ExtractedUrl.from_href(href) for href in _text_urls(body_text)),
            raw_size_bytes=len(raw_bytes),
            diagnostics=tuple(diagnostics),
        )

    diagnostics.extend(f"message defect: {type(defect).__name__}" for defect in msg.defects)

    try:
        headers = _parse_headers(msg, diagnostics)
    except Exception as e:
        diagnostics.append(f"header parsing failed: {e}")
        headers = {}

    body = _parse_body(msg, raw_bytes, diagnostics)

    return EmailMessage(
        **headers,
        **body,
        raw_size_bytes=len(raw_bytes),
        diagnostics=tuple(diagnostics),
    )


def message_key(email_message: EmailMessage, raw_bytes: bytes = b"") -> str:
    """Stable identifier: the Message-ID, else a digest of the raw bytes"""
    if email_message.message_id:
        return email_message.message_id.strip().strip("<>")
    return hashlib.sha256(raw_bytes).hexdigest()


def _split_mbox_stream(stream: BinaryIO) -> Iterator[bytes]:
    current: Optional[List[bytes]] = None
    preamble: List[bytes] = []
    for line in stream:
        if line.startswith(b"From "):
            if current is not None:
                yield b"".join(current)
            current = []
        elif current is None:
            preamble.append(line)
        else:
            current.append(line)

    if current is not None:
        yield b"".join(current)
    elif any(line.strip() for line in preamble):
        # A bare message without an envelope line
        yield b"".join(preamble)


def _read_file(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise CorpusError(f"Cannot read {path}: {e}") from e


def iterate_raw_messages(source: Union[str, Path, BinaryIO]) -> Iterator[bytes]:
    """Yield raw message bytes from a stream, an .eml file, an mbox file or an .eml directory"""
    if hasattr(source, "read"):
        yield from _split_mbox_stream(source)
        return

    path = Path(source)
    if path.is_dir():
        for eml in sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() == ".eml"):
            yield _read_file(eml)
        return

    if not path.is_file():
        raise CorpusError(f"Corpus source not found: {path}")

    if path.suffix.lower() == ".eml":
        yield _read_file(path)
        return

    try:
        box = mailbox.mbox(str(path), create=False)
        keys = list(box.iterkeys())
    except (OSError, mailbox.Error) as e:
        raise CorpusError(f"Cannot read mbox {path}: {e}") from e

    try:
        for key in keys:
            try:
                yield box.get_bytes(key)
            except Exception as e:
                logger.warning(f"Corrupt message {key} in {path}: {e}")
                yield b""
    finally:
        box.close()


def iterate_mbox(source: Union[str, Path, BinaryIO]) -> Iterator[EmailMessage]:
    """Yield parsed messages in file order"""
    for raw in iterate_raw_messages(source):
        yield parse_email(raw)
