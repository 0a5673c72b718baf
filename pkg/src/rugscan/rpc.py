"""JSON-RPC ``eth_getCode`` client with retries and an on-disk cache.

Cache layout under the cache directory::

    endpoints/<sha256(url)[:16]>.json   {"url": ..., "chain_id": ...}
    code/<chain id>/<address>.json      {"address", "chain_id", "code", "fetched_at", "rpc_url"}

The endpoint record lets a cached address be served while the node is
unreachable. Entries are written to a temporary file and renamed into
place, so concurrent readers never observe a partial entry.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import re
import tempfile
import threading
import time
from typing import Any

import requests

from .config import RpcPolicy
from .errors import EmptyCodeError, InvalidInputError, RpcError
from .evm import Bytecode, InvalidHexError, parse_hex, strip_metadata

log = logging.getLogger(__name__)

RPC_URL_ENV = "RUGSCAN_RPC_URL"
CACHE_DIR_ENV = "RUGSCAN_CACHE_DIR"
ADDRESS_RE = re.compile(r"^0x[0-9a-fA-F]{40}$")
_EXCERPT = 200

_ids = itertools.count(1)
_endpoint_locks: dict[str, threading.Lock] = {}
_endpoint_last: dict[str, float] = {}
_registry_lock = threading.Lock()


def is_address(text: str) -> bool:
    return bool(ADDRESS_RE.match(text))


def default_cache_dir() -> str:
    return os.environ.get(CACHE_DIR_ENV) or os.path.join(
        os.path.expanduser("~"), ".cache", "rugscan"
    )


class _Transient(Exception):
    pass


def _atomic_write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path: str) -> dict | None:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None


class CodeCache:
    def __init__(self, directory: str):
        self.directory = directory

    def _endpoint_path(self, url: str) -> str:
        digest = hashlib.sha256(url.encode()).hexdigest()[:16]
        return os.path.join(self.directory, "endpoints", f"{digest}.json")

    def _code_path(self, chain_id: int, address: str) -> str:
        return os.path.join(self.directory, "code", str(chain_id), f"{address.lower()}.json")

    def chain_id(self, url: str) -> int | None:
        entry = _read_json(self._endpoint_path(url))
        return entry.get("chain_id") if entry else None

    def remember_chain(self, url: str, chain_id: int) -> None:
        _atomic_write_json(self._endpoint_path(url), {"url": url, "chain_id": chain_id})

    def get(self, chain_id: int, address: str) -> str | None:
        entry = _read_json(self._code_path(chain_id, address))
        return entry.get("code") if entry else None

    def put(self, chain_id: int, address: str, code: str, url: str) -> None:
        _atomic_write_json(
            self._code_path(chain_id, address),
            {
                "address": address.lower(),
                "chain_id": chain_id,
                "code": code,
                "fetched_at": int(time.time()),
                "rpc_url": url,
            },
        )


class RpcClient:
    def __init__(
        self,
        url: str,
        policy: RpcPolicy | None = None,
        cache_dir: str | None = None,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.policy = policy or RpcPolicy()
        self.cache = CodeCache(cache_dir) if cache_dir else None
        self.session = session or requests.Session()

    def _throttle(self) -> None:
        with _registry_lock:
            lock = _endpoint_locks.setdefault(self.url, threading.Lock())
        with lock:
            wait = _endpoint_last.get(self.url, 0.0) + self.policy.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            _endpoint_last[self.url] = time.monotonic()

    def _once(self, method: str, params: list[Any]) -> Any:
        payload = {"jsonrpc": "2.0", "id": next(_ids), "method": method, "params": params}
        self._throttle()
        try:
            resp = self.session.post(self.url, json=payload, timeout=self.policy.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise _Transient(str(exc)) from None
        except requests.RequestException as exc:
            raise RpcError(f"{method}: {exc}") from None
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _Transient(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise RpcError(f"{method}: HTTP {resp.status_code}: {resp.text[:_EXCERPT]}")
        try:
            body = resp.json()
        except ValueError:
            raise RpcError(f"{method}: malformed JSON response: {resp.text[:_EXCERPT]!r}") from None
        if not isinstance(body, dict):
            raise RpcError(f"{method}: unexpected response: {str(body)[:_EXCERPT]!r}")
        if body.get("error") is not None:
            err = body["error"]
            msg = err.get("message") if isinstance(err, dict) else err
            raise RpcError(f"{method}: node returned error: {str(msg)[:_EXCERPT]}")
        if "result" not in body:
            raise RpcError(f"{method}: response without result: {json.dumps(body)[:_EXCERPT]}")
        return body["result"]

    def call(self, method: str, params: list[Any]) -> Any:
        delay = self.policy.backoff
        for attempt in range(self.policy.retries + 1):
            try:
                return self._once(method, params)
            except _Transient as exc:
                if attempt == self.policy.retries:
                    raise RpcError(f"{method}: giving up after {attempt + 1} attempts: {exc}") from None
                log.warning("%s failed (%s); retrying in %.2fs", method, exc, delay)
                time.sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    def chain_id(self) -> int:
        cached = self.cache.chain_id(self.url) if self.cache else None
        if cached is not None:
            return cached
        result = self.call("eth_chainId", [])
        try:
            chain_id = int(result, 16)
        except (TypeError, ValueError):
            raise RpcError(f"eth_chainId: bad result {str(result)[:_EXCERPT]!r}") from None
        if self.cache:
            self.cache.remember_chain(self.url, chain_id)
        return chain_id

    def get_code(self, address: str) -> str:
        if not is_address(address):
            raise InvalidInputError(f"not an address: {address!r}")
        chain_id = self.chain_id() if self.cache else None
        if self.cache and chain_id is not None:
            hit = self.cache.get(chain_id, address)
            if hit is not None:
                log.debug("cache hit for %s on chain %d", address, chain_id)
                return hit
        code = self.call("eth_getCode", [address, "latest"])
        if not isinstance(code, str):
            raise RpcError(f"eth_getCode: bad result {str(code)[:_EXCERPT]!r}")
        if self.cache and chain_id is not None:
            self.cache.put(chain_id, address, code, self.url)
        return code


def fetch_code(
    address: str,
    rpc_url: str | None = None,
    policy: RpcPolicy | None = None,
    cache_dir: str | None = None,
) -> Bytecode:
    """Runtime bytecode at ``address``, stripped of its metadata trailer."""
    rpc_url = rpc_url or os.environ.get(RPC_URL_ENV)
    if not rpc_url:
        raise RpcError(f"no RPC endpoint configured (pass --rpc-url or set {RPC_URL_ENV})")
    text = RpcClient(rpc_url, policy, cache_dir).get_code(address)
    try:
        raw = parse_hex(text)
    except InvalidHexError:
        raise RpcError(f"eth_getCode: result is not hex: {text[:_EXCERPT]!r}") from None
    if not raw:
        raise EmptyCodeError(f"{address} has no code (externally owned account?)")
    return strip_metadata(raw)
