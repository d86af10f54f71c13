"""Per-message hybrid encryption with a detached sender signature.

Each message gets a fresh AES key and IV.  The key is wrapped with the
receiver's RSA public key (PKCS#1 v1.5) and the sender signs
SHA-256(ciphertext) with its RSA private key.  Verification always happens
before any private-key operation on the receiving side.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import itertools
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from Crypto.Cipher import AES
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa, utils

IV_SIZE = 16
TAG_SIZE = 16
_PKCS1_V15_OVERHEAD = 11

RSAPrivateKey = rsa.RSAPrivateKey
RSAPublicKey = rsa.RSAPublicKey


class CryptoError(Exception):
    pass


class UnsupportedParameters(CryptoError):
    pass


class KeyTooSmallForWrap(CryptoError):
    pass


class SignatureInvalid(CryptoError):
    pass


class KeyUnwrapFailed(CryptoError):
    pass


class AeadAuthFailed(CryptoError):
    pass


class MalformedSecureMessage(CryptoError):
    pass


_SYM_MODES = {"EAX": AES.MODE_EAX, "GCM": AES.MODE_GCM}


@dataclass(frozen=True)
class CryptoConfig:
    signature: str = "SHA256withRSA"
    asym_algorithm: str = "RSA"
    asym_cipher: str = "RSA/NONE/PKCS1Padding"
    asym_keysize: int = 2048
    sym_algorithm: str = "AES"
    sym_cipher: str = "AES/EAX/NoPadding"
    sym_keysize: int = 256

    def validate(self) -> None:
        if self.asym_keysize not in (2048, 3072, 4096):
            raise UnsupportedParameters(f"asymmetric key size {self.asym_keysize}")
        if self.sym_keysize not in (128, 192, 256):
            raise UnsupportedParameters(f"symmetric key size {self.sym_keysize}")
        if self.asym_algorithm.upper() != "RSA":
            raise UnsupportedParameters(f"asymmetric algorithm {self.asym_algorithm}")
        if self.sym_algorithm.upper() != "AES":
            raise UnsupportedParameters(f"symmetric algorithm {self.sym_algorithm}")
        if self.signature.upper() != "SHA256WITHRSA":
            raise UnsupportedParameters(f"signature scheme {self.signature}")
        if "PKCS1" not in self.asym_cipher.upper():
            raise UnsupportedParameters(f"asymmetric cipher {self.asym_cipher}")
        _ = self.sym_mode

    @property
    def sym_mode(self) -> str:
        parts = self.sym_cipher.upper().split("/")
        mode = parts[1] if len(parts) > 1 else ""
        if mode not in _SYM_MODES:
            raise UnsupportedParameters(f"symmetric cipher {self.sym_cipher}")
        return mode


@dataclass(frozen=True)
class KeyMaterial:
    """Keys one party holds.

    The sending (black) side needs ``sender_private`` and ``receiver_public``;
    the receiving (red) side needs ``receiver_private`` and ``sender_public``.
    """

    sender_public: RSAPublicKey
    receiver_public: RSAPublicKey
    sender_private: RSAPrivateKey | None = None
    receiver_private: RSAPrivateKey | None = None

    def for_sender(self) -> "KeyMaterial":
        return KeyMaterial(self.sender_public, self.receiver_public,
                           sender_private=self.sender_private)

    def for_receiver(self) -> "KeyMaterial":
        return KeyMaterial(self.sender_public, self.receiver_public,
                           receiver_private=self.receiver_private)


@dataclass(frozen=True)
class SecureMessage:
    index: int
    signature: bytes
    encrypted_key: bytes
    encrypted_data: bytes
    iv: bytes

    def to_json(self) -> bytes:
        b64 = lambda b: base64.b64encode(b).decode("ascii")  # noqa: E731
        doc = {"secureMessage": {
            "index": self.index,
            "signature": b64(self.signature),
            "encryptedKey": b64(self.encrypted_key),
            "encryptedData": b64(self.encrypted_data),
            "iv": b64(self.iv),
        }}
        return json.dumps(doc, separators=(",", ":")).encode("ascii")

    @classmethod
    def from_json(cls, data: bytes | str) -> "SecureMessage":
        try:
            inner = json.loads(data)["secureMessage"]
            index = inner["index"]
            if type(index) is not int or index < 0:
                raise MalformedSecureMessage(f"bad index {index!r}")
            fields = {k: _b64decode(inner[k])
                      for k in ("signature", "encryptedKey", "encryptedData", "iv")}
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MalformedSecureMessage):
                raise
            raise MalformedSecureMessage(str(exc)) from exc
        return cls(index, fields["signature"], fields["encryptedKey"],
                   fields["encryptedData"], fields["iv"])


def _b64decode(text: str) -> bytes:
    # encoders that wrap lines leave "\n" (or its escaped form) inside the value
    cleaned = "".join(text.replace("\\n", "").split())
    try:
        return base64.b64decode(cleaned, validate=True)
    except binascii.Error as exc:
        raise MalformedSecureMessage(f"bad base64: {exc}") from exc


class IndexCounter:
    """Monotone per-sender message index, starting at 1."""

    def __init__(self, start: int = 1):
        self._it = itertools.count(start)
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            return next(self._it)


def _new_rsa(bits: int) -> RSAPrivateKey:
    return rsa.generate_private_key(public_exponent=65537, key_size=bits)


def generate_keys(cfg: CryptoConfig | None = None) -> KeyMaterial:
    cfg = cfg or CryptoConfig()
    cfg.validate()
    sender, receiver = _new_rsa(cfg.asym_keysize), _new_rsa(cfg.asym_keysize)
    return KeyMaterial(sender.public_key(), receiver.public_key(),
                       sender_private=sender, receiver_private=receiver)


def _aead(cfg: CryptoConfig, key: bytes, iv: bytes):
    return AES.new(key, _SYM_MODES[cfg.sym_mode], nonce=iv, mac_len=TAG_SIZE)


def _sign_digest(key: RSAPrivateKey, data: bytes) -> bytes:
    digest = hashlib.sha256(data).digest()
    return key.sign(digest, padding.PKCS1v15(), utils.Prehashed(hashes.SHA256()))


def encrypt_and_sign(plaintext: bytes, index: int, keys: KeyMaterial,
                     cfg: CryptoConfig | None = None) -> SecureMessage:
    cfg = cfg or CryptoConfig()
    if keys.sender_private is None:
        raise CryptoError("sender private key required to sign")
    key_len = cfg.sym_keysize // 8
    modulus_bytes = keys.receiver_public.key_size // 8
    if key_len + _PKCS1_V15_OVERHEAD > modulus_bytes:
        raise KeyTooSmallForWrap(f"{key_len}-byte key does not fit {modulus_bytes}-byte modulus")

    sym_key = os.urandom(key_len)
    iv = os.urandom(IV_SIZE)
    ciphertext, tag = _aead(cfg, sym_key, iv).encrypt_and_digest(plaintext)
    encrypted_data = ciphertext + tag
    encrypted_key = keys.receiver_public.encrypt(sym_key, padding.PKCS1v15())
    signature = _sign_digest(keys.sender_private, encrypted_data)
    return SecureMessage(index, signature, encrypted_key, encrypted_data, iv)


def verify_and_decrypt(sm: SecureMessage, keys: KeyMaterial,
                       cfg: CryptoConfig | None = None) -> bytes:
    """Check the signature, unwrap the key, then decrypt and authenticate.

    Index ordering is the caller's concern; see :func:`check_index`.
    """
    cfg = cfg or CryptoConfig()
    if keys.receiver_private is None:
        raise CryptoError("receiver private key required to decrypt")

    digest = hashlib.sha256(sm.encrypted_data).digest()
    try:
        keys.sender_public.verify(sm.signature, digest, padding.PKCS1v15(),
                                  utils.Prehashed(hashes.SHA256()))
    except InvalidSignature as exc:
        raise SignatureInvalid(f"message {sm.index}: signature does not verify") from exc

    try:
        sym_key = keys.receiver_private.decrypt(sm.encrypted_key, padding.PKCS1v15())
    except ValueError as exc:
        raise KeyUnwrapFailed(f"message {sm.index}: {exc}") from exc
    if len(sym_key) != cfg.sym_keysize // 8:
        # implicit-rejection RSA returns a synthetic value instead of failing
        raise KeyUnwrapFailed(f"message {sm.index}: unwrapped key has {len(sym_key)} bytes")

    if len(sm.encrypted_data) < TAG_SIZE or len(sm.iv) != IV_SIZE:
        raise AeadAuthFailed(f"message {sm.index}: malformed ciphertext or iv")
    ciphertext, tag = sm.encrypted_data[:-TAG_SIZE], sm.encrypted_data[-TAG_SIZE:]
    try:
        return _aead(cfg, sym_key, sm.iv).decrypt_and_verify(ciphertext, tag)
    except ValueError as exc:
        raise AeadAuthFailed(f"message {sm.index}: authentication failed") from exc


def check_index(index: int, last_index: int | None) -> str | None:
    """Return a warning text when ``index`` does not follow ``last_index``."""
    if last_index is None or index == last_index + 1:
        return None
    if index <= last_index:
        return f"message index {index} not after previous {last_index} (replay or reorder)"
    return f"expected message index {last_index + 1}, got {index}"


# key files -----------------------------------------------------------------

def save_private_key(key: RSAPrivateKey, path: Path) -> None:
    path.write_bytes(key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption()))
    path.chmod(0o600)


def save_public_key(key: RSAPublicKey, path: Path) -> None:
    path.write_bytes(key.public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo))


def load_private_key(path: Path) -> RSAPrivateKey:
    key = serialization.load_pem_private_key(Path(path).read_bytes(), password=None)
    if not isinstance(key, rsa.RSAPrivateKey):
        raise UnsupportedParameters(f"{path}: not an RSA private key")
    return key


def load_public_key(path: Path) -> RSAPublicKey:
    key = serialization.load_pem_public_key(Path(path).read_bytes())
    if not isinstance(key, rsa.RSAPublicKey):
        raise UnsupportedParameters(f"{path}: not an RSA public key")
    return key


KEY_FILES = {
    "black_private": "black.key",
    "black_public": "black.pub",
    "red_private": "red.key",
    "red_public": "red.pub",
}


def write_key_dir(keys: KeyMaterial, out_dir: Path, force: bool = False) -> list[Path]:
    """Write black (sender) and red (receiver) keypairs into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / fname for name, fname in KEY_FILES.items()}
    existing = [p for p in paths.values() if p.exists()]
    if existing and not force:
        raise FileExistsError(f"refusing to overwrite {', '.join(map(str, existing))}")
    save_private_key(keys.sender_private, paths["black_private"])
    save_public_key(keys.sender_public, paths["black_public"])
    save_private_key(keys.receiver_private, paths["red_private"])
    save_public_key(keys.receiver_public, paths["red_public"])
    return list(paths.values())


def load_key_dir(key_dir: Path, side: str) -> KeyMaterial:
    """Load the keys one side needs: ``side`` is ``"black"`` or ``"red"``."""
    key_dir = Path(key_dir)
    sender_public = load_public_key(key_dir / KEY_FILES["black_public"])
    receiver_public = load_public_key(key_dir / KEY_FILES["red_public"])
    if side == "black":
        return KeyMaterial(sender_public, receiver_public,
                           sender_private=load_private_key(key_dir / KEY_FILES["black_private"]))
    if side == "red":
        return KeyMaterial(sender_public, receiver_public,
                           receiver_private=load_private_key(key_dir / KEY_FILES["red_private"]))
    raise ValueError(f"unknown side {side!r}")
