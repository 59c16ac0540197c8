"""Cryptographic primitives; pure functions over value inputs, thread-safe."""

from .gf256 import MUL, add, div, inv, mul
from .merkle import (
    EmptyInputError,
    IndexOutOfRangeError,
    MerkleError,
    MerkleProof,
    MerkleRoot,
    merkle_prove,
    merkle_root,
    merkle_verify,
)
from .primitives import (
    TAG_COMMIT,
    TAG_LEAF,
    TAG_NODE,
    Commitment,
    KeyMaterial,
    SignatureKeyPair,
    commit,
    decrypt,
    encrypt,
    generate_keypair,
    keystream_xor,
    open_commitment,
    sha256,
    sign,
    verify,
)
from .shamir import (
    DuplicateXCoordinateError,
    EmptyDatumError,
    InconsistentSharesError,
    InsufficientSharesError,
    SecretShare,
    ShamirError,
    ThresholdOutOfRangeError,
    create_shares,
    reconstruct,
)

__all__ = [
    "MUL",
    "add",
    "div",
    "inv",
    "mul",
    "MerkleError",
    "EmptyInputError",
    "IndexOutOfRangeError",
    "MerkleProof",
    "MerkleRoot",
    "merkle_prove",
    "merkle_root",
    "merkle_verify",
    "TAG_COMMIT",
    "TAG_LEAF",
    "TAG_NODE",
    "Commitment",
    "KeyMaterial",
    "SignatureKeyPair",
    "commit",
    "decrypt",
    "encrypt",
    "generate_keypair",
    "keystream_xor",
    "open_commitment",
    "sha256",
    "sign",
    "verify",
    "ShamirError",
    "ThresholdOutOfRangeError",
    "EmptyDatumError",
    "InsufficientSharesError",
    "InconsistentSharesError",
    "DuplicateXCoordinateError",
    "SecretShare",
    "create_shares",
    "reconstruct",
]
