"""Merkle trees over ordered byte chunks with domain-tagged hashing.

Leaves are H(tag_leaf || chunk) and interior nodes H(tag_node || left ||
right). Levels with an odd node count duplicate their last node, so proof
length is ceil(log2(leaf_count)) for every leaf.
"""

from __future__ import annotations

from dataclasses import dataclass

from .primitives import TAG_LEAF, TAG_NODE, sha256


class MerkleError(Exception):
    pass


class EmptyInputError(MerkleError):
    pass


class IndexOutOfRangeError(MerkleError):
    pass


@dataclass(frozen=True)
class MerkleRoot:
    digest: bytes
    leaf_count: int


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    siblings: tuple[bytes, ...]
    leaf_count: int


def _levels(chunks: list[bytes]) -> list[list[bytes]]:
    level = [sha256(TAG_LEAF, c) for c in chunks]
    levels = [level]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
            levels[-1] = level
        level = [
            sha256(TAG_NODE, level[i], level[i + 1]) for i in range(0, len(level), 2)
        ]
        levels.append(level)
    return levels


def merkle_root(chunks: list[bytes]) -> MerkleRoot:
    if not chunks:
        raise EmptyInputError("cannot build a tree over zero chunks")
    return MerkleRoot(digest=_levels(chunks)[-1][0], leaf_count=len(chunks))


def merkle_prove(chunks: list[bytes], leaf_index: int) -> MerkleProof:
    if not chunks:
        raise EmptyInputError("cannot build a tree over zero chunks")
    if not 0 <= leaf_index < len(chunks):
        raise IndexOutOfRangeError(f"leaf {leaf_index} of {len(chunks)}")
    siblings = []
    index = leaf_index
    for level in _levels(chunks)[:-1]:
        siblings.append(level[index ^ 1])
        index //= 2
    return MerkleProof(
        leaf_index=leaf_index, siblings=tuple(siblings), leaf_count=len(chunks)
    )


def merkle_verify(root: MerkleRoot, chunk: bytes, proof: MerkleProof) -> bool:
    if proof.leaf_count != root.leaf_count:
        return False
    if not 0 <= proof.leaf_index < proof.leaf_count:
        return False
    node = sha256(TAG_LEAF, chunk)
    index = proof.leaf_index
    for sibling in proof.siblings:
        if index % 2:
            node = sha256(TAG_NODE, sibling, node)
        else:
            node = sha256(TAG_NODE, node, sibling)
        index //= 2
    return index == 0 and node == root.digest
