"""
Array encoding of a DFS-ordered Galton-Watson forest with its spine.
"""

import logging
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

FOREST_MAGIC = b"BRWF"
FOREST_VERSION = 1
_HEADER = struct.Struct("<4sHHII")  # magic, version, d placeholder, vertices, subtrees


@dataclass(eq=False)
class Forest:
    """
    Vertices u_0, u_1, ... in depth-first order.

    parent[i] is the DFS index of the parent of u_i (-1 for the root),
    depth[i] the graph distance to the root, spine_index[i] the spine
    coordinate of the subtree root above u_i, and subtree_offsets[m] the DFS
    index at which block T_m starts.  subtree_offsets has num_subtrees + 1
    entries; the last one is the DFS index of the first vertex after the
    completed blocks (the next spine vertex when it is present).

    offspring[i] is the number of children of u_i inside its block, or -1
    for the trailing spine vertex whose block was never sampled.  In a
    prefix forest (complete=False) the vertices after subtree_offsets[-1]
    form an open block that is cut off at the requested vertex count.
    """
    parent: np.ndarray
    depth: np.ndarray
    spine_index: np.ndarray
    is_spine: np.ndarray
    subtree_offsets: np.ndarray
    offspring: np.ndarray
    complete: bool = True
    _depth_rmq: Optional[object] = field(default=None, repr=False)

    @property
    def num_vertices(self) -> int:
        return int(self.parent.size)

    @property
    def num_subtrees(self) -> int:
        return int(self.subtree_offsets.size - 1)

    @property
    def heights(self) -> np.ndarray:
        """Height of every vertex within its own subtree"""
        return self.depth - self.spine_index

    def spine_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.is_spine)

    def subtree_slice(self, m: int) -> slice:
        return slice(int(self.subtree_offsets[m]), int(self.subtree_offsets[m + 1]))

    def subtree_sizes(self) -> np.ndarray:
        return np.diff(self.subtree_offsets)

    def lukasiewicz_path(self) -> np.ndarray:
        """
        Y_0 = 0, Y_k = sum_{i<k} (offspring_i - 1) over the completed blocks.

        The returned array has subtree_offsets[-1] + 1 entries.
        """
        counts = self.offspring[: int(self.subtree_offsets[-1])].astype(np.int64)
        path = np.zeros(counts.size + 1, dtype=np.int64)
        np.cumsum(counts - 1, out=path[1:])
        return path

    def nbytes(self) -> int:
        return sum(a.nbytes for a in (self.parent, self.depth, self.spine_index,
                                      self.is_spine, self.subtree_offsets, self.offspring))


def forest_array_bytes(num_vertices: int) -> int:
    """Bytes needed by the arrays of a forest with num_vertices vertices"""
    # parent, depth, spine_index, offspring as int32 plus is_spine and offsets
    return num_vertices * (4 * 4 + 1 + 8)


def save_forest(forest: Forest, path: str):
    """
    Write the flat little-endian record: 16-byte header then the arrays.

    Header: magic "BRWF", uint16 version, uint16 dimension placeholder (0),
    uint32 vertex count, uint32 subtree count.
    """
    header = _HEADER.pack(FOREST_MAGIC, FOREST_VERSION, 0, forest.num_vertices, forest.num_subtrees)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.uint8(1 if forest.complete else 0).tobytes())
        for array, dtype in ((forest.parent, "<i4"), (forest.depth, "<i4"),
                             (forest.spine_index, "<i4"), (forest.offspring, "<i4"),
                             (forest.is_spine, "u1"), (forest.subtree_offsets, "<i8")):
            f.write(np.ascontiguousarray(array, dtype=dtype).tobytes())
    logger.debug(f"Saved forest with {forest.num_vertices} vertices to {path}")


def load_forest(path: str) -> Forest:
    """Read a record written by save_forest"""
    with open(path, "rb") as f:
        data = f.read()

    magic, version, _, n, m = _HEADER.unpack_from(data, 0)
    if magic != FOREST_MAGIC:
        raise ValueError(f"{path} is not a forest record (magic {magic!r})")
    if version != FOREST_VERSION:
        raise ValueError(f"{path}: unsupported forest record version {version}")

    offset = _HEADER.size
    complete = bool(data[offset])
    offset += 1

    def take(dtype, count):
        nonlocal offset
        array = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        offset += array.nbytes
        return array

    parent = take("<i4", n).astype(np.int32)
    depth = take("<i4", n).astype(np.int32)
    spine_index = take("<i4", n).astype(np.int32)
    offspring = take("<i4", n).astype(np.int32)
    is_spine = take("u1", n).astype(bool)
    offsets = take("<i8", m + 1).astype(np.int64)
    return Forest(parent=parent, depth=depth, spine_index=spine_index, is_spine=is_spine,
                  subtree_offsets=offsets, offspring=offspring, complete=complete)
