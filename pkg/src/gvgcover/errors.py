"""Exception types shared across the package."""


class GvgCoverError(Exception):
    """Base class for all package errors."""


class DegeneratePoint(GvgCoverError):
    """Query point lies on (or too close to) an obstacle boundary."""


class OutsideFreeSpace(GvgCoverError):
    """Query point is not in the free space."""


class ResolutionTooCoarse(GvgCoverError):
    """Extraction grid cannot resolve the narrowest corridor."""


class DisconnectedFreeSpace(GvgCoverError):
    """Free space splits into more than one connected component."""


class NonpositiveMass(GvgCoverError):
    """A cell integrated to zero or negative mass."""


class OutsideTube(GvgCoverError):
    """Point projects outside the lateral clearance of an edge."""


class OutOfRange(GvgCoverError):
    """Tube coordinate outside the edge's valid (s, r) range."""


class FoldedTube(GvgCoverError):
    """Jacobian 1 - r*kappa(s) is non-positive at the requested point."""


class DisconnectedGraph(GvgCoverError):
    """Cell adjacency graph is not connected."""


class Eq3Violated(GvgCoverError):
    """Configuration does not satisfy the floor/ceil balance condition."""


class EmptyCell(GvgCoverError):
    """A cell holds no robots where at least one is required."""


class InfeasibleK(GvgCoverError):
    """Fewer robots than cells: every cell must hold at least one robot."""


class ScenarioError(GvgCoverError):
    """Scenario file failed validation."""
