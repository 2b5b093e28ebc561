"""Multi-irrep co-learning on G-manifolds: filtered graph connection
matrices and rotation-invariant affinities for SO(2) and SO(3)."""

__version__ = "0.1.0"

from .groups import GroupElement, GroupId, clebsch_gordan, compose, haar_sample, inverse, irrep  # noqa: E402
from .graph import AlignmentGraph, build_weight_matrix, degrees, load_graph, normalized_hermitian, save_graph  # noqa: E402
from .spectral import (  # noqa: E402
    EigenPairs,
    EquivariantEmbedding,
    SpectralFilter,
    build_embedding,
    filtered_block,
    graph_embeddings,
    normalize_embedding,
    top_eigs,
)
from .affinity import (  # noqa: E402
    AffinityMatrix,
    AffinityMethod,
    affinity_matrix,
    bispectrum_affinity,
    optimal_alignment_affinity,
    power_spectrum_affinity,
    vdm_affinity,
)
