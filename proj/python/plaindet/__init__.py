"""Multi-dataset toy object detector: calibrated frozen text-embedding
classifiers, class-aware query composition, and hardness-weighted dataset
sampling, implemented in C++ with thin bindings."""

try:
    # installed layout: the extension lives inside the package
    from ._plaindet import (  # noqa: F401
        PlainDetError,
        average_precision,
        build_prompts,
        calibrate,
        evaluate,
        generate_datasets,
        giou,
        hungarian_match,
        render_image,
        sampler_weights,
        similarity_matrix,
        synthetic_embeddings,
        train,
        zeroshot,
    )
except ImportError:  # build-tree layout: extension on sys.path
    from _plaindet import (  # noqa: F401
        PlainDetError,
        average_precision,
        build_prompts,
        calibrate,
        evaluate,
        generate_datasets,
        giou,
        hungarian_match,
        render_image,
        sampler_weights,
        similarity_matrix,
        synthetic_embeddings,
        train,
        zeroshot,
    )

__all__ = [
    "PlainDetError",
    "average_precision",
    "build_prompts",
    "calibrate",
    "evaluate",
    "generate_datasets",
    "giou",
    "hungarian_match",
    "render_image",
    "sampler_weights",
    "similarity_matrix",
    "synthetic_embeddings",
    "train",
    "zeroshot",
]
