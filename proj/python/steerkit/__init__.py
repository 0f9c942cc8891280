"""Hypernetwork-generated activation steering on a synthetic micro-world.

Thin Python surface over the C++ core: the micro-world generators and
checkers, the tiny base LM, the hypernetwork variants, baselines, the judge
metric, and the analysis utilities.
"""

from ._core import (  # noqa: F401
    ConceptSpec,
    HypernetConfig,
    Hypernet,
    LmConfig,
    SteeringTask,
    TinyLm,
    concept_check,
    concept_count,
    cosine_similarity_matrix,
    default_config,
    diffmean,
    fit_flops_curve,
    gen_corpus,
    generation_prompt,
    harmonic_mean,
    make_task,
    parse_config,
    pca,
    prompt_steer,
    reft_latent,
    run_command,
    solve,
    task_check,
    tflops_per_concept,
    train_e2e,
    vocab,
)

__all__ = [
    "ConceptSpec",
    "HypernetConfig",
    "Hypernet",
    "LmConfig",
    "SteeringTask",
    "TinyLm",
    "concept_check",
    "concept_count",
    "cosine_similarity_matrix",
    "default_config",
    "diffmean",
    "fit_flops_curve",
    "gen_corpus",
    "generation_prompt",
    "harmonic_mean",
    "make_task",
    "parse_config",
    "pca",
    "prompt_steer",
    "reft_latent",
    "run_command",
    "solve",
    "task_check",
    "tflops_per_concept",
    "train_e2e",
    "vocab",
]
