"""Synthetic scenes, warm-up training, pose refinement and fine-tuning variants."""
from texhand.synthtrain.ablation import DensityRow, density_ablation, format_table, weakly_monotone
from texhand.synthtrain.data import (
    SceneConfig,
    SceneSample,
    TextureConfig,
    color_randomize,
    gen_dataset,
    gen_scene,
    gen_texture,
    load_dataset,
    write_dataset,
)
from texhand.synthtrain.finetune import ToyHead, VariantResult, finetune_variants
from texhand.synthtrain.optim import Adam
from texhand.synthtrain.refine import RefineResult, refine_pose, refinement_experiment
from texhand.synthtrain.warmup import VARIANTS, TrainConfig, TrainingDiverged, WarmupResult, warmup_train
