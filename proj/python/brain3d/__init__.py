"""EEG-to-3D pipeline orchestrator and evaluation harness."""

from brain3d._core import (
    Brain3dError,
    clip_score,
    default_config,
    encode_eeg,
    encode_image,
    export_cameras,
    fid,
    lpips,
    nway_topk,
    prompt_template,
    prompt_template_hash,
    read_eeg,
    read_ppm,
    render_views,
    run_ablation,
    run_pipeline,
    synth_dataset,
    train_align,
    write_eeg,
    write_ppm,
)

__all__ = [
    "Brain3dError",
    "clip_score",
    "default_config",
    "encode_eeg",
    "encode_image",
    "export_cameras",
    "fid",
    "lpips",
    "nway_topk",
    "prompt_template",
    "prompt_template_hash",
    "read_eeg",
    "read_ppm",
    "render_views",
    "run_ablation",
    "run_pipeline",
    "synth_dataset",
    "train_align",
    "write_eeg",
    "write_ppm",
]
