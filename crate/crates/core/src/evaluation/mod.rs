//! Image quality metrics and the FLOPs profiler.

mod flops;
mod metrics;
mod report;

pub use flops::{
    attention_sweep, empirical_count_check, flops_attention, flops_model, measure_model, AttentionFlops,
    AttentionVariant, EmpiricalCheck, ModelFlops, ModuleFlops, SweepRow, EMPIRICAL_TOLERANCE,
};
pub use metrics::{eval_pair, psnr, ssim, MetricReport, PSNR_CAP, SSIM_RADIUS, SSIM_SIGMA};
pub use report::{
    attention_sweep_markdown, metrics_csv, metrics_markdown, model_flops_csv, model_flops_markdown,
};
