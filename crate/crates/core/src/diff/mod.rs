//! Differentiable stamp rendering and the stroke optimizer.

mod check;
mod optim;
mod params;
mod render;

pub use check::{
    gradient_error_ratio, gradient_suite, random_gaussian_scene, GradCheckConfig, GradCheckReport, GradMismatch,
};
pub use optim::{adam_step, cosine_lr, optimize_strokes, AdamConfig, AdamState, LossTrace, OptimConfig, StopReason};
pub use params::{Param, ParamBounds, ParamLayout, ParamVector, Slot};
pub use render::{
    finite_diff_grad, grad_loss, loss_and_grad, loss_and_grad_stamps, loss_mse, loss_of, render_diff,
    render_stamps, Compositing, RenderSettings, Scene, StampGrad,
};
